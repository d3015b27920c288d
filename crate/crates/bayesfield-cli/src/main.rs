//! Command-line pipeline around the `bayesfield` library: fit posterior
//! ensembles, predict at new space-time indices, score held-out data,
//! simulate synthetic fields, and export variogram surfaces.
//!
//! Every command is deterministic given its configuration and seed. All
//! tables are header-bearing delimited text, and every file write is
//! atomic (temp file + rename). Exit codes: 0 on success, 2 for input
//! errors (unreadable files, malformed tables or configurations), 3 for
//! state errors (checkpoint/configuration mismatches), 4 for numerical
//! failures.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use bayesfield::config::CHECKPOINT_FORMAT_VERSION;
use bayesfield::data::DEFAULT_HOLDOUT_FRACTION;
use bayesfield::{
    atomic_write, build_features, empirical_variogram, encode, fit, format_timestamp,
    inferred_variogram, load_checkpoint, load_query_table, load_table, make_splits,
    parse_timestamp, predict_batch, save_checkpoint, save_table, step_of,
    uniform_locations_in_hull, Dataset, Error, FeatureMatrix, Manifest, PredictOptions,
    PredictionTable, RawRow, RawTable, Result, RunConfig, ScoreReport, SpaceTimeIndex,
};

#[derive(Parser)]
#[command(
    name = "bayesfield",
    version,
    about = "Spatiotemporal field modeling: train, predict, evaluate, simulate, variogram"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a posterior ensemble and write a checkpoint directory.
    Train(TrainArgs),
    /// Predict means and quantiles at the indices in a query table.
    Predict(PredictArgs),
    /// Score a checkpoint against held-out observations.
    Evaluate(EvaluateArgs),
    /// Draw a synthetic field from the prior and write it as a table.
    Simulate(SimulateArgs),
    /// Export an empirical or inferred variogram surface.
    Variogram(VariogramArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Run configuration file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Observation table.
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint directory to write; defaults to [paths].checkpoint_dir
    /// from the configuration, then to ./checkpoint.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Override the training seed from the configuration.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct PredictArgs {
    /// Checkpoint directory written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Query table naming prediction indices; its value column is optional.
    #[arg(long)]
    data: PathBuf,
    /// Output table path (defaults to stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Quantile levels, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [0.025, 0.5, 0.975])]
    quantiles: Vec<f64>,
    /// Posterior draws per prediction batch.
    #[arg(long, default_value_t = 64)]
    draws: usize,
    /// Sampling seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Checkpoint directory written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Observation table with held-out values.
    #[arg(long)]
    data: PathBuf,
    /// Score only the held-out tails of this many location splits.
    #[arg(long)]
    splits: Option<usize>,
    /// Restrict scoring to one split (0-based).
    #[arg(long, requires = "splits")]
    split_index: Option<usize>,
    /// Split and sampling seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Posterior draws per prediction batch.
    #[arg(long, default_value_t = 64)]
    draws: usize,
    /// Also write the scores here as delimited text.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Run configuration file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output table path.
    #[arg(long)]
    out: PathBuf,
    /// Number of synthetic locations.
    #[arg(long)]
    locations: usize,
    /// Number of consecutive time steps.
    #[arg(long)]
    times: usize,
    /// Seed for locations, parameters, and noise.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Timestamp of the first step.
    #[arg(long, default_value = "2020-01-01")]
    origin: String,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    /// Estimate from the observations themselves.
    Empirical,
    /// Simulate from a fitted checkpoint and estimate from the draws.
    Inferred,
}

#[derive(Args)]
struct VariogramArgs {
    /// Run configuration file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Observation table.
    #[arg(long)]
    data: PathBuf,
    /// Surface source.
    #[arg(long, value_enum, default_value_t = Mode::Empirical)]
    mode: Mode,
    /// Checkpoint directory (required in inferred mode).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Output surface path (defaults to stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Location sampling and posterior draw seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Posterior draws for the inferred surface.
    #[arg(long, default_value_t = 64)]
    draws: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(match err {
                Error::Numerical(_) => 4,
                Error::Incompatible(_) => 3,
                _ => 2,
            })
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Variogram(args) => cmd_variogram(args),
    }
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let started = Instant::now();
    let mut config = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.train.seed = Some(seed);
    }
    let table = load_table(&args.data, &config.data.schema)?;
    let dataset = encode(&table, config.data.frequency)?;
    let mut spec = config.feature_spec()?;
    spec.resolve_bounds(dataset.locations.iter().map(|l| l.coords.as_slice()))?;
    let network = config.network_config()?;
    let train = config.train_config(dataset.len())?;

    let rows = dataset
        .indices()
        .iter()
        .map(|idx| build_features(&spec, idx))
        .collect::<Result<Vec<_>>>()?;
    let feats = FeatureMatrix::from_rows(rows)?;
    println!(
        "fitting {:?} ensemble (M={}) on {} records with {} covariates",
        train.method,
        train.ensemble_size,
        dataset.len(),
        network.num_features
    );
    let result = fit(&network, &feats, &dataset.values(), &train)?;
    for warning in &result.warnings {
        eprintln!("warning: {warning}");
    }

    let dir = args
        .checkpoint
        .or_else(|| config.paths.checkpoint_dir.clone())
        .unwrap_or_else(|| PathBuf::from("checkpoint"));
    let manifest = Manifest {
        format_version: CHECKPOINT_FORMAT_VERSION,
        method: train.method,
        config_hash: result.ensemble.config_hash.clone(),
        seed: train.seed,
        network,
        features: spec,
        train: train.clone(),
        schema: config.data.schema.clone(),
        frequency: config.data.frequency,
        origin: dataset.origin,
        members: Vec::new(),
    };
    let written = save_checkpoint(&dir, &result.ensemble, &manifest)?;

    let mut log = String::new();
    for (i, curve) in result.curves.iter().enumerate() {
        let (step, objective) = curve.last().copied().unwrap_or((0, f64::NAN));
        let _ = writeln!(log, "member {i:03}: {step} steps, final objective {objective}");
    }
    atomic_write(&dir.join("training.log"), log.as_bytes())?;

    println!(
        "checkpoint written to {} ({} members) in {:.2?}",
        dir.display(),
        written.members.len(),
        started.elapsed()
    );
    Ok(())
}

fn cmd_predict(args: PredictArgs) -> Result<()> {
    let (ensemble, manifest) = load_checkpoint(&args.checkpoint)?;
    let table = load_query_table(&args.data, &manifest.schema)?;
    let mut indices = Vec::with_capacity(table.rows.len());
    for row in &table.rows {
        let step = step_of(manifest.origin, row.timestamp, manifest.frequency)?;
        indices.push(SpaceTimeIndex::new(row.coords.clone(), step as f64));
    }
    let opts = PredictOptions {
        n_draws: args.draws,
        seed: args.seed,
    };
    let predictions = predict_batch(
        &ensemble,
        &manifest.network,
        &manifest.features,
        &indices,
        &args.quantiles,
        &opts,
    )?;
    let bytes = render_predictions(&table, &predictions, &manifest)?;
    write_output(args.out.as_deref(), &bytes)
}

/// Renders prediction rows next to the query identifiers that produced
/// them, with one `q<level>` column per requested quantile.
fn render_predictions(
    queries: &RawTable,
    predictions: &PredictionTable,
    manifest: &Manifest,
) -> Result<Vec<u8>> {
    let schema = &manifest.schema;
    let mut writer = csv::WriterBuilder::new()
        .delimiter(schema.delimiter as u8)
        .from_writer(Vec::new());
    let as_io = |e: csv::Error| Error::Io {
        path: PathBuf::from("prediction table"),
        source: std::io::Error::other(e),
    };

    let mut header = vec![schema.location.clone()];
    header.extend(schema.coords.iter().cloned());
    header.push(schema.timestamp.clone());
    header.push("mean".to_string());
    for alpha in &predictions.alphas {
        header.push(format!("q{alpha}"));
    }
    writer.write_record(&header).map_err(as_io)?;

    for (query, row) in queries.rows.iter().zip(&predictions.rows) {
        let mut fields = vec![query.location.clone()];
        fields.extend(query.coords.iter().map(|c| c.to_string()));
        fields.push(format_timestamp(query.timestamp));
        fields.push(row.mean.to_string());
        fields.extend(row.quantiles.iter().map(|q| q.to_string()));
        writer.write_record(&fields).map_err(as_io)?;
    }
    writer.into_inner().map_err(|e| Error::Io {
        path: PathBuf::from("prediction table"),
        source: std::io::Error::other(e),
    })
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let (ensemble, manifest) = load_checkpoint(&args.checkpoint)?;
    let table = load_table(&args.data, &manifest.schema)?;
    let dataset = encode(&table, manifest.frequency)?;
    // The data file's grid may start later than the checkpoint's; rebase
    // its steps onto the grid the ensemble was trained on.
    let offset = step_of(manifest.origin, dataset.origin, manifest.frequency)? as f64;
    let opts = PredictOptions {
        n_draws: args.draws,
        seed: args.seed,
    };
    let score = |subset: &Dataset| -> Result<ScoreReport> {
        let mut indices = subset.indices();
        for idx in &mut indices {
            idx.time += offset;
        }
        let predictions = predict_batch(
            &ensemble,
            &manifest.network,
            &manifest.features,
            &indices,
            &[0.025, 0.5, 0.975],
            &opts,
        )?;
        let yhat: Vec<f64> = predictions.rows.iter().map(|r| r.quantiles[1]).collect();
        let lower: Vec<f64> = predictions.rows.iter().map(|r| r.quantiles[0]).collect();
        let upper: Vec<f64> = predictions.rows.iter().map(|r| r.quantiles[2]).collect();
        ScoreReport::compute(&subset.values(), &yhat, &lower, &upper, 0.05)
    };

    let Some(n_splits) = args.splits else {
        let report = score(&dataset)?;
        println!("{report}");
        if let Some(out) = &args.out {
            let text = format!("{}\n{}\n", ScoreReport::DELIMITED_HEADER, report.to_delimited());
            atomic_write(out, text.as_bytes())?;
        }
        return Ok(());
    };

    let outcome = make_splits(&dataset, n_splits, DEFAULT_HOLDOUT_FRACTION, args.seed)?;
    for warning in &outcome.warnings {
        eprintln!("warning: {warning}");
    }
    let chosen: Vec<usize> = match args.split_index {
        Some(i) if i >= n_splits => {
            return Err(Error::Invalid {
                what: "--split-index".to_string(),
                reason: format!("{i} is out of range for {n_splits} splits"),
            })
        }
        Some(i) => vec![i],
        None => (0..n_splits).collect(),
    };

    let mut text = format!("split,{}\n", ScoreReport::DELIMITED_HEADER);
    let mut reports = Vec::with_capacity(chosen.len());
    for &i in &chosen {
        let (_, test) = &outcome.pairs[i];
        let report = score(test)?;
        println!("split {i}:\n{report}");
        let _ = writeln!(text, "{i},{}", report.to_delimited());
        reports.push(report);
    }
    if reports.len() > 1 {
        let k = reports.len() as f64;
        let mean = ScoreReport {
            rmse: reports.iter().map(|r| r.rmse).sum::<f64>() / k,
            mae: reports.iter().map(|r| r.mae).sum::<f64>() / k,
            mis: reports.iter().map(|r| r.mis).sum::<f64>() / k,
            n: reports.iter().map(|r| r.n).sum(),
            alpha: 0.05,
        };
        println!("mean over {} splits:\n{mean}", reports.len());
        let _ = writeln!(text, "mean,{}", mean.to_delimited());
    }
    if let Some(out) = &args.out {
        atomic_write(out, text.as_bytes())?;
    }
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let config = RunConfig::load(&args.config)?;
    let mut spec = config.feature_spec()?;
    let network = config.network_config()?;
    let origin = parse_timestamp(&args.origin)?;
    if args.locations == 0 || args.times == 0 {
        return Err(Error::EmptyInput("simulation grid".to_string()));
    }

    let dims = config.data.schema.coords.len();
    let bounds = spec
        .spatial_bounds
        .clone()
        .unwrap_or_else(|| vec![(0.0, 1.0); dims]);
    for &(lo, hi) in &bounds {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Invalid {
                what: "features.spatial_bounds".to_string(),
                reason: format!("({lo}, {hi}) is not a usable sampling range"),
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let coords: Vec<Vec<f64>> = (0..args.locations)
        .map(|_| bounds.iter().map(|&(lo, hi)| rng.gen_range(lo..hi)).collect())
        .collect();
    spec.resolve_bounds(coords.iter().map(|c| c.as_slice()))?;

    let mut indices = Vec::with_capacity(args.locations * args.times);
    for c in &coords {
        for t in 0..args.times {
            indices.push(SpaceTimeIndex::new(c.clone(), t as f64));
        }
    }
    let values = bayesfield::simulate_field(&network, &spec, &indices, args.seed)?;

    let grid = Dataset {
        frequency: config.data.frequency,
        origin,
        locations: Vec::new(),
        records: Vec::new(),
    };
    let mut rows = Vec::with_capacity(indices.len());
    for (k, idx) in indices.iter().enumerate() {
        rows.push(RawRow {
            location: format!("loc_{:03}", k / args.times),
            coords: idx.coords.clone(),
            timestamp: grid.timestamp_at_step(idx.time)?,
            value: Some(values[k]),
        });
    }
    save_table(&RawTable { rows }, &args.out, &config.data.schema)?;
    println!(
        "wrote {} rows ({} locations x {} steps) to {}",
        indices.len(),
        args.locations,
        args.times,
        args.out.display()
    );
    Ok(())
}

fn cmd_variogram(args: VariogramArgs) -> Result<()> {
    let config = RunConfig::load(&args.config)?;
    let table = load_table(&args.data, &config.data.schema)?;
    let dataset = encode(&table, config.data.frequency)?;
    let spec = config.variogram_spec();
    let surface = match args.mode {
        Mode::Empirical => empirical_variogram(&dataset, &spec)?,
        Mode::Inferred => {
            let dir = args.checkpoint.as_ref().ok_or_else(|| {
                Error::Incompatible(
                    "inferred mode needs a fitted checkpoint; pass --checkpoint".to_string(),
                )
            })?;
            let (ensemble, manifest) = load_checkpoint(dir)?;
            let offset = step_of(manifest.origin, dataset.origin, manifest.frequency)? as f64;
            let locations = uniform_locations_in_hull(
                &dataset,
                config.variogram.inferred_locations,
                args.seed,
            )?;
            let mut times: Vec<f64> = dataset.records.iter().map(|r| r.time + offset).collect();
            times.sort_by(f64::total_cmp);
            times.dedup();
            let opts = PredictOptions {
                n_draws: args.draws,
                seed: args.seed,
            };
            inferred_variogram(
                &ensemble,
                &manifest.network,
                &manifest.features,
                &locations,
                &times,
                &spec,
                &opts,
            )?
        }
    };
    write_output(args.out.as_deref(), surface.to_delimited().as_bytes())
}

/// Writes bytes to `path` atomically, or to stdout when no path is given.
fn write_output(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => atomic_write(p, bytes),
        None => {
            use std::io::Write as _;
            std::io::stdout().write_all(bytes).map_err(|e| Error::Io {
                path: PathBuf::from("stdout"),
                source: e,
            })
        }
    }
}
