//! Go/no-go acceptance checks, one integration test per criterion:
//! gradient exactness, synthetic-field recovery, interval calibration,
//! conjugate-posterior agreement, quantile/CDF consistency, metric and
//! seasonal-table oracles, variogram sanity, inference-mode ordering, and
//! bit-exact determinism.
//!
//! Each test prints `criterion N: PASS (elapsed)` on success (visible with
//! `--nocapture`); elapsed times are informational because wall time
//! depends on the host. The benchmark ensembles behind criteria 2, 3, and
//! 9 (three methods × five seeds) are fitted once and shared through
//! `OnceLock` cells, so the suite costs fifteen fits no matter which test
//! reaches them first.

use std::f64::consts::PI;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use bayesfield::config::{CHECKPOINT_FORMAT_VERSION, MANIFEST_FILE};
use bayesfield::features::Seasonality;
use bayesfield::inference::{Decay, KlScaleMode, LrSchedule, Members};
use bayesfield::model::{config_hash, softplus, Activation, BlockKind, ObservationParams};
use bayesfield::{
    build_features, empirical_variogram, feature_count, fit, forward, inferred_variogram,
    init_params, log_joint, log_joint_grad, mae, mis, parse_timestamp, predict_batch, rmse,
    sample_ensemble, save_checkpoint, seasonal_period, DataRecord, Dataset, DistanceMetric,
    FeatureMatrix, FeatureSpec, Frequency, Location, Manifest, Method, NetworkConfig,
    ObservationModel, PredictOptions, PredictiveMixture, SpaceTimeIndex, TableSchema, TrainConfig,
    VariogramSpec,
};

fn report_pass(criterion: u32, started: Instant) {
    println!("criterion {criterion}: PASS ({:.2?})", started.elapsed());
}

// ---------------------------------------------------------------------------
// Shared benchmark: sin(2πt/12) + s₁ + 0.5·s₁s₂ + Normal(0, 0.3²) on a 5×5
// grid over 120 monthly steps, last 12 steps held out. Criteria 2, 3, and 9
// read these fits.
// ---------------------------------------------------------------------------

const BENCH_TEST_START: f64 = 108.0;
const BENCH_ALPHA: f64 = 0.05;

struct BenchEval {
    y: Vec<f64>,
    mean: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    fit_time: Duration,
}

fn bench_spec() -> FeatureSpec {
    FeatureSpec {
        dims: 2,
        linear: true,
        time_space_interactions: true,
        space_space_interactions: true,
        seasonal: vec![Seasonality::new(12.0, vec![1])],
        spatial_fourier: Vec::new(),
        spatial_bounds: None,
        exogenous: Vec::new(),
    }
}

fn bench_data(seed: u64) -> (Vec<(SpaceTimeIndex, f64)>, Vec<(SpaceTimeIndex, f64)>) {
    let mut rng = ChaCha8Rng::seed_from_u64(9_000 + seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for t in 0..120 {
        for i in 0..5 {
            for j in 0..5 {
                let s1 = 0.25 * i as f64;
                let s2 = 0.25 * j as f64;
                let time = t as f64;
                let noise: f64 = rng.sample(StandardNormal);
                let y = (2.0 * PI * time / 12.0).sin() + s1 + 0.5 * s1 * s2 + 0.3 * noise;
                let row = (SpaceTimeIndex::new(vec![s1, s2], time), y);
                if time < BENCH_TEST_START {
                    train.push(row);
                } else {
                    test.push(row);
                }
            }
        }
    }
    (train, test)
}

fn run_benchmark(method: Method, seed: u64) -> BenchEval {
    let (train, test) = bench_data(seed);
    let spec = bench_spec();
    let config =
        NetworkConfig::with_default_architecture(feature_count(&spec), ObservationModel::Normal);
    let rows: Vec<Vec<f64>> = train
        .iter()
        .map(|(idx, _)| build_features(&spec, idx).unwrap())
        .collect();
    let feats = FeatureMatrix::from_rows(rows).unwrap();
    let ys: Vec<f64> = train.iter().map(|&(_, y)| y).collect();
    let mut tc = TrainConfig::defaults_for(method, ys.len());
    tc.seed = seed;

    let started = Instant::now();
    let result = fit(&config, &feats, &ys, &tc).unwrap();
    let fit_time = started.elapsed();

    let indices: Vec<SpaceTimeIndex> = test.iter().map(|(idx, _)| idx.clone()).collect();
    let table = predict_batch(
        &result.ensemble,
        &config,
        &spec,
        &indices,
        &[0.025, 0.5, 0.975],
        &PredictOptions { n_draws: 64, seed },
    )
    .unwrap();
    BenchEval {
        y: test.iter().map(|&(_, y)| y).collect(),
        mean: table.rows.iter().map(|r| r.mean).collect(),
        lower: table.rows.iter().map(|r| r.quantiles[0]).collect(),
        upper: table.rows.iter().map(|r| r.quantiles[2]).collect(),
        fit_time,
    }
}

fn bench(method: Method, seed: u64) -> &'static BenchEval {
    static CELLS: OnceLock<Vec<OnceLock<BenchEval>>> = OnceLock::new();
    let cells = CELLS.get_or_init(|| (0..15).map(|_| OnceLock::new()).collect());
    let m = match method {
        Method::Map => 0,
        Method::Mle => 1,
        Method::Vi => 2,
    };
    cells[m * 5 + seed as usize].get_or_init(|| run_benchmark(method, seed))
}

// ---------------------------------------------------------------------------
// Criterion 1: every coordinate of the analytic gradient matches central
// finite differences across small random architectures.
// ---------------------------------------------------------------------------

#[test]
fn criterion_01_gradients_match_finite_differences() {
    let started = Instant::now();
    let heads = [
        ObservationModel::Normal,
        ObservationModel::StudentT,
        ObservationModel::Poisson,
    ];
    let primitives = [Activation::Tanh, Activation::Relu, Activation::Elu];
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut cases = 0u64;
    for layers in 0..=2usize {
        for &head in &heads {
            for rep in 0..3usize {
                let num_features = rng.gen_range(1..=4);
                let hidden_widths: Vec<usize> =
                    (0..layers).map(|_| rng.gen_range(1..=8)).collect();
                let blend = rep + 1;
                let activations: Vec<Vec<Activation>> = (0..layers)
                    .map(|_| {
                        let mut pool = primitives.to_vec();
                        for i in 0..blend {
                            let j = rng.gen_range(i..pool.len());
                            pool.swap(i, j);
                        }
                        pool.truncate(blend);
                        pool
                    })
                    .collect();
                let config = NetworkConfig {
                    num_features,
                    hidden_widths,
                    activations,
                    observation: head,
                };
                let rows: Vec<Vec<f64>> = (0..3)
                    .map(|_| (0..num_features).map(|_| rng.gen_range(-1.0..1.0)).collect())
                    .collect();
                let feats = FeatureMatrix::from_rows(rows).unwrap();
                let ys: Vec<f64> = (0..3)
                    .map(|_| match head {
                        ObservationModel::Poisson => rng.gen_range(0..6) as f64,
                        _ => rng.gen_range(-2.0..2.0),
                    })
                    .collect();
                let params = init_params(&config, 500 + cases).unwrap();
                let (value, grad) = log_joint_grad(&config, &params, &feats, &ys, 1.0).unwrap();
                assert!(value.is_finite(), "case {cases}: non-finite objective");

                let eps = 1e-5;
                for i in 0..params.len() {
                    let mut hi = params.clone();
                    let mut lo = params.clone();
                    hi.values[i] += eps;
                    lo.values[i] -= eps;
                    let fd = (log_joint(&config, &hi, &feats, &ys).unwrap()
                        - log_joint(&config, &lo, &feats, &ys).unwrap())
                        / (2.0 * eps);
                    let denom = grad[i].abs().max(fd.abs()).max(1.0);
                    assert!(
                        (grad[i] - fd).abs() / denom <= 1e-4,
                        "case {cases} ({head:?}, {layers} layers), coordinate {i}: \
                         analytic {} vs finite difference {}",
                        grad[i],
                        fd,
                    );
                }
                cases += 1;
            }
        }
    }
    assert!(cases >= 20, "only {cases} configurations checked");
    println!("  {cases} architectures verified coordinate-wise");
    report_pass(1, started);
}

// ---------------------------------------------------------------------------
// Criterion 2: MAP ensemble with defaults recovers the synthetic field to
// within 1.5× the generating noise floor on the holdout.
// ---------------------------------------------------------------------------

#[test]
fn criterion_02_synthetic_field_recovery() {
    let started = Instant::now();
    let b = bench(Method::Map, 0);
    let err = rmse(&b.y, &b.mean).unwrap();
    println!("  map seed 0: holdout rmse {err:.6} (fit took {:.2?})", b.fit_time);
    assert!(err <= 0.45, "holdout rmse {err} exceeds 0.45");
    report_pass(2, started);
}

// ---------------------------------------------------------------------------
// Criterion 3: pooled 95% interval coverage over five benchmark seeds.
// ---------------------------------------------------------------------------

#[test]
fn criterion_03_interval_calibration() {
    let started = Instant::now();
    let mut covered = 0usize;
    let mut total = 0usize;
    for seed in 0..5 {
        let b = bench(Method::Map, seed);
        let hits = b
            .y
            .iter()
            .zip(b.lower.iter().zip(&b.upper))
            .filter(|&(y, (lo, hi))| *lo <= *y && *y <= *hi)
            .count();
        println!(
            "  map seed {seed}: coverage {:.4} (fit took {:.2?})",
            hits as f64 / b.y.len() as f64,
            b.fit_time
        );
        covered += hits;
        total += b.y.len();
    }
    let coverage = covered as f64 / total as f64;
    println!("  pooled coverage over {total} test points: {coverage:.4}");
    assert!(
        (0.88..=0.99).contains(&coverage),
        "pooled 95% interval coverage {coverage} outside [0.88, 0.99]"
    );
    report_pass(3, started);
}

// ---------------------------------------------------------------------------
// Criterion 4: on the constant-feature Gaussian instance the fitted means
// agree with the closed-form posterior mean (MAP, VI) or sample mean (MLE).
// ---------------------------------------------------------------------------

#[test]
fn criterion_04_conjugate_oracle() {
    let started = Instant::now();
    let config = NetworkConfig {
        num_features: 1,
        hidden_widths: vec![],
        activations: vec![],
        observation: ObservationModel::Normal,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let ys: Vec<f64> = (0..200)
        .map(|_| 3.0 + rng.sample::<f64, _>(StandardNormal))
        .collect();
    let n = ys.len() as f64;
    let ybar = ys.iter().sum::<f64>() / n;
    let posterior_mean = n * ybar / (n + 1.0);
    let feats = FeatureMatrix::from_rows(vec![vec![1.0]; ys.len()]).unwrap();
    let train = |method: Method, epochs: usize| TrainConfig {
        method,
        ensemble_size: 3,
        epochs,
        batch_size: 200,
        learning_rate: LrSchedule {
            peak: 0.02,
            warmup_frac: 0.1,
            decay: Decay::Cosine,
        },
        seed: 1,
        vi_samples_per_step: 1,
        kl_scale_mode: KlScaleMode::Uniform,
    };

    for (method, epochs, target, label) in [
        (Method::Map, 1200, posterior_mean, "posterior mean"),
        (Method::Mle, 1200, ybar, "sample mean"),
        (Method::Vi, 1500, posterior_mean, "posterior mean"),
    ] {
        let result = fit(&config, &feats, &ys, &train(method, epochs)).unwrap();
        let fitted = match &result.ensemble.members {
            Members::Point(members) => {
                members
                    .iter()
                    .map(|p| forward(&config, p, &[1.0]).unwrap())
                    .sum::<f64>()
                    / members.len() as f64
            }
            Members::Variational(_) => {
                let draws = sample_ensemble(&result.ensemble, 64, 9).unwrap();
                draws
                    .iter()
                    .map(|p| forward(&config, p, &[1.0]).unwrap())
                    .sum::<f64>()
                    / draws.len() as f64
            }
        };
        println!("  {}: fitted {fitted:.4} vs {label} {target:.4}", method.as_str());
        assert!(
            (fitted - target).abs() <= 0.1,
            "{} fitted mean {fitted} is not within 0.1 of {label} {target}",
            method.as_str()
        );
    }
    report_pass(4, started);
}

// ---------------------------------------------------------------------------
// Criterion 5: quantile/CDF round trip on random continuous mixtures, plus
// the standard-normal 97.5% point.
// ---------------------------------------------------------------------------

#[test]
fn criterion_05_quantile_engine() {
    let started = Instant::now();
    let alphas = [0.01, 0.025, 0.5, 0.975, 0.99];
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for k in 0..100 {
        let model = if k % 2 == 0 {
            ObservationModel::Normal
        } else {
            ObservationModel::StudentT
        };
        let m = rng.gen_range(1..=16);
        let components: Vec<(f64, ObservationParams)> = (0..m)
            .map(|_| {
                let field = rng.gen_range(-3.0..3.0);
                let params = match model {
                    ObservationModel::Normal => ObservationParams::Normal {
                        variance: rng.gen_range(0.05..4.0),
                    },
                    ObservationModel::StudentT => ObservationParams::StudentT {
                        scale: rng.gen_range(0.1..2.0),
                        df: rng.gen_range(2.5..30.0),
                    },
                    ObservationModel::Poisson => unreachable!(),
                };
                (field, params)
            })
            .collect();
        let mix = PredictiveMixture::new(model, components).unwrap();
        for &alpha in &alphas {
            let q = mix.quantile(alpha).unwrap();
            let gap = (mix.cdf(q) - alpha).abs();
            assert!(
                gap <= 1e-8,
                "mixture {k} ({model:?}, {m} components), alpha {alpha}: \
                 |cdf(quantile) - alpha| = {gap:e}"
            );
        }
    }
    let standard = PredictiveMixture::new(
        ObservationModel::Normal,
        vec![(0.0, ObservationParams::Normal { variance: 1.0 })],
    )
    .unwrap();
    let q = standard.quantile(0.975).unwrap();
    assert!(
        (q - 1.959964).abs() <= 1e-5,
        "standard normal 97.5% quantile {q} is not 1.959964 within 1e-5"
    );
    report_pass(5, started);
}

// ---------------------------------------------------------------------------
// Criterion 6: point and interval scores reproduce hand-computed values.
// ---------------------------------------------------------------------------

#[test]
fn criterion_06_metric_oracles() {
    let started = Instant::now();
    let tol = 1e-9;

    assert!(rmse(&[1.0, -2.0], &[1.0, -2.0]).unwrap().abs() <= tol);
    assert!((rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap() - 12.5f64.sqrt()).abs() <= tol);
    assert!((rmse(&[7.0], &[5.0]).unwrap() - 2.0).abs() <= tol);

    assert!(mae(&[1.0, -2.0], &[1.0, -2.0]).unwrap().abs() <= tol);
    assert!((mae(&[0.0, 0.0], &[3.0, 4.0]).unwrap() - 3.5).abs() <= tol);
    assert!((mae(&[0.0, 0.0], &[-3.0, -4.0]).unwrap() - 3.5).abs() <= tol);

    // Full coverage charges exactly the mean interval width.
    assert!((mis(&[0.5, 0.2], &[0.0, 0.0], &[1.0, 2.0], 0.05).unwrap() - 1.5).abs() <= tol);
    // Escaping above: 1 + (2/0.05)·(5−1) = 161.
    assert!((mis(&[5.0], &[0.0], &[1.0], 0.05).unwrap() - 161.0).abs() <= tol);
    // Escaping below: 1 + (2/0.05)·(0−(−1)) = 41.
    assert!((mis(&[-1.0], &[0.0], &[1.0], 0.05).unwrap() - 41.0).abs() <= tol);

    // All three scores are invariant under permuting the records.
    let y = [5.0, -1.0, 0.5];
    let lo = [0.0, 0.0, 0.0];
    let hi = [1.0, 1.0, 1.0];
    let yp = [0.5, 5.0, -1.0];
    let yhat = [1.0, 2.0, 3.0];
    let yhat_p = [3.0, 1.0, 2.0];
    assert!(
        (rmse(&y, &yhat).unwrap() - rmse(&yp, &yhat_p).unwrap()).abs() <= tol
            && (mae(&y, &yhat).unwrap() - mae(&yp, &yhat_p).unwrap()).abs() <= tol
            && (mis(&y, &lo, &hi, 0.05).unwrap() - mis(&yp, &lo, &hi, 0.05).unwrap()).abs() <= tol
    );
    report_pass(6, started);
}

// ---------------------------------------------------------------------------
// Criterion 7: the seasonal-period table, every cell.
// ---------------------------------------------------------------------------

#[test]
fn criterion_07_seasonal_period_table() {
    let started = Instant::now();
    use Frequency::*;
    let expected: [(Frequency, Frequency, f64); 36] = [
        (Secondly, Secondly, 1.0),
        (Secondly, Minutely, 60.0),
        (Secondly, Hourly, 3600.0),
        (Secondly, Daily, 86400.0),
        (Secondly, Weekly, 604800.0),
        (Secondly, Monthly, 2629800.0),
        (Secondly, Quarterly, 7889400.0),
        (Secondly, Yearly, 31557600.0),
        (Minutely, Minutely, 1.0),
        (Minutely, Hourly, 60.0),
        (Minutely, Daily, 1440.0),
        (Minutely, Weekly, 10080.0),
        (Minutely, Monthly, 43830.0),
        (Minutely, Quarterly, 131490.0),
        (Minutely, Yearly, 525960.0),
        (Hourly, Hourly, 1.0),
        (Hourly, Daily, 24.0),
        (Hourly, Weekly, 168.0),
        (Hourly, Monthly, 730.5),
        (Hourly, Quarterly, 2191.5),
        (Hourly, Yearly, 8766.0),
        (Daily, Daily, 1.0),
        (Daily, Weekly, 7.0),
        (Daily, Monthly, 30.44),
        (Daily, Quarterly, 91.32),
        (Daily, Yearly, 365.25),
        (Weekly, Weekly, 1.0),
        (Weekly, Monthly, 4.35),
        (Weekly, Quarterly, 13.045),
        (Weekly, Yearly, 52.18),
        (Monthly, Monthly, 1.0),
        (Monthly, Quarterly, 3.0),
        (Monthly, Yearly, 12.0),
        (Quarterly, Quarterly, 1.0),
        (Quarterly, Yearly, 4.0),
        (Yearly, Yearly, 1.0),
    ];
    for &(frequency, effect, period) in &expected {
        assert_eq!(
            seasonal_period(frequency, effect),
            Some(period),
            "seasonal_period({frequency:?}, {effect:?})"
        );
    }
    // Every other (frequency, effect) pair is undefined.
    for &frequency in &Frequency::ALL {
        for &effect in &Frequency::ALL {
            if !expected.iter().any(|&(f, e, _)| f == frequency && e == effect) {
                assert_eq!(
                    seasonal_period(frequency, effect),
                    None,
                    "seasonal_period({frequency:?}, {effect:?}) should be undefined"
                );
            }
        }
    }
    report_pass(7, started);
}

// ---------------------------------------------------------------------------
// Criterion 8: variogram sanity. On i.i.d. Normal(0, v) data every populated
// empirical cell with lag ≥ 1 sits within three exact standard errors of v;
// the inferred variogram of a trained constant-field model matches its
// fitted noise variance within 10%.
// ---------------------------------------------------------------------------

/// Exact standard error of the pooled semivariance estimate in one cell for
/// i.i.d. Normal(0, v) data: the cell averages `0.5(y_a − y_b)²` over `pairs`
/// record pairs, and records appearing in several pairs correlate the terms.
/// Writing the estimate as `(1/2P)Σ_r d_r y_r² − (1/P)Σ_{(a,b)} y_a y_b` with
/// `d_r` the number of cell pairs touching record `r` gives
/// `Var = v²·(Σ_r d_r² / (2P²) + 1/P)`; the cross-covariance vanishes because
/// all odd moments of the ys do.
fn iid_cell_se(v: f64, pairs: u64, sum_sq_degree: u64) -> f64 {
    let p = pairs as f64;
    (v * v * (sum_sq_degree as f64 / (2.0 * p * p) + 1.0 / p)).sqrt()
}

#[test]
fn criterion_08_variogram_sanity() {
    let started = Instant::now();

    // --- Empirical part: i.i.d. Normal(0, 2.25) on 20 locations × 60 steps.
    let v: f64 = 2.25;
    let mut rng = ChaCha8Rng::seed_from_u64(88);
    let locations: Vec<Location> = (0..20)
        .map(|k| Location {
            id: format!("p{k:02}"),
            coords: vec![rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)],
        })
        .collect();
    let mut records = Vec::new();
    for loc in 0..locations.len() {
        for t in 0..60 {
            records.push(DataRecord {
                location: loc,
                time: t as f64,
                y: v.sqrt() * rng.sample::<f64, _>(StandardNormal),
            });
        }
    }
    let dataset = Dataset {
        frequency: Frequency::Daily,
        origin: parse_timestamp("2020-01-01").unwrap(),
        locations,
        records,
    };
    let spec = VariogramSpec {
        distance_bins: vec![0.0, 0.35, 0.7, 1.05, 1.45],
        time_lags: vec![0, 1, 2, 3, 5],
        distance_metric: DistanceMetric::Euclidean,
        min_pairs_per_bin: 30,
    };
    let surface = empirical_variogram(&dataset, &spec).unwrap();

    // Independent pair enumeration: per-cell pair counts and per-record
    // degrees, for the exact standard error above.
    let n_bins = spec.distance_bins.len() - 1;
    let n_lags = spec.time_lags.len();
    let mut pair_count = vec![0u64; n_bins * n_lags];
    let mut degrees = vec![std::collections::HashMap::<usize, u64>::new(); n_bins * n_lags];
    let recs = &dataset.records;
    for a in 0..recs.len() {
        for b in (a + 1)..recs.len() {
            let (ra, rb) = (&recs[a], &recs[b]);
            let ca = &dataset.locations[ra.location].coords;
            let cb = &dataset.locations[rb.location].coords;
            let dist = ((ca[0] - cb[0]).powi(2) + (ca[1] - cb[1]).powi(2)).sqrt();
            let lag = (ra.time - rb.time).abs() as i64;
            let Some(bin) = (0..n_bins)
                .find(|&i| spec.distance_bins[i] <= dist && dist < spec.distance_bins[i + 1])
            else {
                continue;
            };
            let Some(lag_ix) = spec.time_lags.iter().position(|&l| l == lag) else {
                continue;
            };
            let cell = bin * n_lags + lag_ix;
            pair_count[cell] += 1;
            *degrees[cell].entry(a).or_insert(0) += 1;
            *degrees[cell].entry(b).or_insert(0) += 1;
        }
    }

    let mut populated = 0;
    for bin in 0..n_bins {
        for lag_ix in 0..n_lags {
            let cell = bin * n_lags + lag_ix;
            let expected_pairs = pair_count[cell];
            match surface.cell(bin, lag_ix) {
                Some(found) => {
                    assert!(expected_pairs >= spec.min_pairs_per_bin as u64);
                    assert_eq!(found.pairs, expected_pairs, "pair count, cell ({bin}, {lag_ix})");
                    if spec.time_lags[lag_ix] >= 1 {
                        populated += 1;
                        let sum_sq: u64 = degrees[cell].values().map(|&d| d * d).sum();
                        let se = iid_cell_se(v, expected_pairs, sum_sq);
                        assert!(
                            (found.gamma - v).abs() <= 3.0 * se,
                            "cell ({bin}, {lag_ix}): gamma {} vs {v} (se {se:.4})",
                            found.gamma
                        );
                    }
                }
                None => assert!(
                    expected_pairs < spec.min_pairs_per_bin as u64,
                    "cell ({bin}, {lag_ix}) empty despite {expected_pairs} pairs"
                ),
            }
        }
    }
    assert!(populated >= 8, "only {populated} populated lag ≥ 1 cells");
    println!("  empirical: {populated} populated lag ≥ 1 cells within 3 SE of {v}");

    // --- Inferred part: train a constant-field model on i.i.d. noise and
    // compare the simulated surface against the fitted noise variance.
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let coords: Vec<Vec<f64>> = (0..10)
        .map(|_| vec![rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)])
        .collect();
    let times: Vec<f64> = (0..48).map(|t| t as f64).collect();
    let feature_spec = FeatureSpec::linear_only(2);
    let config = NetworkConfig {
        num_features: feature_count(&feature_spec),
        hidden_widths: vec![],
        activations: vec![],
        observation: ObservationModel::Normal,
    };
    let mut rows = Vec::new();
    let mut ys = Vec::new();
    for c in &coords {
        for &t in &times {
            let idx = SpaceTimeIndex::new(c.clone(), t);
            rows.push(build_features(&feature_spec, &idx).unwrap());
            ys.push(0.3 + 0.8 * rng.sample::<f64, _>(StandardNormal));
        }
    }
    let feats = FeatureMatrix::from_rows(rows).unwrap();
    let mut tc = TrainConfig::defaults_for(Method::Map, ys.len());
    tc.ensemble_size = 4;
    tc.seed = 12;
    // The raw time covariate (0..48) gives some random initializations a huge
    // starting objective; a longer, hotter schedule lets every member reach
    // the constant-field mode.
    tc.epochs = 20_000;
    tc.learning_rate.peak = 1e-2;
    let result = fit(&config, &feats, &ys, &tc).unwrap();
    let Members::Point(members) = &result.ensemble.members else {
        panic!("expected point ensemble");
    };
    let fitted_v = members
        .iter()
        .map(|p| softplus(p.block(BlockKind::Observation)[0]))
        .sum::<f64>()
        / members.len() as f64;

    let vg = VariogramSpec {
        distance_bins: vec![0.0, 0.45, 0.9, 1.35],
        time_lags: vec![0, 1, 2, 3],
        distance_metric: DistanceMetric::Euclidean,
        min_pairs_per_bin: 30,
    };
    let surface = inferred_variogram(
        &result.ensemble,
        &config,
        &feature_spec,
        &coords,
        &times,
        &vg,
        &PredictOptions { n_draws: 16, seed: 5 },
    )
    .unwrap();
    let mut populated = 0;
    for bin in 0..vg.distance_bins.len() - 1 {
        for lag_ix in 0..vg.time_lags.len() {
            if let Some(cell) = surface.cell(bin, lag_ix) {
                populated += 1;
                assert!(
                    (cell.gamma - fitted_v).abs() <= 0.1 * fitted_v,
                    "cell ({bin}, {lag_ix}): gamma {} vs fitted noise variance {fitted_v}",
                    cell.gamma
                );
            }
        }
    }
    assert!(populated >= 6, "only {populated} populated inferred cells");
    println!("  inferred: {populated} populated cells within 10% of fitted variance {fitted_v:.4}");
    report_pass(8, started);
}

// ---------------------------------------------------------------------------
// Criterion 9: averaged over the five benchmark seeds, MLE's interval score
// is no better than MAP's or VI's (ties within 2%).
// ---------------------------------------------------------------------------

#[test]
fn criterion_09_inference_mode_ordering() {
    let started = Instant::now();
    let mean_mis = |method: Method| -> f64 {
        let mut total = 0.0;
        for seed in 0..5 {
            let b = bench(method, seed);
            let score = mis(&b.y, &b.lower, &b.upper, BENCH_ALPHA).unwrap();
            println!("  {} seed {seed}: mis {score:.4} (fit {:.2?})", method.as_str(), b.fit_time);
            total += score;
        }
        total / 5.0
    };
    let map_mis = mean_mis(Method::Map);
    let vi_mis = mean_mis(Method::Vi);
    let mle_mis = mean_mis(Method::Mle);
    println!("  mean interval score over 5 seeds: map {map_mis:.4}, vi {vi_mis:.4}, mle {mle_mis:.4}");
    assert!(
        mle_mis >= 0.98 * map_mis,
        "mle interval score {mle_mis} beats map {map_mis} by more than 2%"
    );
    assert!(
        mle_mis >= 0.98 * vi_mis,
        "mle interval score {mle_mis} beats vi {vi_mis} by more than 2%"
    );
    report_pass(9, started);
}

// ---------------------------------------------------------------------------
// Criterion 10: refitting with an identical config and seed reproduces
// checkpoints bit for bit, and repeated predictions are identical.
// ---------------------------------------------------------------------------

#[test]
fn criterion_10_determinism() {
    let started = Instant::now();
    let feature_spec = FeatureSpec::linear_only(2);
    let config = NetworkConfig {
        num_features: feature_count(&feature_spec),
        hidden_widths: vec![4],
        activations: vec![vec![Activation::Tanh, Activation::Elu]],
        observation: ObservationModel::Normal,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let indices: Vec<SpaceTimeIndex> = (0..40)
        .map(|k| {
            SpaceTimeIndex::new(
                vec![rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)],
                (k % 10) as f64,
            )
        })
        .collect();
    let rows: Vec<Vec<f64>> = indices
        .iter()
        .map(|idx| build_features(&feature_spec, idx).unwrap())
        .collect();
    let feats = FeatureMatrix::from_rows(rows).unwrap();
    let ys: Vec<f64> = (0..indices.len())
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();

    for method in [Method::Map, Method::Mle, Method::Vi] {
        let tc = TrainConfig {
            method,
            ensemble_size: 2,
            epochs: 5,
            batch_size: 16,
            learning_rate: LrSchedule::default(),
            seed: 3,
            vi_samples_per_step: 1,
            kl_scale_mode: KlScaleMode::Uniform,
        };
        let a = fit(&config, &feats, &ys, &tc).unwrap();
        let b = fit(&config, &feats, &ys, &tc).unwrap();
        assert_eq!(a.ensemble, b.ensemble, "{} refit differs", method.as_str());

        let manifest = Manifest {
            format_version: CHECKPOINT_FORMAT_VERSION,
            method,
            config_hash: config_hash(&config),
            seed: tc.seed,
            network: config.clone(),
            features: feature_spec.clone(),
            train: tc.clone(),
            schema: TableSchema::default(),
            frequency: Frequency::Daily,
            origin: parse_timestamp("2020-01-01").unwrap(),
            members: vec![],
        };
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let saved = save_checkpoint(dir_a.path(), &a.ensemble, &manifest).unwrap();
        save_checkpoint(dir_b.path(), &b.ensemble, &manifest).unwrap();
        let mut files: Vec<String> = saved.members.clone();
        files.push(MANIFEST_FILE.to_string());
        for name in files {
            let bytes_a = std::fs::read(dir_a.path().join(&name)).unwrap();
            let bytes_b = std::fs::read(dir_b.path().join(&name)).unwrap();
            assert_eq!(bytes_a, bytes_b, "{}: {name} differs between refits", method.as_str());
        }

        let opts = PredictOptions { n_draws: 32, seed: 9 };
        let query = &indices[..8];
        let t1 = predict_batch(&a.ensemble, &config, &feature_spec, query, &[0.1, 0.5, 0.9], &opts)
            .unwrap();
        let t2 = predict_batch(&b.ensemble, &config, &feature_spec, query, &[0.1, 0.5, 0.9], &opts)
            .unwrap();
        assert_eq!(t1, t2, "{} repeated predictions differ", method.as_str());
    }
    report_pass(10, started);
}
