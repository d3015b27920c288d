//! Posterior approximation for the network parameters.
//!
//! Three methods share one stochastic-ascent loop:
//!
//! * **MAP** — `M` independent ascents of `log_prior + (N/B)·batch log
//!   likelihood` from random prior initializations; the resulting point
//!   estimates form an equally weighted ensemble.
//! * **MLE** — identical with the prior term removed (ablation).
//! * **VI** — `M` independent mean-field Gaussian surrogates fitted by
//!   reparameterized ELBO ascent (see [`vi`]).
//!
//! Every fit is a pure function of its inputs and the seed: member
//! initialization, minibatch shuffling, and Monte Carlo noise all run on
//! independent deterministic streams derived from `TrainConfig::seed`.

mod optimizer;
mod vi;

pub use optimizer::{Adam, Decay, LrSchedule};
pub use vi::{elbo_estimate, VariationalParams};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::model::{
    config_hash, init_params, likelihood_batch, prior_value_grad, NetworkConfig, ParamLayout,
    ParamVector, PriorScope, Workspace,
};

/// Inference method for [`fit`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    #[default]
    Map,
    Vi,
    Mle,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Map => "map",
            Method::Vi => "vi",
            Method::Mle => "mle",
        }
    }
}

/// How the KL term is spread across minibatches. Only uniform `B/N`
/// scaling is implemented; the enum reserves room for alternatives.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KlScaleMode {
    #[default]
    Uniform,
}

/// Training hyperparameters shared by all inference methods.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub method: Method,
    /// Number of independent ensemble members `M`.
    pub ensemble_size: usize,
    /// Full passes over the data; 0 returns prior initializations.
    pub epochs: usize,
    /// Minibatch size; clamped to the dataset size with a warning.
    pub batch_size: usize,
    pub learning_rate: LrSchedule,
    pub seed: u64,
    /// Reparameterized samples per VI step.
    pub vi_samples_per_step: usize,
    pub kl_scale_mode: KlScaleMode,
}

impl TrainConfig {
    /// Defaults: `M = 8`, batch 512 (clamped to the dataset), epochs sized
    /// so the total step count is roughly 5000, cosine decay from 5e-3.
    pub fn defaults_for(method: Method, n_records: usize) -> Self {
        let n = n_records.max(1);
        let batch = 512.min(n);
        let chunks = n.div_ceil(batch);
        let epochs = ((5000.0 / chunks as f64).round() as usize).max(1);
        TrainConfig {
            method,
            ensemble_size: 8,
            epochs,
            batch_size: batch,
            learning_rate: LrSchedule::default(),
            seed: 0,
            vi_samples_per_step: 1,
            kl_scale_mode: KlScaleMode::Uniform,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ensemble_size == 0 {
            return Err(Error::invalid("ensemble_size", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be at least 1"));
        }
        if !(self.learning_rate.peak.is_finite() && self.learning_rate.peak > 0.0) {
            return Err(Error::invalid("learning_rate.peak", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.learning_rate.warmup_frac) {
            return Err(Error::invalid("learning_rate.warmup_frac", "must lie in [0, 1]"));
        }
        if self.vi_samples_per_step == 0 {
            return Err(Error::invalid("vi_samples_per_step", "must be at least 1"));
        }
        Ok(())
    }
}

/// Ensemble members: point estimates or variational surrogates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Members {
    Point(Vec<ParamVector>),
    Variational(Vec<VariationalParams>),
}

/// A fitted approximation to the parameter posterior.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorEnsemble {
    pub method: Method,
    pub members: Members,
    /// Hash of the generating [`NetworkConfig`], for compatibility checks.
    pub config_hash: String,
}

impl PosteriorEnsemble {
    pub fn len(&self) -> usize {
        match &self.members {
            Members::Point(v) => v.len(),
            Members::Variational(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Shared parameter layout of the members.
    pub fn layout(&self) -> &ParamLayout {
        match &self.members {
            Members::Point(v) => &v[0].layout,
            Members::Variational(v) => &v[0].mean.layout,
        }
    }
}

/// A fit's ensemble plus its training curves (one `(step, objective)`
/// series per member) and any non-fatal warnings.
#[derive(Clone, Debug, PartialEq)]
pub struct FitResult {
    pub ensemble: PosteriorEnsemble,
    pub curves: Vec<Vec<(u64, f64)>>,
    pub warnings: Vec<String>,
}

/// SplitMix64 finalizer, used to derive independent seeds.
pub(crate) fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent stream seed for `(seed, tag)`.
pub(crate) fn derive_seed(seed: u64, tag: u64) -> u64 {
    splitmix64(seed ^ splitmix64(tag))
}

fn tag_member(err: Error, member: usize) -> Error {
    match err {
        Error::Numerical(msg) => Error::Numerical(format!("member {member}: {msg}")),
        other => other,
    }
}

/// Adds the training-step index to numerical failures surfacing from a
/// gradient or objective evaluation.
pub(crate) fn tag_step(err: Error, step: u64) -> Error {
    match err {
        Error::Numerical(msg) => Error::Numerical(format!("{msg} (step {step})")),
        other => other,
    }
}

/// Fits a posterior ensemble with the method named in `train.method`.
pub fn fit(
    config: &NetworkConfig,
    feats: &FeatureMatrix,
    ys: &[f64],
    train: &TrainConfig,
) -> Result<FitResult> {
    config.validate()?;
    train.validate()?;
    let n = feats.n_rows();
    if n == 0 {
        return Err(Error::EmptyInput("training dataset".into()));
    }
    if ys.len() != n {
        return Err(Error::dim("responses", n, ys.len()));
    }
    if feats.n_cols() != config.num_features {
        return Err(Error::dim("feature matrix", config.num_features, feats.n_cols()));
    }
    if ys.iter().any(|y| !y.is_finite()) {
        return Err(Error::NonFinite("response vector".into()));
    }
    if config.observation.is_discrete() {
        if let Some(bad) = ys.iter().find(|y| **y < 0.0 || y.fract() != 0.0) {
            return Err(Error::invalid(
                "responses",
                format!("count model requires nonnegative integers, found {bad}"),
            ));
        }
    }

    let mut warnings = Vec::new();
    let batch = if train.batch_size > n {
        warnings.push(format!(
            "batch size {} exceeds the {n} training records; clamped to {n}",
            train.batch_size
        ));
        n
    } else {
        train.batch_size
    };

    let mut result = match train.method {
        Method::Map => fit_point(config, feats, ys, train, batch, true, Method::Map)?,
        Method::Mle => fit_point(config, feats, ys, train, batch, false, Method::Mle)?,
        Method::Vi => fit_variational(config, feats, ys, train, batch)?,
    };
    warnings.append(&mut result.warnings);
    result.warnings = warnings;
    Ok(result)
}

/// [`fit`] with the method forced to MAP.
pub fn fit_map(
    config: &NetworkConfig,
    feats: &FeatureMatrix,
    ys: &[f64],
    train: &TrainConfig,
) -> Result<FitResult> {
    let mut train = train.clone();
    train.method = Method::Map;
    fit(config, feats, ys, &train)
}

/// [`fit`] with the method forced to MLE (no prior term).
pub fn fit_mle(
    config: &NetworkConfig,
    feats: &FeatureMatrix,
    ys: &[f64],
    train: &TrainConfig,
) -> Result<FitResult> {
    let mut train = train.clone();
    train.method = Method::Mle;
    fit(config, feats, ys, &train)
}

/// [`fit`] with the method forced to variational inference.
pub fn fit_vi(
    config: &NetworkConfig,
    feats: &FeatureMatrix,
    ys: &[f64],
    train: &TrainConfig,
) -> Result<FitResult> {
    let mut train = train.clone();
    train.method = Method::Vi;
    fit(config, feats, ys, &train)
}

/// Point-estimate ensembles (MAP with the prior, MLE without).
fn fit_point(
    config: &NetworkConfig,
    feats: &FeatureMatrix,
    ys: &[f64],
    train: &TrainConfig,
    batch: usize,
    include_prior: bool,
    method: Method,
) -> Result<FitResult> {
    let runs: Vec<Result<(ParamVector, Vec<(u64, f64)>)>> = (0..train.ensemble_size)
        .into_par_iter()
        .map(|m| {
            train_point_member(config, feats, ys, train, m, include_prior, batch)
                .map_err(|e| tag_member(e, m))
        })
        .collect();
    let mut members = Vec::with_capacity(runs.len());
    let mut curves = Vec::with_capacity(runs.len());
    for run in runs {
        let (params, curve) = run?;
        members.push(params);
        curves.push(curve);
    }
    Ok(FitResult {
        ensemble: PosteriorEnsemble {
            method,
            members: Members::Point(members),
            config_hash: config_hash(config),
        },
        curves,
        warnings: Vec::new(),
    })
}

fn fit_variational(
    config: &NetworkConfig,
    feats: &FeatureMatrix,
    ys: &[f64],
    train: &TrainConfig,
    batch: usize,
) -> Result<FitResult> {
    type ViRun = (VariationalParams, Vec<(u64, f64)>, Vec<String>);
    let runs: Vec<Result<ViRun>> = (0..train.ensemble_size)
        .into_par_iter()
        .map(|m| {
            vi::train_vi_member(config, feats, ys, train, m, batch).map_err(|e| tag_member(e, m))
        })
        .collect();
    let mut members = Vec::with_capacity(runs.len());
    let mut curves = Vec::with_capacity(runs.len());
    let mut warnings = Vec::new();
    for (m, run) in runs.into_iter().enumerate() {
        let (vp, curve, member_warnings) = run?;
        members.push(vp);
        curves.push(curve);
        warnings.extend(member_warnings.into_iter().map(|w| format!("member {m}: {w}")));
    }
    Ok(FitResult {
        ensemble: PosteriorEnsemble {
            method: Method::Vi,
            members: Members::Variational(members),
            config_hash: config_hash(config),
        },
        curves,
        warnings,
    })
}

/// One member's stochastic ascent of the (optionally prior-regularized)
/// scaled log likelihood.
fn train_point_member(
    config: &NetworkConfig,
    feats: &FeatureMatrix,
    ys: &[f64],
    train: &TrainConfig,
    member: usize,
    include_prior: bool,
    batch: usize,
) -> Result<(ParamVector, Vec<(u64, f64)>)> {
    let tag = member as u64 * 4;
    let layout = ParamLayout::from_config(config);
    let n = feats.n_rows();
    let mut params = init_params(config, derive_seed(train.seed, tag))?;
    let chunks_per_epoch = n.div_ceil(batch);
    let total_steps = (train.epochs * chunks_per_epoch) as u64;
    let record_interval = (total_steps / 24).max(1);
    let mut adam = Adam::new(params.len());
    let mut grad = vec![0.0; params.len()];
    let mut ws = Workspace::new(config, batch);
    let mut order: Vec<usize> = (0..n).collect();
    let all_rows: Vec<usize> = (0..n).collect();
    let mut rng_shuffle = ChaCha8Rng::seed_from_u64(derive_seed(train.seed, tag + 1));
    let mut curve = Vec::new();
    let mut step = 0u64;

    for _ in 0..train.epochs {
        vi::shuffle(&mut order, &mut rng_shuffle);
        for chunk in order.chunks(batch) {
            let scale = n as f64 / chunk.len() as f64;
            grad.fill(0.0);
            let mut value = if include_prior {
                prior_value_grad(config, &layout, &params.values, PriorScope::Full, Some(&mut grad))
            } else {
                0.0
            };
            value += likelihood_batch(
                config,
                &layout,
                &params.values,
                feats,
                ys,
                chunk,
                scale,
                &mut ws,
                Some(&mut grad),
            )
            .map_err(|e| tag_step(e, step))?;
            if !value.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite objective at step {step}"
                )));
            }
            let lr = train.learning_rate.rate(step, total_steps);
            adam.step(&mut params.values, &grad, lr);
            step += 1;
            if step % record_interval == 0 || step == total_steps {
                let objective = full_objective(
                    config,
                    &layout,
                    &params.values,
                    feats,
                    ys,
                    &all_rows,
                    batch,
                    include_prior,
                    &mut ws,
                )
                .map_err(|e| tag_step(e, step))?;
                curve.push((step, objective));
            }
        }
    }
    Ok((params, curve))
}

/// Unscaled full-data objective: log joint for MAP, log likelihood for MLE.
#[allow(clippy::too_many_arguments)]
fn full_objective(
    config: &NetworkConfig,
    layout: &ParamLayout,
    values: &[f64],
    feats: &FeatureMatrix,
    ys: &[f64],
    all_rows: &[usize],
    chunk_size: usize,
    include_prior: bool,
    ws: &mut Workspace,
) -> Result<f64> {
    let mut total = if include_prior {
        prior_value_grad(config, layout, values, PriorScope::Full, None)
    } else {
        0.0
    };
    for chunk in all_rows.chunks(chunk_size) {
        total += likelihood_batch(config, layout, values, feats, ys, chunk, 1.0, ws, None)?;
    }
    Ok(total)
}

/// Materializes parameter vectors from an ensemble.
///
/// Point ensembles return their members as-is (`n_draws` is ignored, by
/// design: the members are the posterior approximation). Variational
/// ensembles return `n_draws` vectors, each sampled by picking a member
/// uniformly and drawing `θ = μ + softplus(ρ)·ε`.
pub fn sample_ensemble(
    ens: &PosteriorEnsemble,
    n_draws: usize,
    seed: u64,
) -> Result<Vec<ParamVector>> {
    if ens.is_empty() {
        return Err(Error::EmptyInput("posterior ensemble".into()));
    }
    if n_draws == 0 {
        return Err(Error::invalid("n_draws", "must be at least 1"));
    }
    match &ens.members {
        Members::Point(members) => Ok(members.clone()),
        Members::Variational(members) => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0xD7A3));
            Ok((0..n_draws)
                .map(|_| {
                    let idx = rng.gen_range(0..members.len());
                    members[idx].sample_with(&mut rng)
                })
                .collect())
        }
    }
}
