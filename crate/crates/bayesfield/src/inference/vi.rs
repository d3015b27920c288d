//! Mean-field variational inference over the flat parameter vector.
//!
//! The surrogate posterior is a diagonal Gaussian `q(θ) = ∏ N(μ_i,
//! softplus(ρ_i)²)`. Each step ascends a reparameterized one-sample
//! estimate of the evidence lower bound
//!
//! ```text
//! ELBO = E_q[Σ log p(y | θ)] − KL(q ‖ prior).
//! ```
//!
//! Blocks with fixed standard-normal priors (input scales, weight-scale
//! and activation-logit parameters, observation raws) use the closed-form
//! Gaussian KL. For weights and biases the prior scale depends on the
//! sampled `ξ^ℓ`, so their cross term `E_q[log prior]` is estimated with
//! the sampled θ while their entropy is kept in closed form.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::model::{
    likelihood_batch, prior_value_grad, sigmoid, softplus, softplus_inv, ParamLayout, ParamVector,
    PriorScope, Workspace, LN_2PI,
};
use crate::model::{init_params, NetworkConfig};

use super::optimizer::Adam;
use super::{derive_seed, TrainConfig};

/// Initial posterior standard deviation for every coordinate.
const INIT_STDDEV: f64 = 0.01;

/// Diagonal Gaussian surrogate posterior: per-coordinate mean and raw
/// scale, with `stddev = softplus(raw_scale)`.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct VariationalParams {
    pub mean: ParamVector,
    pub raw_scale: Vec<f64>,
}

impl VariationalParams {
    /// Standard deviation of coordinate `i`.
    pub fn stddev(&self, i: usize) -> f64 {
        softplus(self.raw_scale[i])
    }

    /// Draws one parameter vector `θ = μ + softplus(ρ)·ε`.
    pub fn sample_with<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        let mut out = self.mean.clone();
        for (v, &rho) in out.values.iter_mut().zip(&self.raw_scale) {
            let eps: f64 = rng.sample(StandardNormal);
            *v += softplus(rho) * eps;
        }
        out
    }
}

/// Closed-form KL of one coordinate's `N(μ, σ²)` against `N(0, 1)`.
pub(crate) fn gaussian_kl_std(mu: f64, sigma: f64) -> f64 {
    0.5 * (mu * mu + sigma * sigma - 1.0) - sigma.ln()
}

/// Adds the sampling-free ELBO terms and (optionally) their gradients:
/// `−KL(q‖N(0,1))` for fixed-prior blocks, entropy for hierarchical
/// blocks. Gradients accumulate into `(grad_mu, grad_rho)`.
fn closed_terms(
    layout: &ParamLayout,
    mu: &[f64],
    rho: &[f64],
    mut grads: Option<(&mut [f64], &mut [f64])>,
) -> f64 {
    let mut total = 0.0;
    for block in layout.blocks() {
        if block.kind.is_hierarchical() {
            for i in block.range() {
                let sd = softplus(rho[i]);
                total += 0.5 * (LN_2PI + 1.0) + sd.ln();
                if let Some((_, grho)) = grads.as_mut() {
                    grho[i] += sigmoid(rho[i]) / sd;
                }
            }
        } else {
            for i in block.range() {
                let sd = softplus(rho[i]);
                total -= gaussian_kl_std(mu[i], sd);
                if let Some((gmu, grho)) = grads.as_mut() {
                    gmu[i] -= mu[i];
                    grho[i] += (1.0 / sd - sd) * sigmoid(rho[i]);
                }
            }
        }
    }
    total
}

/// One full-data ELBO sample: log likelihood and hierarchical prior at a
/// fresh draw `θ ~ q`, plus the closed-form terms.
#[allow(clippy::too_many_arguments)]
fn elbo_sample_value<R: Rng + ?Sized>(
    config: &NetworkConfig,
    layout: &ParamLayout,
    mu: &[f64],
    rho: &[f64],
    feats: &FeatureMatrix,
    ys: &[f64],
    all_rows: &[usize],
    chunk_size: usize,
    ws: &mut Workspace,
    theta: &mut [f64],
    rng: &mut R,
) -> Result<f64> {
    for i in 0..mu.len() {
        let eps: f64 = rng.sample(StandardNormal);
        theta[i] = mu[i] + softplus(rho[i]) * eps;
    }
    let mut value = 0.0;
    for chunk in all_rows.chunks(chunk_size) {
        value += likelihood_batch(config, layout, theta, feats, ys, chunk, 1.0, ws, None)?;
    }
    value += prior_value_grad(config, layout, theta, PriorScope::HierarchicalOnly, None);
    value += closed_terms(layout, mu, rho, None);
    Ok(value)
}

/// Monte Carlo estimate of the ELBO of `vp` on the full dataset.
///
/// Returns `(mean, standard error)` over `n_samples` independent draws;
/// the standard error is 0 when `n_samples = 1`.
pub fn elbo_estimate(
    config: &NetworkConfig,
    vp: &VariationalParams,
    feats: &FeatureMatrix,
    ys: &[f64],
    n_samples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if n_samples == 0 {
        return Err(Error::invalid("n_samples", "must be at least 1"));
    }
    if feats.n_rows() != ys.len() {
        return Err(Error::dim("responses", feats.n_rows(), ys.len()));
    }
    let layout = ParamLayout::from_config(config);
    if vp.mean.layout != layout || vp.raw_scale.len() != layout.len() {
        return Err(Error::Incompatible(
            "variational parameters do not match the model configuration".into(),
        ));
    }
    let chunk_size = feats.n_rows().clamp(1, 512);
    let mut ws = Workspace::new(config, chunk_size);
    let mut theta = vec![0.0; layout.len()];
    let all_rows: Vec<usize> = (0..feats.n_rows()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0));
    let mut vals = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        vals.push(elbo_sample_value(
            config,
            &layout,
            &vp.mean.values,
            &vp.raw_scale,
            feats,
            ys,
            &all_rows,
            chunk_size,
            &mut ws,
            &mut theta,
            &mut rng,
        )?);
    }
    let mean = vals.iter().sum::<f64>() / n_samples as f64;
    let se = if n_samples > 1 {
        let var =
            vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n_samples - 1) as f64;
        (var / n_samples as f64).sqrt()
    } else {
        0.0
    };
    Ok((mean, se))
}

/// Trains one variational ensemble member. Returns the fitted surrogate,
/// its training curve of full-data ELBO estimates, and any warnings.
pub(crate) fn train_vi_member(
    config: &NetworkConfig,
    feats: &FeatureMatrix,
    ys: &[f64],
    train: &TrainConfig,
    member: usize,
    batch: usize,
) -> Result<(VariationalParams, Vec<(u64, f64)>, Vec<String>)> {
    let tag = member as u64 * 4;
    let layout = ParamLayout::from_config(config);
    let p = layout.len();
    let n = feats.n_rows();
    let init = init_params(config, derive_seed(train.seed, tag))?;

    // φ concatenates means then raw scales.
    let mut phi = vec![0.0; 2 * p];
    phi[..p].copy_from_slice(&init.values);
    phi[p..].fill(softplus_inv(INIT_STDDEV));

    let chunks_per_epoch = n.div_ceil(batch);
    let total_steps = (train.epochs * chunks_per_epoch) as u64;
    let record_interval = (total_steps / 24).max(1);
    let mut adam = Adam::new(2 * p);
    let mut grad2 = vec![0.0; 2 * p];
    let mut sigma = vec![0.0; p];
    let mut sig_rho = vec![0.0; p];
    let mut eps = vec![0.0; p];
    let mut theta = vec![0.0; p];
    let mut gtheta = vec![0.0; p];
    let mut ws = Workspace::new(config, batch);
    let mut order: Vec<usize> = (0..n).collect();
    let all_rows: Vec<usize> = (0..n).collect();
    let mut rng_shuffle = ChaCha8Rng::seed_from_u64(derive_seed(train.seed, tag + 1));
    let mut rng_noise = ChaCha8Rng::seed_from_u64(derive_seed(train.seed, tag + 2));
    let mut rng_curve = ChaCha8Rng::seed_from_u64(derive_seed(train.seed, tag + 3));
    let mut curve = Vec::new();
    let mut step = 0u64;

    for _ in 0..train.epochs {
        shuffle(&mut order, &mut rng_shuffle);
        for chunk in order.chunks(batch) {
            let scale = n as f64 / chunk.len() as f64;
            {
                let (mu, rho) = phi.split_at(p);
                for i in 0..p {
                    sigma[i] = softplus(rho[i]);
                    sig_rho[i] = sigmoid(rho[i]);
                }
                grad2.fill(0.0);
                let (gmu, grho) = grad2.split_at_mut(p);
                let inv_s = 1.0 / train.vi_samples_per_step as f64;
                let mut value = 0.0;
                for _ in 0..train.vi_samples_per_step {
                    for i in 0..p {
                        eps[i] = rng_noise.sample(StandardNormal);
                        theta[i] = mu[i] + sigma[i] * eps[i];
                    }
                    gtheta.fill(0.0);
                    let mut v = likelihood_batch(
                        config,
                        &layout,
                        &theta,
                        feats,
                        ys,
                        chunk,
                        scale,
                        &mut ws,
                        Some(&mut gtheta),
                    )
                    .map_err(|e| super::tag_step(e, step))?;
                    v += prior_value_grad(
                        config,
                        &layout,
                        &theta,
                        PriorScope::HierarchicalOnly,
                        Some(&mut gtheta),
                    );
                    value += inv_s * v;
                    for i in 0..p {
                        gmu[i] += inv_s * gtheta[i];
                        grho[i] += inv_s * gtheta[i] * eps[i] * sig_rho[i];
                    }
                }
                value += closed_terms(&layout, mu, rho, Some((gmu, grho)));
                if !value.is_finite() {
                    return Err(Error::Numerical(format!(
                        "non-finite ELBO objective at step {step}"
                    )));
                }
            }
            let lr = train.learning_rate.rate(step, total_steps);
            adam.step(&mut phi, &grad2, lr);
            step += 1;
            if step % record_interval == 0 || step == total_steps {
                let (mu, rho) = phi.split_at(p);
                let value = elbo_sample_value(
                    config,
                    &layout,
                    mu,
                    rho,
                    feats,
                    ys,
                    &all_rows,
                    batch,
                    &mut ws,
                    &mut theta,
                    &mut rng_curve,
                )
                .map_err(|e| super::tag_step(e, step))?;
                curve.push((step, value));
            }
        }
    }

    let (mu, rho) = phi.split_at(p);
    let fitted = VariationalParams {
        mean: ParamVector {
            values: mu.to_vec(),
            layout,
        },
        raw_scale: rho.to_vec(),
    };
    let mut warnings = Vec::new();
    let min_sd = rho.iter().copied().map(softplus).fold(f64::INFINITY, f64::min);
    if min_sd < 1e-7 {
        warnings.push(format!(
            "variational stddev collapsed to {min_sd:.2e}; surrogate may be degenerate"
        ));
    }
    Ok((fitted, curve, warnings))
}

/// Fisher–Yates shuffle driven by the supplied RNG.
pub(crate) fn shuffle<R: Rng + ?Sized>(order: &mut [usize], rng: &mut R) {
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
}
