//! Log densities of the joint model and their exact gradients.
//!
//! The gradient is a hand-written reverse pass over the network. A
//! [`Workspace`] holds all intermediate planes (pre-activations, per-
//! primitive activations) sized for a maximum batch, so the optimizer's
//! inner loop allocates nothing.

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

use super::obs::PreparedObs;
use super::{
    sigmoid, softplus, BlockKind, NetworkConfig, ParamLayout, ParamVector, LN_2PI,
};

/// Which prior terms to include.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum PriorScope {
    /// All terms: standard-normal blocks plus the hierarchical weight terms.
    Full,
    /// Only the weight and bias terms `log N(ω; 0, variance softplus(ξ^ℓ))`,
    /// whose value depends on the layer scales. Used by variational inference,
    /// which handles the fixed standard-normal blocks in closed form.
    HierarchicalOnly,
}

/// Preallocated buffers for batched forward/backward passes.
pub(crate) struct Workspace {
    b_cap: usize,
    widths: Vec<usize>,
    n_internal: usize,
    exp_scale: Vec<f64>,
    act_weights: Vec<Vec<f64>>,
    /// Post-activation planes `h^0..h^L`, plane `ℓ` sized `b_cap × widths[ℓ]`.
    h: Vec<Vec<f64>>,
    /// Pre-activation planes `z^1..z^{L+1}`.
    z: Vec<Vec<f64>>,
    /// Per internal layer, per primitive: activation values at `z`.
    u: Vec<Vec<Vec<f64>>>,
    /// Scratch planes for the backward pass.
    gh: Vec<f64>,
    gz: Vec<f64>,
}

impl Workspace {
    pub(crate) fn new(config: &NetworkConfig, b_cap: usize) -> Self {
        let widths = config.layer_widths();
        let n_internal = config.hidden_widths.len();
        let max_width = *widths.iter().max().unwrap();
        Workspace {
            b_cap,
            widths: widths.clone(),
            n_internal,
            exp_scale: vec![0.0; config.num_features],
            act_weights: config
                .activations
                .iter()
                .map(|acts| vec![0.0; acts.len()])
                .collect(),
            h: (0..=n_internal)
                .map(|l| vec![0.0; b_cap * widths[l]])
                .collect(),
            z: (1..widths.len())
                .map(|l| vec![0.0; b_cap * widths[l]])
                .collect(),
            u: (0..n_internal)
                .map(|l| {
                    (0..config.activations[l].len())
                        .map(|_| vec![0.0; b_cap * widths[l + 1]])
                        .collect()
                })
                .collect(),
            gh: vec![0.0; b_cap * max_width],
            gz: vec![0.0; b_cap * max_width],
        }
    }
}

/// Sum of scaled observation log likelihoods over `rows`, optionally
/// accumulating `scale · Σ ∇ log p(y_r | θ)` into `grad`.
///
/// `grad` must be a full-length parameter gradient buffer; contributions are
/// added, not assigned. Returns `scale · Σ_r log p(y_r | θ)`.
pub(crate) fn likelihood_batch(
    config: &NetworkConfig,
    layout: &ParamLayout,
    values: &[f64],
    feats: &FeatureMatrix,
    ys: &[f64],
    rows: &[usize],
    scale: f64,
    ws: &mut Workspace,
    mut grad: Option<&mut [f64]>,
) -> Result<f64> {
    let b = rows.len();
    if b == 0 {
        return Ok(0.0);
    }
    assert!(b <= ws.b_cap, "batch exceeds workspace capacity");
    let m = config.num_features;
    if feats.n_cols() != m {
        return Err(Error::dim("feature matrix", m, feats.n_cols()));
    }

    // Per-batch precomputation.
    for (e, &xi) in ws
        .exp_scale
        .iter_mut()
        .zip(&values[layout.expect(BlockKind::InputScale)])
    {
        *e = xi.exp();
    }
    for layer in 1..=ws.n_internal {
        let logits = &values[layout.expect(BlockKind::ActivationLogits(layer))];
        softmax_into(logits, &mut ws.act_weights[layer - 1]);
    }

    // Forward: input scaling.
    for (r, &row) in rows.iter().enumerate() {
        let x = feats.row(row);
        let h0 = &mut ws.h[0][r * m..(r + 1) * m];
        for ((h, &xv), &e) in h0.iter_mut().zip(x).zip(&ws.exp_scale) {
            *h = e * xv;
        }
    }

    // Forward: layers.
    let n_layers = ws.widths.len() - 1;
    for layer in 1..=n_layers {
        let n_in = ws.widths[layer - 1];
        let n_out = ws.widths[layer];
        let w = &values[layout.expect(BlockKind::Weights(layer))];
        let bias = &values[layout.expect(BlockKind::Biases(layer))];
        let inv_sqrt = 1.0 / (n_in as f64).sqrt();
        {
            let (h_prev, z_cur) = (&ws.h[layer - 1], &mut ws.z[layer - 1]);
            for r in 0..b {
                let h_row = &h_prev[r * n_in..(r + 1) * n_in];
                let z_row = &mut z_cur[r * n_out..(r + 1) * n_out];
                for i in 0..n_out {
                    let w_row = &w[i * n_in..(i + 1) * n_in];
                    let mut acc = 0.0;
                    for (wj, hj) in w_row.iter().zip(h_row) {
                        acc += wj * hj;
                    }
                    z_row[i] = acc * inv_sqrt + bias[i];
                }
            }
        }
        if layer <= ws.n_internal {
            let acts = &config.activations[layer - 1];
            let weights = &ws.act_weights[layer - 1];
            let n = b * n_out;
            let z_cur = &ws.z[layer - 1];
            for (j, act) in acts.iter().enumerate() {
                let u_plane = &mut ws.u[layer - 1][j];
                for e in 0..n {
                    u_plane[e] = act.apply(z_cur[e]);
                }
            }
            let h_cur = &mut ws.h[layer];
            for e in 0..n {
                let mut blended = 0.0;
                for (j, &wgt) in weights.iter().enumerate() {
                    blended += wgt * ws.u[layer - 1][j][e];
                }
                h_cur[e] = blended;
            }
        }
    }

    // Likelihood and output-plane gradient.
    let obs_range = layout.expect(BlockKind::Observation);
    let prepared = PreparedObs::new(config.observation, &values[obs_range.clone()]);
    let z_out = &ws.z[n_layers - 1];
    let mut ll_sum = 0.0;
    let mut obs_grad = [0.0; 2];
    for (r, &row) in rows.iter().enumerate() {
        let field = z_out[r];
        if !field.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite field value for record {row}"
            )));
        }
        let y = ys[row];
        if grad.is_some() {
            let (lp, d_field, d_raw) = prepared.grads(field, y);
            ll_sum += lp;
            ws.gz[r] = scale * d_field;
            obs_grad[0] += d_raw[0];
            obs_grad[1] += d_raw[1];
        } else {
            ll_sum += prepared.log_density(field, y);
        }
    }

    let Some(grad) = grad.as_deref_mut() else {
        return Ok(scale * ll_sum);
    };
    for (k, idx) in obs_range.enumerate() {
        grad[idx] += scale * obs_grad[k];
    }

    // Backward pass. `gz` holds ∂/∂z for the current layer.
    for layer in (1..=n_layers).rev() {
        let n_in = ws.widths[layer - 1];
        let n_out = ws.widths[layer];
        let w_range = layout.expect(BlockKind::Weights(layer));
        let b_range = layout.expect(BlockKind::Biases(layer));
        let inv_sqrt = 1.0 / (n_in as f64).sqrt();

        // Bias and weight gradients.
        {
            let h_prev = &ws.h[layer - 1];
            for r in 0..b {
                let gz_row = &ws.gz[r * n_out..(r + 1) * n_out];
                let h_row = &h_prev[r * n_in..(r + 1) * n_in];
                for i in 0..n_out {
                    let g = gz_row[i];
                    grad[b_range.start + i] += g;
                    let c = g * inv_sqrt;
                    let w_grad_row =
                        &mut grad[w_range.start + i * n_in..w_range.start + (i + 1) * n_in];
                    for (wg, hj) in w_grad_row.iter_mut().zip(h_row) {
                        *wg += c * hj;
                    }
                }
            }
        }

        // Gradient with respect to the layer's input plane.
        {
            let w = &values[w_range];
            for r in 0..b {
                let gh_row = &mut ws.gh[r * n_in..(r + 1) * n_in];
                gh_row.fill(0.0);
                let gz_row = &ws.gz[r * n_out..(r + 1) * n_out];
                for i in 0..n_out {
                    let c = gz_row[i] * inv_sqrt;
                    let w_row = &w[i * n_in..(i + 1) * n_in];
                    for (gh, wj) in gh_row.iter_mut().zip(w_row) {
                        *gh += c * wj;
                    }
                }
            }
        }

        if layer > 1 {
            // The input plane is a blended activation of layer-1's z.
            let inner = layer - 1;
            let acts = &config.activations[inner - 1];
            let weights = &ws.act_weights[inner - 1];
            let n = b * n_in;
            let z_prev = &ws.z[inner - 1];

            // Activation-logit gradients: a_j = Σ_e gh_e · u_j(z_e), then
            // the softmax Jacobian gives ∂/∂γ_k = w_k (a_k − Σ_j w_j a_j).
            let logits_range = layout.expect(BlockKind::ActivationLogits(inner));
            let mut a = [0.0; 8];
            debug_assert!(acts.len() <= 8);
            for j in 0..acts.len() {
                let u_plane = &ws.u[inner - 1][j];
                let mut acc = 0.0;
                for e in 0..n {
                    acc += ws.gh[e] * u_plane[e];
                }
                a[j] = acc;
            }
            let a_bar: f64 = weights.iter().zip(&a).map(|(&w, &aj)| w * aj).sum();
            for (k, idx) in logits_range.enumerate() {
                grad[idx] += weights[k] * (a[k] - a_bar);
            }

            // Convert gh to gz for the inner layer.
            for e in 0..n {
                let z = z_prev[e];
                let mut slope = 0.0;
                for (j, act) in acts.iter().enumerate() {
                    slope += weights[j] * act.derivative(z, ws.u[inner - 1][j][e]);
                }
                ws.gz[e] = ws.gh[e] * slope;
            }
        } else {
            // Input scaling: h⁰_j = e^{ξ⁰_j} x_j, so ∂/∂ξ⁰_j = gh_j · h⁰_j.
            let scale_range = layout.expect(BlockKind::InputScale);
            let h0 = &ws.h[0];
            for r in 0..b {
                for j in 0..n_in {
                    grad[scale_range.start + j] += ws.gh[r * n_in + j] * h0[r * n_in + j];
                }
            }
        }
    }
    Ok(scale * ll_sum)
}

fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &g) in out.iter_mut().zip(logits) {
        *o = (g - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// Log prior density of the parameters, optionally accumulating its
/// gradient. See [`PriorScope`] for which terms are included.
pub(crate) fn prior_value_grad(
    config: &NetworkConfig,
    layout: &ParamLayout,
    values: &[f64],
    scope: PriorScope,
    mut grad: Option<&mut [f64]>,
) -> f64 {
    let mut total = 0.0;
    if scope == PriorScope::Full {
        for block in layout.blocks() {
            if block.kind.is_hierarchical() {
                continue;
            }
            for i in block.range() {
                let v = values[i];
                total += -0.5 * v * v - 0.5 * LN_2PI;
                if let Some(g) = grad.as_deref_mut() {
                    g[i] -= v;
                }
            }
        }
    }
    let n_layers = config.num_layers();
    for layer in 1..=n_layers {
        let xi_idx = layout.expect(BlockKind::WeightScale(layer)).start;
        let xi = values[xi_idx];
        let var = softplus(xi);
        let ln_var = var.ln();
        let inv_var = 1.0 / var;
        let mut xi_acc = 0.0;
        for kind in [BlockKind::Weights(layer), BlockKind::Biases(layer)] {
            for i in layout.expect(kind) {
                let w = values[i];
                total += -0.5 * LN_2PI - 0.5 * ln_var - 0.5 * w * w * inv_var;
                xi_acc += 0.5 * (w * w * inv_var - 1.0) * inv_var;
                if let Some(g) = grad.as_deref_mut() {
                    g[i] -= w * inv_var;
                }
            }
        }
        if let Some(g) = grad.as_deref_mut() {
            g[xi_idx] += xi_acc * sigmoid(xi);
        }
    }
    total
}

fn check_params(config: &NetworkConfig, params: &ParamVector) -> Result<()> {
    let expected = ParamLayout::from_config(config).len();
    if params.len() != expected {
        return Err(Error::dim("parameter vector", expected, params.len()));
    }
    if params.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("parameter vector".into()));
    }
    Ok(())
}

/// Log density of the parameters under the prior.
pub fn log_prior(config: &NetworkConfig, params: &ParamVector) -> Result<f64> {
    check_params(config, params)?;
    Ok(prior_value_grad(
        config,
        &params.layout,
        &params.values,
        PriorScope::Full,
        None,
    ))
}

/// Log density of a single observation `y` at the given covariates.
pub fn log_likelihood(
    config: &NetworkConfig,
    params: &ParamVector,
    features: &[f64],
    y: f64,
) -> Result<f64> {
    check_params(config, params)?;
    let field = super::forward(config, params, features)?;
    let prepared = PreparedObs::new(
        config.observation,
        params.block(BlockKind::Observation),
    );
    Ok(prepared.log_density(field, y))
}

/// Log prior plus total log likelihood over the dataset.
pub fn log_joint(
    config: &NetworkConfig,
    params: &ParamVector,
    features: &FeatureMatrix,
    ys: &[f64],
) -> Result<f64> {
    check_params(config, params)?;
    if features.n_rows() != ys.len() {
        return Err(Error::dim("responses", features.n_rows(), ys.len()));
    }
    let mut total = prior_value_grad(
        config,
        &params.layout,
        &params.values,
        PriorScope::Full,
        None,
    );
    let prepared = PreparedObs::new(
        config.observation,
        params.block(BlockKind::Observation),
    );
    for (i, &y) in ys.iter().enumerate() {
        let field = super::forward(config, params, features.row(i))?;
        total += prepared.log_density(field, y);
    }
    Ok(total)
}

/// Value and exact gradient of `log_prior(θ) + scale · Σ_batch log p(y | θ)`.
///
/// The batch is the entire supplied matrix; `scale` is typically `N / B`
/// when the matrix holds a minibatch of a larger dataset.
pub fn log_joint_grad(
    config: &NetworkConfig,
    params: &ParamVector,
    features: &FeatureMatrix,
    ys: &[f64],
    scale: f64,
) -> Result<(f64, Vec<f64>)> {
    check_params(config, params)?;
    if features.n_rows() != ys.len() {
        return Err(Error::dim("responses", features.n_rows(), ys.len()));
    }
    let mut grad = vec![0.0; params.len()];
    let mut value = prior_value_grad(
        config,
        &params.layout,
        &params.values,
        PriorScope::Full,
        Some(&mut grad),
    );
    let rows: Vec<usize> = (0..features.n_rows()).collect();
    let mut ws = Workspace::new(config, rows.len().max(1));
    value += likelihood_batch(
        config,
        &params.layout,
        &params.values,
        features,
        ys,
        &rows,
        scale,
        &mut ws,
        Some(&mut grad),
    )?;
    Ok((value, grad))
}
