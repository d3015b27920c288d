//! The Bayesian neural field: network configuration, parameter layout,
//! priors, forward evaluation, and exact log-density gradients.
//!
//! The network maps a covariate vector `x ∈ R^m` to a scalar field value
//! `F`. Layer `ℓ` computes `z^ℓ = Ω^ℓ h^{ℓ-1} / √N^{ℓ-1} + β^ℓ`; internal
//! layers then blend a set of activation primitives with softmax weights,
//! `h^ℓ_i = Σ_j softmax(γ^ℓ)_j · u_j(z^ℓ_i)`, while the output layer is
//! linear with a single unit. The input is scaled elementwise by `e^{ξ⁰}`.
//!
//! Priors: every unconstrained parameter (`ξ⁰`, `ξ^ℓ`, `γ^ℓ`, observation
//! raws) is standard normal; weights and biases of layer `ℓ` are normal with
//! mean zero and variance `σ^ℓ = softplus(ξ^ℓ)` shared across the layer.
//! The `1/√N^{ℓ-1}` scaling keeps the induced field variance stable as
//! widths grow.

mod grad;
pub mod obs;

pub use grad::{log_joint, log_joint_grad, log_likelihood, log_prior};
pub(crate) use grad::{likelihood_batch, prior_value_grad, PriorScope, Workspace};
pub use obs::{ObservationModel, ObservationParams};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::ops::Range;

use crate::error::{Error, Result};
use crate::features::{build_features, feature_count, FeatureSpec, SpaceTimeIndex};

pub(crate) const LN_2PI: f64 = 1.8378770664093453;

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of [`softplus`] on positive inputs.
pub fn softplus_inv(y: f64) -> f64 {
    debug_assert!(y > 0.0);
    if y > 30.0 {
        y
    } else {
        (y.exp() - 1.0).ln()
    }
}

/// Logistic function, the derivative of [`softplus`].
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Overwrites `out` with softmax of `logits` (max-shifted for stability).
pub(crate) fn softmax(logits: &[f64], out: &mut Vec<f64>) {
    out.clear();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for &g in logits {
        let e = (g - max).exp();
        total += e;
        out.push(e);
    }
    for w in out.iter_mut() {
        *w /= total;
    }
}

/// Activation primitives available to internal layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Elu,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::Elu => {
                if z > 0.0 {
                    z
                } else {
                    z.exp_m1()
                }
            }
        }
    }

    /// Derivative at `z`, reusing the stored activation value `u`.
    pub(crate) fn derivative(self, z: f64, u: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - u * u,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Elu => {
                if z > 0.0 {
                    1.0
                } else {
                    u + 1.0
                }
            }
        }
    }
}

/// Architecture of the field network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Covariate dimension `m` fed to the first layer.
    pub num_features: usize,
    /// Widths of the internal layers (empty for a purely linear field).
    pub hidden_widths: Vec<usize>,
    /// Activation primitives per internal layer, blended by softmax weights.
    pub activations: Vec<Vec<Activation>>,
    pub observation: ObservationModel,
}

impl NetworkConfig {
    /// Two internal layers of width 64, each blending tanh and ELU.
    pub fn with_default_architecture(num_features: usize, observation: ObservationModel) -> Self {
        NetworkConfig {
            num_features,
            hidden_widths: vec![64, 64],
            activations: vec![vec![Activation::Tanh, Activation::Elu]; 2],
            observation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_features == 0 {
            return Err(Error::invalid("network config", "num_features must be ≥ 1"));
        }
        if self.activations.len() != self.hidden_widths.len() {
            return Err(Error::invalid(
                "network config",
                format!(
                    "{} activation sets for {} internal layers",
                    self.activations.len(),
                    self.hidden_widths.len()
                ),
            ));
        }
        if self.hidden_widths.iter().any(|&w| w == 0) {
            return Err(Error::invalid("network config", "layer widths must be ≥ 1"));
        }
        if self.activations.iter().any(Vec::is_empty) {
            return Err(Error::invalid(
                "network config",
                "each internal layer needs at least one activation primitive",
            ));
        }
        Ok(())
    }

    /// Widths including input (`m`) and output (1): `[m, N¹, …, N^L, 1]`.
    pub fn layer_widths(&self) -> Vec<usize> {
        let mut widths = Vec::with_capacity(self.hidden_widths.len() + 2);
        widths.push(self.num_features);
        widths.extend_from_slice(&self.hidden_widths);
        widths.push(1);
        widths
    }

    /// Number of layers with weights (internal layers plus output).
    pub fn num_layers(&self) -> usize {
        self.hidden_widths.len() + 1
    }
}

/// Hex-encoded digest of the network configuration, stored in checkpoints
/// to detect mismatched reloads.
pub fn config_hash(config: &NetworkConfig) -> String {
    let json = serde_json::to_vec(config).expect("config serializes");
    let digest = Sha256::digest(&json);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Identity of one contiguous block in the flat parameter vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "layer")]
pub enum BlockKind {
    /// `ξ⁰`: per-covariate log input scales.
    InputScale,
    /// `ξ^ℓ`: the raw controlling layer `ℓ`'s weight prior stddev.
    WeightScale(usize),
    /// `γ^ℓ`: softmax logits over activation primitives.
    ActivationLogits(usize),
    /// `Ω^ℓ`: weight matrix, row-major `N^ℓ × N^{ℓ-1}`.
    Weights(usize),
    /// `β^ℓ`: biases.
    Biases(usize),
    /// Raw observation noise parameters.
    Observation,
}

impl BlockKind {
    pub fn name(&self) -> String {
        match self {
            BlockKind::InputScale => "input_scale".into(),
            BlockKind::WeightScale(l) => format!("layer{l}.weight_scale"),
            BlockKind::ActivationLogits(l) => format!("layer{l}.activation_logits"),
            BlockKind::Weights(l) => format!("layer{l}.weights"),
            BlockKind::Biases(l) => format!("layer{l}.biases"),
            BlockKind::Observation => "observation".into(),
        }
    }

    /// True for blocks whose prior stddev depends on the layer's `ξ^ℓ`
    /// rather than being fixed at 1.
    pub fn is_hierarchical(&self) -> bool {
        matches!(self, BlockKind::Weights(_) | BlockKind::Biases(_))
    }
}

/// One named block: `values[start..start+len]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamBlock {
    pub name: String,
    pub kind: BlockKind,
    pub start: usize,
    pub len: usize,
}

impl ParamBlock {
    pub fn range(&self) -> Range<usize> {
        self.start..self.start + self.len
    }
}

/// Map from named parameter blocks to index ranges in the flat vector.
///
/// Block order: input scales; then per layer `ℓ = 1..=L+1` its weight-scale
/// raw, activation logits (internal layers only), weights (row-major), and
/// biases; finally the observation block. Blocks are disjoint and cover
/// `0..len()` exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamLayout {
    blocks: Vec<ParamBlock>,
    total: usize,
}

impl ParamLayout {
    pub fn from_config(config: &NetworkConfig) -> Self {
        let widths = config.layer_widths();
        let mut blocks = Vec::new();
        let mut cursor = 0;
        let mut push = |kind: BlockKind, len: usize, cursor: &mut usize| {
            blocks.push(ParamBlock {
                name: kind.name(),
                kind,
                start: *cursor,
                len,
            });
            *cursor += len;
        };
        push(BlockKind::InputScale, config.num_features, &mut cursor);
        for layer in 1..=config.num_layers() {
            let n_in = widths[layer - 1];
            let n_out = widths[layer];
            push(BlockKind::WeightScale(layer), 1, &mut cursor);
            if layer <= config.hidden_widths.len() {
                let n_act = config.activations[layer - 1].len();
                push(BlockKind::ActivationLogits(layer), n_act, &mut cursor);
            }
            push(BlockKind::Weights(layer), n_out * n_in, &mut cursor);
            push(BlockKind::Biases(layer), n_out, &mut cursor);
        }
        push(
            BlockKind::Observation,
            config.observation.num_noise_params(),
            &mut cursor,
        );
        ParamLayout {
            blocks,
            total: cursor,
        }
    }

    /// Total number of parameters.
    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn blocks(&self) -> &[ParamBlock] {
        &self.blocks
    }

    pub fn range(&self, kind: BlockKind) -> Option<Range<usize>> {
        self.blocks
            .iter()
            .find(|b| b.kind == kind)
            .map(ParamBlock::range)
    }

    pub(crate) fn expect(&self, kind: BlockKind) -> Range<usize> {
        self.range(kind)
            .unwrap_or_else(|| panic!("layout has no block {}", kind.name()))
    }
}

/// Flat parameter vector paired with its layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub values: Vec<f64>,
    pub layout: ParamLayout,
}

impl ParamVector {
    pub fn zeros(layout: ParamLayout) -> Self {
        ParamVector {
            values: vec![0.0; layout.len()],
            layout,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn block(&self, kind: BlockKind) -> &[f64] {
        &self.values[self.layout.expect(kind)]
    }

    pub fn block_mut(&mut self, kind: BlockKind) -> &mut [f64] {
        let range = self.layout.expect(kind);
        &mut self.values[range]
    }
}

/// Draws a parameter vector from the prior with a fresh RNG seeded by
/// `seed`.
pub fn init_params(config: &NetworkConfig, seed: u64) -> Result<ParamVector> {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    init_params_with_rng(config, &mut rng)
}

/// Draws a parameter vector from the prior using the caller's RNG.
///
/// Blocks are drawn in layout order; weights and biases condition on the
/// layer's already-drawn `ξ^ℓ` through the variance `σ^ℓ = softplus(ξ^ℓ)`.
pub fn init_params_with_rng<R: Rng + ?Sized>(
    config: &NetworkConfig,
    rng: &mut R,
) -> Result<ParamVector> {
    config.validate()?;
    let layout = ParamLayout::from_config(config);
    let mut values = vec![0.0; layout.len()];
    let mut layer_sigma = 1.0;
    for block in layout.blocks() {
        match block.kind {
            BlockKind::InputScale
            | BlockKind::ActivationLogits(_)
            | BlockKind::Observation => {
                for v in &mut values[block.range()] {
                    *v = StandardNormal.sample(rng);
                }
            }
            BlockKind::WeightScale(_) => {
                let xi: f64 = StandardNormal.sample(rng);
                values[block.start] = xi;
                layer_sigma = softplus(xi).sqrt();
            }
            BlockKind::Weights(_) | BlockKind::Biases(_) => {
                for v in &mut values[block.range()] {
                    let z: f64 = StandardNormal.sample(rng);
                    *v = layer_sigma * z;
                }
            }
        }
    }
    Ok(ParamVector { values, layout })
}

/// Evaluates the field value `F` at one covariate vector.
pub fn forward(config: &NetworkConfig, params: &ParamVector, features: &[f64]) -> Result<f64> {
    if features.len() != config.num_features {
        return Err(Error::dim(
            "features",
            config.num_features,
            features.len(),
        ));
    }
    if params.len() != params.layout.len() || params.layout.len() != ParamLayout::from_config(config).len() {
        return Err(Error::dim(
            "parameter vector",
            ParamLayout::from_config(config).len(),
            params.len(),
        ));
    }

    let layout = &params.layout;
    let values = &params.values;
    let widths = config.layer_widths();

    let scale = &values[layout.expect(BlockKind::InputScale)];
    let mut h: Vec<f64> = features
        .iter()
        .zip(scale)
        .map(|(&x, &xi)| xi.exp() * x)
        .collect();

    let mut weights_buf = Vec::new();
    for layer in 1..=config.num_layers() {
        let n_in = widths[layer - 1];
        let n_out = widths[layer];
        let w = &values[layout.expect(BlockKind::Weights(layer))];
        let b = &values[layout.expect(BlockKind::Biases(layer))];
        let inv_sqrt = 1.0 / (n_in as f64).sqrt();

        let mut z = vec![0.0; n_out];
        for i in 0..n_out {
            let row = &w[i * n_in..(i + 1) * n_in];
            let mut acc = 0.0;
            for (wj, hj) in row.iter().zip(&h) {
                acc += wj * hj;
            }
            z[i] = acc * inv_sqrt + b[i];
        }

        if layer <= config.hidden_widths.len() {
            let logits = &values[layout.expect(BlockKind::ActivationLogits(layer))];
            softmax(logits, &mut weights_buf);
            let acts = &config.activations[layer - 1];
            for zi in &mut z {
                let mut blended = 0.0;
                for (act, &wgt) in acts.iter().zip(&weights_buf) {
                    blended += wgt * act.apply(*zi);
                }
                *zi = blended;
            }
        }
        h = z;
    }
    Ok(h[0])
}

/// Samples a synthetic field: draws parameters from the prior with `seed`,
/// evaluates `F` at each index, and draws one observation per index.
pub fn simulate_field(
    config: &NetworkConfig,
    spec: &FeatureSpec,
    indices: &[SpaceTimeIndex],
    seed: u64,
) -> Result<Vec<f64>> {
    use rand::SeedableRng;
    if feature_count(spec) != config.num_features {
        return Err(Error::dim(
            "simulation features",
            config.num_features,
            feature_count(spec),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = init_params_with_rng(config, &mut rng)?;
    let obs = config
        .observation
        .derive_params(params.block(BlockKind::Observation));
    let mut out = Vec::with_capacity(indices.len());
    for idx in indices {
        let x = build_features(spec, idx)?;
        let field = forward(config, &params, &x)?;
        if !field.is_finite() {
            return Err(Error::Numerical(
                "non-finite field value during simulation".into(),
            ));
        }
        out.push(obs.sample(field, &mut rng));
    }
    Ok(out)
}
