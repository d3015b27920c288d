//! Observation models linking the latent field value to the data
//! distribution.
//!
//! Each model carries its noise parameters in unconstrained ("raw") form
//! inside the parameter vector and maps them to constrained values through
//! softplus. The field value `F` parameterizes the location (Normal,
//! StudentT) or log-rate (Poisson).

use rand::Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};
use statrs::distribution::ContinuousCDF;
use statrs::function::beta::beta_reg;
use statrs::function::erf::erfc;
use statrs::function::gamma::{digamma, gamma_ur, ln_gamma};

use super::{sigmoid, softplus};

const LN_2PI: f64 = 1.8378770664093453;

/// Kind of data distribution attached to the field output.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservationModel {
    /// `y ~ Normal(F, variance)`, variance = softplus(raw₀).
    #[default]
    Normal,
    /// `y ~ StudentT(location F, scale, df)`, scale = softplus(raw₀),
    /// df = 2 + softplus(raw₁).
    StudentT,
    /// `y ~ Poisson(e^F)`, no noise parameters.
    Poisson,
}

impl ObservationModel {
    /// Number of unconstrained noise parameters stored in the parameter
    /// vector.
    pub fn num_noise_params(self) -> usize {
        match self {
            ObservationModel::Normal => 1,
            ObservationModel::StudentT => 2,
            ObservationModel::Poisson => 0,
        }
    }

    /// Maps raw noise parameters to their constrained values.
    pub fn derive_params(self, raw: &[f64]) -> ObservationParams {
        match self {
            ObservationModel::Normal => ObservationParams::Normal {
                variance: softplus(raw[0]),
            },
            ObservationModel::StudentT => ObservationParams::StudentT {
                scale: softplus(raw[0]),
                df: 2.0 + softplus(raw[1]),
            },
            ObservationModel::Poisson => ObservationParams::Poisson,
        }
    }

    pub fn is_discrete(self) -> bool {
        matches!(self, ObservationModel::Poisson)
    }
}

/// Constrained observation parameters for one parameter draw.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ObservationParams {
    Normal { variance: f64 },
    StudentT { scale: f64, df: f64 },
    Poisson,
}

impl ObservationParams {
    /// Log density (or log mass) of `y` given the field value.
    ///
    /// Poisson mass at negative or non-integer `y` is zero, so the log
    /// density is `-inf` there.
    pub fn log_density(&self, field: f64, y: f64) -> f64 {
        match *self {
            ObservationParams::Normal { variance } => {
                let u = y - field;
                -0.5 * (LN_2PI + variance.ln() + u * u / variance)
            }
            ObservationParams::StudentT { scale, df } => {
                let u = (y - field) / scale;
                ln_gamma((df + 1.0) / 2.0)
                    - ln_gamma(df / 2.0)
                    - 0.5 * (df * std::f64::consts::PI).ln()
                    - scale.ln()
                    - 0.5 * (df + 1.0) * (1.0 + u * u / df).ln()
            }
            ObservationParams::Poisson => {
                if y < 0.0 || y.fract() != 0.0 {
                    return f64::NEG_INFINITY;
                }
                y * field - field.exp() - ln_gamma(y + 1.0)
            }
        }
    }

    /// Cumulative distribution function at `y`.
    pub fn cdf(&self, field: f64, y: f64) -> f64 {
        match *self {
            ObservationParams::Normal { variance } => {
                let sd = variance.sqrt();
                0.5 * erfc((field - y) / (sd * std::f64::consts::SQRT_2))
            }
            ObservationParams::StudentT { scale, df } => {
                let x = (y - field) / scale;
                let t = df / (df + x * x);
                let half = 0.5 * beta_reg(df / 2.0, 0.5, t);
                if x <= 0.0 {
                    half
                } else {
                    1.0 - half
                }
            }
            ObservationParams::Poisson => {
                if y < 0.0 {
                    return 0.0;
                }
                gamma_ur(y.floor() + 1.0, field.exp())
            }
        }
    }

    /// Mean of the distribution.
    pub fn mean(&self, field: f64) -> f64 {
        match *self {
            ObservationParams::Normal { .. } => field,
            // df > 2 always holds by construction, so the mean exists.
            ObservationParams::StudentT { .. } => field,
            ObservationParams::Poisson => field.exp(),
        }
    }

    /// Quantile of the single component. For Poisson this is the
    /// generalized inverse: the smallest integer whose CDF reaches `p`.
    pub fn quantile(&self, field: f64, p: f64) -> f64 {
        match *self {
            ObservationParams::Normal { variance } => {
                let std_normal = statrs::distribution::Normal::new(0.0, 1.0).unwrap();
                field + variance.sqrt() * std_normal.inverse_cdf(p)
            }
            ObservationParams::StudentT { scale, df } => {
                let t = statrs::distribution::StudentsT::new(0.0, 1.0, df).unwrap();
                field + scale * t.inverse_cdf(p)
            }
            ObservationParams::Poisson => {
                let lambda = field.exp();
                let std_normal = statrs::distribution::Normal::new(0.0, 1.0).unwrap();
                let seed = (lambda + std_normal.inverse_cdf(p) * lambda.sqrt())
                    .floor()
                    .max(0.0);
                let mut k = seed;
                while k > 0.0 && self.cdf(field, k - 1.0) >= p {
                    k -= 1.0;
                }
                while self.cdf(field, k) < p {
                    k += 1.0;
                }
                k
            }
        }
    }

    /// Draws one observation given the field value.
    pub fn sample<R: Rng + ?Sized>(&self, field: f64, rng: &mut R) -> f64 {
        match *self {
            ObservationParams::Normal { variance } => {
                let z: f64 = rand_distr::StandardNormal.sample(rng);
                field + variance.sqrt() * z
            }
            ObservationParams::StudentT { scale, df } => {
                let z: f64 = rand_distr::StudentT::new(df).unwrap().sample(rng);
                field + scale * z
            }
            ObservationParams::Poisson => {
                rand_distr::Poisson::new(field.exp()).unwrap().sample(rng)
            }
        }
    }
}

/// Observation model with derived parameters and raw-parameter chain
/// factors, prepared once per batch so per-record gradient work is cheap.
#[derive(Clone, Copy, Debug)]
pub(crate) struct PreparedObs {
    pub params: ObservationParams,
    /// d(constrained)/d(raw) per raw parameter.
    chain: [f64; 2],
}

impl PreparedObs {
    pub fn new(model: ObservationModel, raw: &[f64]) -> Self {
        debug_assert_eq!(raw.len(), model.num_noise_params());
        let mut chain = [0.0; 2];
        for (c, &r) in chain.iter_mut().zip(raw) {
            *c = sigmoid(r);
        }
        PreparedObs {
            params: model.derive_params(raw),
            chain,
        }
    }

    pub fn log_density(&self, field: f64, y: f64) -> f64 {
        self.params.log_density(field, y)
    }

    /// Log density plus its gradient with respect to the field value and
    /// each raw noise parameter.
    pub fn grads(&self, field: f64, y: f64) -> (f64, f64, [f64; 2]) {
        match self.params {
            ObservationParams::Normal { variance } => {
                let u = y - field;
                let lp = -0.5 * (LN_2PI + variance.ln() + u * u / variance);
                let d_field = u / variance;
                let d_var = -0.5 / variance + u * u / (2.0 * variance * variance);
                (lp, d_field, [d_var * self.chain[0], 0.0])
            }
            ObservationParams::StudentT { scale, df } => {
                let u = (y - field) / scale;
                let a = 1.0 + u * u / df;
                let lp = ln_gamma((df + 1.0) / 2.0)
                    - ln_gamma(df / 2.0)
                    - 0.5 * (df * std::f64::consts::PI).ln()
                    - scale.ln()
                    - 0.5 * (df + 1.0) * a.ln();
                let d_field = (df + 1.0) * u / ((df + u * u) * scale);
                let d_scale = -1.0 / scale + (df + 1.0) * u * u / ((df + u * u) * scale);
                let d_df = 0.5 * digamma((df + 1.0) / 2.0) - 0.5 * digamma(df / 2.0)
                    - 0.5 / df
                    - 0.5 * a.ln()
                    + 0.5 * (df + 1.0) * u * u / (df * df * a);
                (lp, d_field, [d_scale * self.chain[0], d_df * self.chain[1]])
            }
            ObservationParams::Poisson => {
                let rate = field.exp();
                let lp = y * field - rate - ln_gamma(y + 1.0);
                (lp, y - rate, [0.0, 0.0])
            }
        }
    }
}
