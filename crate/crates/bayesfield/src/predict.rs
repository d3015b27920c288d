//! Posterior-predictive queries at novel space-time indices.
//!
//! A prediction is an equally weighted mixture over parameter draws: each
//! draw contributes its field value `F` and observation parameters, and
//! the mixture's density/CDF/mean are arithmetic averages over draws.
//! Quantiles invert the mixture CDF with a bracketed root search; for
//! count models the generalized inverse (smallest integer with CDF ≥ α)
//! is returned instead.

use rand::Rng;

use crate::error::{Error, Result};
use crate::features::{build_features, SpaceTimeIndex};
use crate::features::FeatureSpec;
use crate::inference::{sample_ensemble, PosteriorEnsemble};
use crate::model::{config_hash, forward, BlockKind, NetworkConfig, ObservationModel};
use crate::model::{ObservationParams, ParamVector};
use crate::root::{find_root, RootOptions};

/// Sampling controls for predictive queries.
///
/// Point ensembles (MAP/MLE) always use their members as the mixture
/// components, so these options only affect variational ensembles, which
/// are materialized as `n_draws` parameter vectors drawn once per query
/// batch with the given seed.
#[derive(Clone, Copy, Debug)]
pub struct PredictOptions {
    pub n_draws: usize,
    pub seed: u64,
}

impl Default for PredictOptions {
    fn default() -> Self {
        PredictOptions { n_draws: 64, seed: 0 }
    }
}

/// Equally weighted predictive mixture at one index.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictiveMixture {
    model: ObservationModel,
    components: Vec<(f64, ObservationParams)>,
}

impl PredictiveMixture {
    /// Builds a mixture from `(field, observation params)` components.
    pub fn new(model: ObservationModel, components: Vec<(f64, ObservationParams)>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::EmptyInput("predictive mixture components".into()));
        }
        if components.iter().any(|(f, _)| !f.is_finite()) {
            return Err(Error::NonFinite("predictive field value".into()));
        }
        Ok(PredictiveMixture { model, components })
    }

    pub fn observation_model(&self) -> ObservationModel {
        self.model
    }

    pub fn components(&self) -> &[(f64, ObservationParams)] {
        &self.components
    }

    fn average<G: Fn(f64, &ObservationParams) -> f64>(&self, g: G) -> f64 {
        let total: f64 = self.components.iter().map(|(f, p)| g(*f, p)).sum();
        total / self.components.len() as f64
    }

    /// Mixture density at `y`. Count models return 0 at non-integer `y`.
    pub fn pdf(&self, y: f64) -> f64 {
        self.average(|f, p| p.log_density(f, y).exp())
    }

    /// Mixture distribution function `P(Y ≤ y)`.
    pub fn cdf(&self, y: f64) -> f64 {
        self.average(|f, p| p.cdf(f, y))
    }

    /// Mixture mean: the average of component means.
    pub fn mean(&self) -> f64 {
        self.average(|f, p| p.mean(f))
    }

    /// Solves `P(Y ≤ y) = α`.
    ///
    /// Continuous models satisfy `|cdf(quantile(α)) − α| ≤ 1e−8`; count
    /// models return the smallest integer whose CDF reaches `α`.
    pub fn quantile(&self, alpha: f64) -> Result<f64> {
        if !(alpha > 0.0 && alpha < 1.0) || !alpha.is_finite() {
            return Err(Error::invalid("alpha", "must lie strictly inside (0, 1)"));
        }
        if self.model.is_discrete() {
            return Ok(self.quantile_discrete(alpha));
        }
        // Component quantiles bracket the mixture quantile: at min_i q_i
        // every component CDF is ≤ α, at max_i q_i every one is ≥ α. The
        // small pad absorbs numerical error in the component quantiles,
        // and the expansion loop restores the bracket if that was not
        // enough.
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (f, p) in &self.components {
            let q = p.quantile(*f, alpha);
            lo = lo.min(q);
            hi = hi.max(q);
        }
        let pad = 1e-6 * (1.0 + lo.abs().max(hi.abs()));
        lo -= pad;
        hi += pad;
        let mut step = (hi - lo).max(1.0);
        for _ in 0..64 {
            if self.cdf(lo) <= alpha {
                break;
            }
            lo -= step;
            step *= 2.0;
        }
        let mut step = (hi - lo).max(1.0);
        for _ in 0..64 {
            if self.cdf(hi) >= alpha {
                break;
            }
            hi += step;
            step *= 2.0;
        }
        if self.cdf(lo) > alpha || self.cdf(hi) < alpha {
            return Err(Error::Numerical(format!(
                "could not bracket the {alpha} quantile"
            )));
        }
        let opts = RootOptions {
            rel_tol: 1e-10,
            abs_tol: 1e-300,
            f_tol: 1e-9,
            max_iter: 200,
        };
        find_root(|y| self.cdf(y) - alpha, lo, hi, opts)
    }

    /// Smallest integer `k` with mixture `CDF(k) ≥ α`.
    fn quantile_discrete(&self, alpha: f64) -> f64 {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (f, p) in &self.components {
            let q = p.quantile(*f, alpha);
            lo = lo.min(q);
            hi = hi.max(q);
        }
        // Every component CDF at its own quantile is ≥ α, so the mixture
        // CDF at hi is ≥ α; below lo every component is still short of α.
        let (mut lo, mut hi) = (lo as i64, hi as i64);
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            if self.cdf(mid as f64) >= alpha {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        lo as f64
    }

    /// Draws one value: a uniformly chosen component's observation draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let (f, p) = &self.components[rng.gen_range(0..self.components.len())];
        p.sample(*f, rng)
    }
}

fn check_compatibility(
    ens: &PosteriorEnsemble,
    config: &NetworkConfig,
    spec: &FeatureSpec,
) -> Result<()> {
    if ens.is_empty() {
        return Err(Error::EmptyInput("posterior ensemble".into()));
    }
    if ens.config_hash != config_hash(config) {
        return Err(Error::Incompatible(
            "ensemble was fitted under a different model configuration".into(),
        ));
    }
    let m = crate::features::feature_count(spec);
    if m != config.num_features {
        return Err(Error::dim("feature specification", config.num_features, m));
    }
    Ok(())
}

fn mixture_components(
    config: &NetworkConfig,
    draws: &[ParamVector],
    features: &[f64],
) -> Result<Vec<(f64, ObservationParams)>> {
    draws
        .iter()
        .map(|draw| {
            let field = forward(config, draw, features)?;
            if !field.is_finite() {
                return Err(Error::Numerical("non-finite predictive field".into()));
            }
            let obs = config
                .observation
                .derive_params(draw.block(BlockKind::Observation));
            Ok((field, obs))
        })
        .collect()
}

/// Predictive mixture at a single index.
pub fn predictive_at(
    ens: &PosteriorEnsemble,
    config: &NetworkConfig,
    spec: &FeatureSpec,
    idx: &SpaceTimeIndex,
    opts: &PredictOptions,
) -> Result<PredictiveMixture> {
    check_compatibility(ens, config, spec)?;
    let feats = build_features(spec, idx)?;
    let draws = sample_ensemble(ens, opts.n_draws.max(1), opts.seed)?;
    let components = mixture_components(config, &draws, &feats)?;
    PredictiveMixture::new(config.observation, components)
}

/// One scored index of a prediction table.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionRow {
    pub index: SpaceTimeIndex,
    pub mean: f64,
    /// Quantile values aligned with the table's `alphas`.
    pub quantiles: Vec<f64>,
}

/// Means and quantiles for a batch of query indices.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionTable {
    pub alphas: Vec<f64>,
    pub rows: Vec<PredictionRow>,
}

/// Evaluates the predictive mixture at every index.
///
/// Parameter draws are sampled once and shared across the whole batch, so
/// rows are jointly consistent and the output is deterministic in
/// `opts.seed`.
pub fn predict_batch(
    ens: &PosteriorEnsemble,
    config: &NetworkConfig,
    spec: &FeatureSpec,
    indices: &[SpaceTimeIndex],
    alphas: &[f64],
    opts: &PredictOptions,
) -> Result<PredictionTable> {
    check_compatibility(ens, config, spec)?;
    if alphas.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
        return Err(Error::invalid("quantiles", "must lie strictly inside (0, 1)"));
    }
    let draws = sample_ensemble(ens, opts.n_draws.max(1), opts.seed)?;
    let mut rows = Vec::with_capacity(indices.len());
    for idx in indices {
        let feats = build_features(spec, idx)?;
        let components = mixture_components(config, &draws, &feats)?;
        let mix = PredictiveMixture::new(config.observation, components)?;
        let quantiles = alphas
            .iter()
            .map(|&a| mix.quantile(a))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(PredictionRow {
            index: idx.clone(),
            mean: mix.mean(),
            quantiles,
        });
    }
    Ok(PredictionTable {
        alphas: alphas.to_vec(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::Frequency;
    use crate::inference::{Members, Method, VariationalParams};
    use crate::model::{init_params, softplus_inv, Activation, ParamLayout};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn normal_mix(pairs: &[(f64, f64)]) -> PredictiveMixture {
        let comps = pairs
            .iter()
            .map(|&(f, var)| (f, ObservationParams::Normal { variance: var }))
            .collect();
        PredictiveMixture::new(ObservationModel::Normal, comps).unwrap()
    }

    #[test]
    fn single_component_matches_component_distribution() {
        let mix = normal_mix(&[(0.3, 1.7)]);
        let comp = ObservationParams::Normal { variance: 1.7 };
        for y in [-2.0, 0.0, 0.3, 5.0] {
            assert_eq!(mix.cdf(y), comp.cdf(0.3, y));
            assert_eq!(mix.pdf(y), comp.log_density(0.3, y).exp());
        }
        assert_eq!(mix.mean(), 0.3);
    }

    #[test]
    fn identical_components_collapse_exactly() {
        let comps = vec![(1.2, ObservationParams::StudentT { scale: 0.8, df: 4.0 }); 4];
        let mix = PredictiveMixture::new(ObservationModel::StudentT, comps).unwrap();
        let single = ObservationParams::StudentT { scale: 0.8, df: 4.0 };
        for y in [-3.0, 0.0, 1.2, 2.5] {
            assert_eq!(mix.cdf(y), single.cdf(1.2, y));
        }
    }

    #[test]
    fn two_normal_density_at_midpoint() {
        // 0.5·φ(1) + 0.5·φ(−1) = φ(1) by symmetry.
        let mix = normal_mix(&[(0.0, 1.0), (2.0, 1.0)]);
        assert_abs_diff_eq!(mix.pdf(1.0), 0.2419707, epsilon = 1e-6);
    }

    #[test]
    fn cdf_limits_attain_zero_and_one() {
        let mix = normal_mix(&[(0.0, 1.0), (3.0, 0.5)]);
        assert_abs_diff_eq!(mix.cdf(-1e9), 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(mix.cdf(1e9), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn poisson_mixture_mean_averages_rates() {
        let comps = vec![
            (0.0, ObservationParams::Poisson),
            (2.0f64.ln(), ObservationParams::Poisson),
        ];
        let mix = PredictiveMixture::new(ObservationModel::Poisson, comps).unwrap();
        assert_abs_diff_eq!(mix.mean(), 1.5, epsilon = 1e-12);
    }

    #[test]
    fn pdf_integrates_to_one() {
        let comps = vec![
            (0.5, ObservationParams::Normal { variance: 0.6 }),
            (-1.0, ObservationParams::StudentT { scale: 1.1, df: 5.0 }),
            (2.0, ObservationParams::Normal { variance: 2.0 }),
        ];
        let mix = PredictiveMixture::new(ObservationModel::Normal, comps).unwrap();
        let (lo, hi, n) = (-400.0, 400.0, 400_000);
        let step = (hi - lo) / n as f64;
        let mut total = 0.0;
        for i in 0..=n {
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            total += w * mix.pdf(lo + i as f64 * step);
        }
        assert_abs_diff_eq!(total * step, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn standard_normal_quantiles() {
        let mix = normal_mix(&[(0.0, 1.0)]);
        assert_abs_diff_eq!(mix.quantile(0.5).unwrap(), 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(mix.quantile(0.975).unwrap(), 1.959964, epsilon = 1e-5);
    }

    #[test]
    fn symmetric_mixture_median_is_center() {
        let mix = normal_mix(&[(5.0 - 1.3, 0.7), (5.0 + 1.3, 0.7)]);
        assert_abs_diff_eq!(mix.quantile(0.5).unwrap(), 5.0, epsilon = 1e-9);
    }

    #[test]
    fn quantile_inverts_cdf_across_random_mixtures() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for case in 0..100 {
            let m = rng.gen_range(1..=16);
            let student = case % 2 == 1;
            let comps: Vec<(f64, ObservationParams)> = (0..m)
                .map(|_| {
                    let field = rng.gen_range(-5.0..5.0);
                    let p = if student {
                        ObservationParams::StudentT {
                            scale: rng.gen_range(0.05..3.0),
                            df: 2.0 + rng.gen_range(0.1..30.0),
                        }
                    } else {
                        ObservationParams::Normal {
                            variance: rng.gen_range(0.01..9.0),
                        }
                    };
                    (field, p)
                })
                .collect();
            let model = if student {
                ObservationModel::StudentT
            } else {
                ObservationModel::Normal
            };
            let mix = PredictiveMixture::new(model, comps).unwrap();
            let mut last = f64::NEG_INFINITY;
            for alpha in [0.01, 0.025, 0.5, 0.975, 0.99] {
                let q = mix.quantile(alpha).unwrap();
                assert!(
                    (mix.cdf(q) - alpha).abs() <= 1e-8,
                    "case {case}: |cdf(q) − {alpha}| = {}",
                    (mix.cdf(q) - alpha).abs()
                );
                assert!(q >= last, "quantiles not nondecreasing in alpha");
                last = q;
            }
        }
    }

    #[test]
    fn poisson_quantile_is_generalized_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..50 {
            let m = rng.gen_range(1..=8);
            let comps: Vec<(f64, ObservationParams)> = (0..m)
                .map(|_| (rng.gen_range(-1.0..3.0), ObservationParams::Poisson))
                .collect();
            let mix = PredictiveMixture::new(ObservationModel::Poisson, comps).unwrap();
            for alpha in [0.01, 0.1, 0.5, 0.9, 0.999] {
                let q = mix.quantile(alpha).unwrap();
                assert_eq!(q, q.floor());
                assert!(mix.cdf(q) >= alpha);
                if q > 0.0 {
                    assert!(mix.cdf(q - 1.0) < alpha);
                }
            }
        }
    }

    #[test]
    fn cdf_and_pdf_match_monte_carlo() {
        let comps = vec![
            (-1.0, ObservationParams::Normal { variance: 0.8 }),
            (0.5, ObservationParams::StudentT { scale: 0.9, df: 6.0 }),
            (2.0, ObservationParams::Normal { variance: 1.5 }),
        ];
        let mix = PredictiveMixture::new(ObservationModel::Normal, comps).unwrap();
        let n = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let samples: Vec<f64> = (0..n).map(|_| mix.sample(&mut rng)).collect();
        for probe in [-2.0, -0.5, 0.5, 1.5, 3.0] {
            let p = mix.cdf(probe);
            let hits = samples.iter().filter(|s| **s <= probe).count() as f64 / n as f64;
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!(
                (hits - p).abs() <= 3.0 * se.max(1e-4),
                "cdf at {probe}: mc {hits} vs {p}"
            );
            let h = 0.05;
            let window = samples
                .iter()
                .filter(|s| (**s - probe).abs() <= h)
                .count() as f64
                / n as f64;
            let dens = window / (2.0 * h);
            let pd = mix.pdf(probe);
            let se_dens = (window * (1.0 - window) / n as f64).sqrt() / (2.0 * h);
            // Allow a small bin-curvature bias on top of sampling noise.
            assert!(
                (dens - pd).abs() <= 3.0 * se_dens + 0.01 * pd.max(0.1),
                "pdf at {probe}: mc {dens} vs {pd}"
            );
        }
    }

    #[test]
    fn invalid_alpha_is_rejected() {
        let mix = normal_mix(&[(0.0, 1.0)]);
        for alpha in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(mix.quantile(alpha).is_err());
        }
        assert!(PredictiveMixture::new(ObservationModel::Normal, vec![]).is_err());
    }

    // ---- Ensemble-level queries ----

    fn grid_spec() -> FeatureSpec {
        FeatureSpec::linear_only(2)
    }

    fn point_ensemble(config: &NetworkConfig, m: usize) -> PosteriorEnsemble {
        let members: Vec<ParamVector> = (0..m)
            .map(|i| init_params(config, 40 + i as u64).unwrap())
            .collect();
        PosteriorEnsemble {
            method: Method::Map,
            members: Members::Point(members),
            config_hash: config_hash(config),
        }
    }

    fn small_config() -> NetworkConfig {
        NetworkConfig {
            num_features: crate::features::feature_count(&grid_spec()),
            hidden_widths: vec![4],
            activations: vec![vec![Activation::Tanh, Activation::Elu]],
            observation: ObservationModel::Normal,
        }
    }

    fn indices() -> Vec<SpaceTimeIndex> {
        let mut out = Vec::new();
        for t in 0..3 {
            for s in 0..2 {
                out.push(SpaceTimeIndex {
                    coords: vec![s as f64, 0.5 * s as f64 - 1.0],
                    time: t as f64,
                });
            }
        }
        out
    }

    #[test]
    fn predictive_mixture_pairs_fields_with_member_noise() {
        let config = small_config();
        let ens = point_ensemble(&config, 3);
        let idx = &indices()[0];
        let mix = predictive_at(&ens, &config, &grid_spec(), idx, &PredictOptions::default())
            .unwrap();
        assert_eq!(mix.components().len(), 3);
        let feats = build_features(&grid_spec(), idx).unwrap();
        let Members::Point(members) = &ens.members else {
            panic!("expected point ensemble")
        };
        for (member, (field, obs)) in members.iter().zip(mix.components()) {
            assert_eq!(*field, forward(&config, member, &feats).unwrap());
            assert_eq!(
                *obs,
                config
                    .observation
                    .derive_params(member.block(BlockKind::Observation))
            );
        }
    }

    #[test]
    fn batch_has_one_row_per_index_with_ordered_quantiles() {
        let config = small_config();
        let ens = point_ensemble(&config, 4);
        let table = predict_batch(
            &ens,
            &config,
            &grid_spec(),
            &indices(),
            &[0.1, 0.5, 0.9],
            &PredictOptions::default(),
        )
        .unwrap();
        assert_eq!(table.rows.len(), indices().len());
        for row in &table.rows {
            assert!(row.quantiles.windows(2).all(|w| w[0] <= w[1]));
            assert!(row.mean.is_finite());
        }
    }

    #[test]
    fn single_member_symmetric_median_equals_mean() {
        let config = small_config();
        let ens = point_ensemble(&config, 1);
        let table = predict_batch(
            &ens,
            &config,
            &grid_spec(),
            &indices(),
            &[0.5],
            &PredictOptions::default(),
        )
        .unwrap();
        for row in &table.rows {
            assert_abs_diff_eq!(row.quantiles[0], row.mean, epsilon = 1e-8);
        }
    }

    #[test]
    fn variational_draws_are_shared_across_the_batch() {
        let config = small_config();
        let layout = ParamLayout::from_config(&config);
        let members = (0..2)
            .map(|i| VariationalParams {
                mean: init_params(&config, 90 + i).unwrap(),
                raw_scale: vec![softplus_inv(0.05); layout.len()],
            })
            .collect();
        let ens = PosteriorEnsemble {
            method: Method::Vi,
            members: Members::Variational(members),
            config_hash: config_hash(&config),
        };
        let opts = PredictOptions { n_draws: 16, seed: 3 };
        let a = predictive_at(&ens, &config, &grid_spec(), &indices()[0], &opts).unwrap();
        let b = predictive_at(&ens, &config, &grid_spec(), &indices()[3], &opts).unwrap();
        assert_eq!(a.components().len(), 16);
        // Same seed, same draws: observation parameters coincide pairwise
        // even though the fields differ with the index.
        for ((_, pa), (_, pb)) in a.components().iter().zip(b.components()) {
            assert_eq!(pa, pb);
        }
        let again = predictive_at(&ens, &config, &grid_spec(), &indices()[0], &opts).unwrap();
        assert_eq!(a, again);
    }

    #[test]
    fn incompatible_queries_are_rejected() {
        let config = small_config();
        let ens = point_ensemble(&config, 2);
        let mut other = config.clone();
        other.hidden_widths = vec![6];
        other.activations = vec![vec![Activation::Tanh]];
        let err = predictive_at(
            &ens,
            &other,
            &grid_spec(),
            &indices()[0],
            &PredictOptions::default(),
        );
        assert!(matches!(err, Err(Error::Incompatible(_))));
        // A feature spec that disagrees with the config width.
        let wide = FeatureSpec::linear_only(3);
        assert!(predictive_at(&ens, &config, &wide, &indices()[0], &PredictOptions::default())
            .is_err());
        // Out-of-range quantile request.
        let err = predict_batch(
            &ens,
            &config,
            &grid_spec(),
            &indices(),
            &[0.5, 1.2],
            &PredictOptions::default(),
        );
        assert!(err.is_err());
    }
}
