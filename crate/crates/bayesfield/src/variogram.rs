//! Empirical and model-inferred spatiotemporal semivariograms.
//!
//! The semivariance at spatial displacement `h` and time lag `τ` is half
//! the variance of `Y(s+h, t+τ) − Y(s, t)`. The estimator bins every
//! distinct pair of observed records by distance and lag and takes half
//! the mean squared difference per cell; an inferred surface applies the
//! same estimator to fields simulated from a fitted ensemble and averages
//! over parameter draws.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::features::{build_features, feature_count, FeatureSpec, SpaceTimeIndex};
use crate::inference::{derive_seed, sample_ensemble, PosteriorEnsemble};
use crate::model::{config_hash, forward, BlockKind, NetworkConfig};
use crate::predict::PredictOptions;

/// Mean Earth radius in kilometers, used by the haversine metric.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// How spatial separation between two coordinate vectors is measured.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMetric {
    /// Straight-line distance on the raw coordinates.
    Euclidean,
    /// Great-circle distance in kilometers; coordinates are interpreted
    /// as (longitude, latitude) in degrees.
    HaversineKm,
}

/// Binning layout for a semivariogram surface.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariogramSpec {
    /// Distance bin edges; bin `i` covers `[edges[i], edges[i+1])`.
    pub distance_bins: Vec<f64>,
    /// Integer time lags, in grid steps.
    pub time_lags: Vec<i64>,
    pub distance_metric: DistanceMetric,
    /// Cells with fewer pairs than this are reported empty.
    pub min_pairs_per_bin: usize,
}

impl Default for VariogramSpec {
    fn default() -> Self {
        VariogramSpec {
            distance_bins: (0..=10).map(|i| 100.0 * i as f64).collect(),
            time_lags: (0..=10).collect(),
            distance_metric: DistanceMetric::Euclidean,
            min_pairs_per_bin: 30,
        }
    }
}

impl VariogramSpec {
    pub fn validate(&self) -> Result<()> {
        if self.distance_bins.len() < 2 {
            return Err(Error::invalid(
                "variogram spec",
                "needs at least two distance bin edges",
            ));
        }
        if self.distance_bins[0] < 0.0 {
            return Err(Error::invalid("variogram spec", "bin edges must be nonnegative"));
        }
        if self.distance_bins.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid(
                "variogram spec",
                "bin edges must be strictly increasing",
            ));
        }
        if self.distance_bins.iter().any(|e| !e.is_finite()) {
            return Err(Error::NonFinite("distance bin edges".into()));
        }
        if self.time_lags.is_empty() {
            return Err(Error::EmptyInput("variogram time lags".into()));
        }
        if self.time_lags.iter().any(|&l| l < 0) {
            return Err(Error::invalid("variogram spec", "time lags must be nonnegative"));
        }
        if self.min_pairs_per_bin == 0 {
            return Err(Error::invalid(
                "variogram spec",
                "min_pairs_per_bin must be positive",
            ));
        }
        Ok(())
    }
}

/// One populated surface cell.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariogramCell {
    /// Semivariance estimate: half the mean squared difference.
    pub gamma: f64,
    /// Number of record pairs behind the estimate.
    pub pairs: u64,
}

/// Semivariance estimates over a (distance bin × time lag) grid.
///
/// Cells with too few pairs are `None`: absent evidence, not zero
/// semivariance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariogramSurface {
    pub distance_bins: Vec<f64>,
    pub time_lags: Vec<i64>,
    cells: Vec<Option<VariogramCell>>,
}

impl VariogramSurface {
    pub fn n_bins(&self) -> usize {
        self.distance_bins.len() - 1
    }

    pub fn n_lags(&self) -> usize {
        self.time_lags.len()
    }

    /// Cell for distance bin `bin` and the `lag`-th configured time lag.
    pub fn cell(&self, bin: usize, lag: usize) -> Option<VariogramCell> {
        self.cells[bin * self.n_lags() + lag]
    }

    /// Midpoint of a distance bin.
    pub fn bin_center(&self, bin: usize) -> f64 {
        0.5 * (self.distance_bins[bin] + self.distance_bins[bin + 1])
    }

    /// The surface as delimited text: one row per cell, empty cells with
    /// a blank estimate.
    pub fn to_delimited(&self) -> String {
        let mut out = String::from("distance,lag,gamma,pairs\n");
        for bin in 0..self.n_bins() {
            for (l, &lag) in self.time_lags.iter().enumerate() {
                let center = self.bin_center(bin);
                match self.cell(bin, l) {
                    Some(c) => {
                        out.push_str(&format!("{center},{lag},{},{}\n", c.gamma, c.pairs))
                    }
                    None => out.push_str(&format!("{center},{lag},,0\n")),
                }
            }
        }
        out
    }
}

/// Great-circle distance in kilometers between two (longitude, latitude)
/// points given in degrees.
pub fn haversine_km(a: &[f64], b: &[f64]) -> f64 {
    let (lon1, lat1) = (a[0].to_radians(), a[1].to_radians());
    let (lon2, lat2) = (b[0].to_radians(), b[1].to_radians());
    let sin_dlat = ((lat2 - lat1) / 2.0).sin();
    let sin_dlon = ((lon2 - lon1) / 2.0).sin();
    let h = sin_dlat * sin_dlat + lat1.cos() * lat2.cos() * sin_dlon * sin_dlon;
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn distance(metric: DistanceMetric, a: &[f64], b: &[f64]) -> Result<f64> {
    match metric {
        DistanceMetric::Euclidean => Ok(euclidean(a, b)),
        DistanceMetric::HaversineKm => {
            if a.len() != 2 || b.len() != 2 {
                return Err(Error::invalid(
                    "distance metric",
                    "haversine needs exactly (longitude, latitude) coordinates",
                ));
            }
            Ok(haversine_km(a, b))
        }
    }
}

/// Precomputed pair structure: distance-bin index per location pair (or
/// `None` when out of range) and lag index per whole time difference.
struct PairGrid {
    n_locations: usize,
    bin_of_pair: Vec<Option<usize>>,
    lag_of: HashMap<i64, usize>,
    n_bins: usize,
    n_lags: usize,
}

impl PairGrid {
    fn new(spec: &VariogramSpec, coords: &[Vec<f64>]) -> Result<Self> {
        spec.validate()?;
        let n = coords.len();
        let edges = &spec.distance_bins;
        let mut bin_of_pair = vec![None; n * n];
        for i in 0..n {
            for j in 0..n {
                let d = distance(spec.distance_metric, &coords[i], &coords[j])?;
                // partition_point gives the first edge > d; bin i covers
                // [edges[i], edges[i+1]).
                let upper = edges.partition_point(|&e| e <= d);
                if upper > 0 && upper < edges.len() {
                    bin_of_pair[i * n + j] = Some(upper - 1);
                }
            }
        }
        let lag_of: HashMap<i64, usize> = spec
            .time_lags
            .iter()
            .enumerate()
            .map(|(idx, &lag)| (lag, idx))
            .collect();
        Ok(PairGrid {
            n_locations: n,
            bin_of_pair,
            lag_of,
            n_bins: edges.len() - 1,
            n_lags: spec.time_lags.len(),
        })
    }

    /// Accumulates squared differences over all distinct record pairs.
    fn accumulate(&self, records: &[(usize, f64, f64)], sums: &mut [f64], counts: &mut [u64]) {
        for (a, &(loc_a, t_a, y_a)) in records.iter().enumerate() {
            for &(loc_b, t_b, y_b) in &records[a + 1..] {
                let dt = (t_a - t_b).abs();
                if dt.fract() != 0.0 {
                    continue;
                }
                let Some(&lag_idx) = self.lag_of.get(&(dt as i64)) else {
                    continue;
                };
                let Some(bin) = self.bin_of_pair[loc_a * self.n_locations + loc_b] else {
                    continue;
                };
                let diff = y_a - y_b;
                sums[bin * self.n_lags + lag_idx] += diff * diff;
                counts[bin * self.n_lags + lag_idx] += 1;
            }
        }
    }
}

fn finish_surface(
    spec: &VariogramSpec,
    sums: &[f64],
    counts: &[u64],
    draws: u64,
) -> Result<VariogramSurface> {
    let cells: Vec<Option<VariogramCell>> = sums
        .iter()
        .zip(counts)
        .map(|(&sum, &count)| {
            if (count / draws) < spec.min_pairs_per_bin as u64 {
                None
            } else {
                Some(VariogramCell {
                    gamma: 0.5 * sum / count as f64,
                    pairs: count / draws,
                })
            }
        })
        .collect();
    if cells.iter().all(Option::is_none) {
        return Err(Error::EmptyInput(
            "variogram surface: no cell reached min_pairs_per_bin".into(),
        ));
    }
    Ok(VariogramSurface {
        distance_bins: spec.distance_bins.clone(),
        time_lags: spec.time_lags.clone(),
        cells,
    })
}

/// Estimates the semivariogram of an observed dataset.
pub fn empirical_variogram(dataset: &Dataset, spec: &VariogramSpec) -> Result<VariogramSurface> {
    if dataset.locations.len() < 2 {
        return Err(Error::invalid(
            "variogram dataset",
            "needs at least two locations",
        ));
    }
    let coords: Vec<Vec<f64>> = dataset.locations.iter().map(|l| l.coords.clone()).collect();
    let grid = PairGrid::new(spec, &coords)?;
    let records: Vec<(usize, f64, f64)> = dataset
        .records
        .iter()
        .map(|r| (r.location, r.time, r.y))
        .collect();
    let mut sums = vec![0.0; grid.n_bins * grid.n_lags];
    let mut counts = vec![0u64; grid.n_bins * grid.n_lags];
    grid.accumulate(&records, &mut sums, &mut counts);
    finish_surface(spec, &sums, &counts, 1)
}

/// Estimates the semivariogram a fitted ensemble implies.
///
/// For each parameter draw, the field is evaluated at every supplied
/// (location, time) and observation noise is sampled independently per
/// index; the empirical estimator runs on each simulated field and the
/// per-draw estimates are averaged. Pair counts are per draw, so they are
/// comparable with an empirical surface on the same grid.
pub fn inferred_variogram(
    ens: &PosteriorEnsemble,
    config: &NetworkConfig,
    feature_spec: &FeatureSpec,
    locations: &[Vec<f64>],
    times: &[f64],
    spec: &VariogramSpec,
    opts: &PredictOptions,
) -> Result<VariogramSurface> {
    if ens.config_hash != config_hash(config) {
        return Err(Error::Incompatible(
            "ensemble was fitted under a different model configuration".into(),
        ));
    }
    if feature_count(feature_spec) != config.num_features {
        return Err(Error::dim(
            "feature specification",
            config.num_features,
            feature_count(feature_spec),
        ));
    }
    if locations.is_empty() || times.is_empty() {
        return Err(Error::EmptyInput("variogram simulation grid".into()));
    }
    let grid = PairGrid::new(spec, locations)?;

    // Covariates for the full simulation grid, one row per (location, time).
    let mut structure = Vec::with_capacity(locations.len() * times.len());
    let mut features = Vec::with_capacity(locations.len() * times.len());
    for (loc, coords) in locations.iter().enumerate() {
        for &time in times {
            let idx = SpaceTimeIndex {
                coords: coords.clone(),
                time,
            };
            features.push(build_features(feature_spec, &idx)?);
            structure.push((loc, time));
        }
    }

    let draws = sample_ensemble(ens, opts.n_draws.max(1), opts.seed)?;
    let mut sums = vec![0.0; grid.n_bins * grid.n_lags];
    let mut counts = vec![0u64; grid.n_bins * grid.n_lags];
    let mut records = Vec::with_capacity(structure.len());
    for (d, draw) in draws.iter().enumerate() {
        let obs = config
            .observation
            .derive_params(draw.block(BlockKind::Observation));
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(opts.seed, 0x5AFE + d as u64));
        records.clear();
        for (&(loc, time), feats) in structure.iter().zip(&features) {
            let field = forward(config, draw, feats)?;
            if !field.is_finite() {
                return Err(Error::Numerical("non-finite simulated field".into()));
            }
            records.push((loc, time, obs.sample(field, &mut rng)));
        }
        grid.accumulate(&records, &mut sums, &mut counts);
    }
    finish_surface(spec, &sums, &counts, draws.len() as u64)
}

/// Samples `n` coordinates uniformly inside the convex hull of the
/// dataset's locations (two-dimensional coordinates only).
pub fn uniform_locations_in_hull(dataset: &Dataset, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let points: Vec<[f64; 2]> = dataset
        .locations
        .iter()
        .map(|l| {
            if l.coords.len() == 2 {
                Ok([l.coords[0], l.coords[1]])
            } else {
                Err(Error::invalid(
                    "hull sampling",
                    "requires two-dimensional coordinates",
                ))
            }
        })
        .collect::<Result<_>>()?;
    let hull = convex_hull(&points)?;

    let (mut min_x, mut max_x) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut min_y, mut max_y) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in &hull {
        min_x = min_x.min(p[0]);
        max_x = max_x.max(p[0]);
        min_y = min_y.min(p[1]);
        max_y = max_y.max(p[1]);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0u64;
    let cap = 1_000_000 + 10_000 * n as u64;
    while out.len() < n {
        attempts += 1;
        if attempts > cap {
            return Err(Error::Numerical(
                "hull rejection sampling did not converge".into(),
            ));
        }
        let p = [
            rng.gen_range(min_x..=max_x),
            rng.gen_range(min_y..=max_y),
        ];
        if point_in_convex_polygon(&hull, p) {
            out.push(vec![p[0], p[1]]);
        }
    }
    Ok(out)
}

/// Convex hull by Andrew's monotone chain, counterclockwise, no repeated
/// endpoint.
fn convex_hull(points: &[[f64; 2]]) -> Result<Vec<[f64; 2]>> {
    let mut pts: Vec<[f64; 2]> = points.to_vec();
    pts.sort_by(|a, b| a.partial_cmp(b).expect("finite coordinates"));
    pts.dedup();
    if pts.len() < 3 {
        return Err(Error::invalid(
            "hull sampling",
            "needs at least three distinct locations",
        ));
    }
    let cross = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| {
        (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
    };
    let build = |iter: &mut dyn Iterator<Item = &[f64; 2]>| {
        let mut chain: Vec<[f64; 2]> = Vec::new();
        for &p in iter {
            while chain.len() >= 2
                && cross(chain[chain.len() - 2], chain[chain.len() - 1], p) <= 0.0
            {
                chain.pop();
            }
            chain.push(p);
        }
        chain
    };
    let mut lower = build(&mut pts.iter());
    let mut upper = build(&mut pts.iter().rev());
    lower.pop();
    upper.pop();
    lower.extend(upper);
    if lower.len() < 3 {
        return Err(Error::invalid(
            "hull sampling",
            "locations are collinear; the hull has no area",
        ));
    }
    Ok(lower)
}

fn point_in_convex_polygon(hull: &[[f64; 2]], p: [f64; 2]) -> bool {
    // Counterclockwise hull: inside iff the point is left of (or on)
    // every edge.
    hull.iter().enumerate().all(|(i, &a)| {
        let b = hull[(i + 1) % hull.len()];
        (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]) >= 0.0
    })
}
