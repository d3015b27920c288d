//! Covariate construction for space-time indices.
//!
//! The model never sees raw coordinates directly; every query point is first
//! expanded into a deterministic covariate vector. The available blocks, in
//! fixed order:
//!
//! - linear terms `t, s_1, …, s_d`
//! - time-space interactions `t·s_i`
//! - space-space interactions `s_i·s_j` for `i < j`
//! - seasonal harmonics `cos(2πht/p), sin(2πht/p)` per period `p` and
//!   harmonic `h`
//! - spatial harmonics `cos(2π·2^h·ŝ_i), sin(2π·2^h·ŝ_i)` on coordinates
//!   min-max normalized to `[0, 1]`
//! - exogenous covariates appended raw, keyed by column name
//!
//! Interactions use raw (unnormalized) coordinates; only the spatial
//! harmonics consume the normalized values. Seasonal periods are expressed
//! in time-step units and can be resolved from calendar effect names via
//! [`seasonal_period`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Spacing of a regular time grid, also used to name calendar-scale
/// seasonal effects.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frequency {
    Secondly,
    Minutely,
    Hourly,
    Daily,
    Weekly,
    Monthly,
    Quarterly,
    Yearly,
}

impl Frequency {
    pub const ALL: [Frequency; 8] = [
        Frequency::Secondly,
        Frequency::Minutely,
        Frequency::Hourly,
        Frequency::Daily,
        Frequency::Weekly,
        Frequency::Monthly,
        Frequency::Quarterly,
        Frequency::Yearly,
    ];

    /// Step length in seconds, or `None` for calendar-based frequencies
    /// whose step length varies (months, quarters, years).
    pub fn fixed_seconds(self) -> Option<i64> {
        match self {
            Frequency::Secondly => Some(1),
            Frequency::Minutely => Some(60),
            Frequency::Hourly => Some(3600),
            Frequency::Daily => Some(86_400),
            Frequency::Weekly => Some(604_800),
            Frequency::Monthly | Frequency::Quarterly | Frequency::Yearly => None,
        }
    }

    /// Number of calendar months per step, for calendar-based frequencies.
    pub fn months(self) -> Option<i32> {
        match self {
            Frequency::Monthly => Some(1),
            Frequency::Quarterly => Some(3),
            Frequency::Yearly => Some(12),
            _ => None,
        }
    }
}

impl std::fmt::Display for Frequency {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Frequency::Secondly => "secondly",
            Frequency::Minutely => "minutely",
            Frequency::Hourly => "hourly",
            Frequency::Daily => "daily",
            Frequency::Weekly => "weekly",
            Frequency::Monthly => "monthly",
            Frequency::Quarterly => "quarterly",
            Frequency::Yearly => "yearly",
        };
        f.write_str(name)
    }
}

/// Period, in time-step units, of the calendar `effect` for data measured at
/// `frequency`. Returns `None` when the effect is not observable at that
/// frequency (the effect is as short as or shorter than the step).
///
/// The values follow meteorological conventions for mixed-length calendar
/// units (a year is 365.25 days, a month 1/12 of that), quoted at the
/// precision customary for each frequency.
pub fn seasonal_period(frequency: Frequency, effect: Frequency) -> Option<f64> {
    use Frequency::*;
    let period = match (frequency, effect) {
        (f, e) if f == e => 1.0,
        (Quarterly, Yearly) => 4.0,
        (Monthly, Quarterly) => 3.0,
        (Monthly, Yearly) => 12.0,
        (Weekly, Monthly) => 4.35,
        (Weekly, Quarterly) => 13.045,
        (Weekly, Yearly) => 52.18,
        (Daily, Weekly) => 7.0,
        (Daily, Monthly) => 30.44,
        (Daily, Quarterly) => 91.32,
        (Daily, Yearly) => 365.25,
        (Hourly, Daily) => 24.0,
        (Hourly, Weekly) => 168.0,
        (Hourly, Monthly) => 730.5,
        (Hourly, Quarterly) => 2191.5,
        (Hourly, Yearly) => 8766.0,
        (Minutely, Hourly) => 60.0,
        (Minutely, Daily) => 1440.0,
        (Minutely, Weekly) => 10_080.0,
        (Minutely, Monthly) => 43_830.0,
        (Minutely, Quarterly) => 131_490.0,
        (Minutely, Yearly) => 525_960.0,
        (Secondly, Minutely) => 60.0,
        (Secondly, Hourly) => 3600.0,
        (Secondly, Daily) => 86_400.0,
        (Secondly, Weekly) => 604_800.0,
        (Secondly, Monthly) => 2_629_800.0,
        (Secondly, Quarterly) => 7_889_400.0,
        (Secondly, Yearly) => 31_557_600.0,
        _ => return None,
    };
    Some(period)
}

/// A point in the model's domain: spatial coordinates plus a time value on
/// the encoded (step-unit) axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimeIndex {
    pub coords: Vec<f64>,
    pub time: f64,
}

impl SpaceTimeIndex {
    pub fn new(coords: Vec<f64>, time: f64) -> Self {
        SpaceTimeIndex { coords, time }
    }
}

/// One seasonal effect: a period in time-step units and the harmonics to
/// include. Harmonic `h` contributes the pair `cos(2πht/p), sin(2πht/p)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Seasonality {
    pub period: f64,
    pub harmonics: Vec<u32>,
}

impl Seasonality {
    pub fn new(period: f64, harmonics: Vec<u32>) -> Self {
        Seasonality { period, harmonics }
    }
}

/// Declarative description of the covariate vector.
///
/// `dims` is the spatial dimensionality `d`. `spatial_fourier` holds one
/// exponent set per dimension (frequency `2^h` for exponent `h`); it may be
/// left empty to disable spatial harmonics entirely. `spatial_bounds` are
/// per-dimension `(min, max)` ranges used to normalize coordinates for the
/// spatial harmonics; they are typically recorded from the training data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub dims: usize,
    pub linear: bool,
    pub time_space_interactions: bool,
    pub space_space_interactions: bool,
    pub seasonal: Vec<Seasonality>,
    pub spatial_fourier: Vec<Vec<u32>>,
    pub spatial_bounds: Option<Vec<(f64, f64)>>,
    pub exogenous: Vec<String>,
}

impl FeatureSpec {
    /// Linear terms only; the minimal useful spec.
    pub fn linear_only(dims: usize) -> Self {
        FeatureSpec {
            dims,
            linear: true,
            time_space_interactions: false,
            space_space_interactions: false,
            seasonal: Vec::new(),
            spatial_fourier: Vec::new(),
            spatial_bounds: None,
            exogenous: Vec::new(),
        }
    }

    /// Checks internal consistency. Harmonics must lie in `1..=⌊p/2⌋`,
    /// spatial blocks must match `dims`, bounds must be finite with
    /// `min < max`.
    pub fn validate(&self) -> Result<()> {
        if self.dims == 0 {
            return Err(Error::invalid("feature spec", "dims must be at least 1"));
        }
        for seas in &self.seasonal {
            if !seas.period.is_finite() || seas.period <= 0.0 {
                return Err(Error::invalid(
                    "feature spec",
                    format!("seasonal period {} must be positive", seas.period),
                ));
            }
            if seas.harmonics.is_empty() {
                return Err(Error::invalid(
                    "feature spec",
                    format!("seasonal period {} declares no harmonics", seas.period),
                ));
            }
            let max_h = (seas.period / 2.0).floor() as u32;
            for &h in &seas.harmonics {
                if h < 1 || h > max_h {
                    return Err(Error::invalid(
                        "feature spec",
                        format!(
                            "harmonic {h} outside 1..={max_h} for period {}",
                            seas.period
                        ),
                    ));
                }
            }
        }
        if !self.spatial_fourier.is_empty() && self.spatial_fourier.len() != self.dims {
            return Err(Error::invalid(
                "feature spec",
                format!(
                    "spatial_fourier has {} entries for {} dimensions",
                    self.spatial_fourier.len(),
                    self.dims
                ),
            ));
        }
        if let Some(bounds) = &self.spatial_bounds {
            if bounds.len() != self.dims {
                return Err(Error::invalid(
                    "feature spec",
                    format!(
                        "spatial_bounds has {} entries for {} dimensions",
                        bounds.len(),
                        self.dims
                    ),
                ));
            }
            for &(lo, hi) in bounds {
                if !lo.is_finite() || !hi.is_finite() || lo >= hi {
                    return Err(Error::invalid(
                        "feature spec",
                        format!("spatial bound ({lo}, {hi}) must be finite with min < max"),
                    ));
                }
            }
        }
        if self.needs_bounds() && self.spatial_bounds.is_none() {
            // Allowed at validation time: bounds are usually filled in from
            // training data before any features are built.
        }
        Ok(())
    }

    fn needs_bounds(&self) -> bool {
        self.spatial_fourier.iter().any(|hs| !hs.is_empty())
    }

    /// Fills `spatial_bounds` from observed coordinates if not already set.
    /// No-op when bounds are present or no spatial harmonics are declared.
    pub fn resolve_bounds<'a, I>(&mut self, coords: I) -> Result<()>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        if self.spatial_bounds.is_some() || !self.needs_bounds() {
            return Ok(());
        }
        let mut bounds = vec![(f64::INFINITY, f64::NEG_INFINITY); self.dims];
        let mut seen = false;
        for c in coords {
            if c.len() != self.dims {
                return Err(Error::dim("coordinate", self.dims, c.len()));
            }
            for (b, &v) in bounds.iter_mut().zip(c) {
                b.0 = b.0.min(v);
                b.1 = b.1.max(v);
            }
            seen = true;
        }
        if !seen {
            return Err(Error::EmptyInput("no coordinates to derive bounds".into()));
        }
        for b in &bounds {
            if b.0 >= b.1 {
                return Err(Error::invalid(
                    "feature spec",
                    format!(
                        "cannot derive spatial bounds from degenerate coordinate range ({}, {})",
                        b.0, b.1
                    ),
                ));
            }
        }
        self.spatial_bounds = Some(bounds);
        Ok(())
    }
}

/// Number of covariates produced by `spec`.
pub fn feature_count(spec: &FeatureSpec) -> usize {
    let d = spec.dims;
    let mut m = 0;
    if spec.linear {
        m += 1 + d;
    }
    if spec.time_space_interactions {
        m += d;
    }
    if spec.space_space_interactions {
        m += d * (d - 1) / 2;
    }
    m += 2 * spec.seasonal.iter().map(|s| s.harmonics.len()).sum::<usize>();
    m += 2 * spec.spatial_fourier.iter().map(|hs| hs.len()).sum::<usize>();
    m += spec.exogenous.len();
    m
}

/// Human-readable label per covariate, in build order.
pub fn feature_names(spec: &FeatureSpec) -> Vec<String> {
    let d = spec.dims;
    let mut names = Vec::with_capacity(feature_count(spec));
    if spec.linear {
        names.push("t".to_string());
        for i in 1..=d {
            names.push(format!("s{i}"));
        }
    }
    if spec.time_space_interactions {
        for i in 1..=d {
            names.push(format!("t*s{i}"));
        }
    }
    if spec.space_space_interactions {
        for i in 1..=d {
            for j in (i + 1)..=d {
                names.push(format!("s{i}*s{j}"));
            }
        }
    }
    for seas in &spec.seasonal {
        for &h in &seas.harmonics {
            names.push(format!("seasonal_p{}_h{h}_cos", seas.period));
            names.push(format!("seasonal_p{}_h{h}_sin", seas.period));
        }
    }
    for (i, hs) in spec.spatial_fourier.iter().enumerate() {
        for &h in hs {
            names.push(format!("spatial_s{}_h{h}_cos", i + 1));
            names.push(format!("spatial_s{}_h{h}_sin", i + 1));
        }
    }
    for name in &spec.exogenous {
        names.push(name.clone());
    }
    names
}

/// Builds the covariate vector for one index. Fails if the spec declares
/// exogenous covariates (use [`build_features_with_exogenous`]).
pub fn build_features(spec: &FeatureSpec, idx: &SpaceTimeIndex) -> Result<Vec<f64>> {
    build_features_with_exogenous(spec, idx, &[])
}

/// Builds the covariate vector for one index, appending the supplied
/// exogenous values verbatim. `exogenous` must match `spec.exogenous` in
/// length and order.
pub fn build_features_with_exogenous(
    spec: &FeatureSpec,
    idx: &SpaceTimeIndex,
    exogenous: &[f64],
) -> Result<Vec<f64>> {
    let d = spec.dims;
    if idx.coords.len() != d {
        return Err(Error::dim("index coordinates", d, idx.coords.len()));
    }
    if exogenous.len() != spec.exogenous.len() {
        return Err(Error::dim(
            "exogenous values",
            spec.exogenous.len(),
            exogenous.len(),
        ));
    }
    if !idx.time.is_finite() || idx.coords.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("space-time index".into()));
    }
    if exogenous.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("exogenous values".into()));
    }

    let t = idx.time;
    let s = &idx.coords;
    let mut out = Vec::with_capacity(feature_count(spec));

    if spec.linear {
        out.push(t);
        out.extend_from_slice(s);
    }
    if spec.time_space_interactions {
        out.extend(s.iter().map(|&si| t * si));
    }
    if spec.space_space_interactions {
        for i in 0..d {
            for j in (i + 1)..d {
                out.push(s[i] * s[j]);
            }
        }
    }
    for seas in &spec.seasonal {
        for &h in &seas.harmonics {
            let arg = std::f64::consts::TAU * f64::from(h) * t / seas.period;
            out.push(arg.cos());
            out.push(arg.sin());
        }
    }
    if spec.needs_bounds() {
        let bounds = spec.spatial_bounds.as_ref().ok_or_else(|| {
            Error::invalid(
                "feature spec",
                "spatial harmonics declared but spatial_bounds unset",
            )
        })?;
        for (i, hs) in spec.spatial_fourier.iter().enumerate() {
            let (lo, hi) = bounds[i];
            let normalized = (s[i] - lo) / (hi - lo);
            for &h in hs {
                let arg = std::f64::consts::TAU * f64::powi(2.0, h as i32) * normalized;
                out.push(arg.cos());
                out.push(arg.sin());
            }
        }
    }
    out.extend_from_slice(exogenous);
    Ok(out)
}

/// Dense row-major matrix of covariate vectors, one row per index.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    data: Vec<f64>,
    rows: usize,
    cols: usize,
}

impl FeatureMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        let n = rows.len();
        for row in &rows {
            if row.len() != cols {
                return Err(Error::dim("feature row", cols, row.len()));
            }
            data.extend_from_slice(row);
        }
        Ok(FeatureMatrix { data, rows: n, cols })
    }

    /// Builds features for every index under one spec.
    pub fn build(spec: &FeatureSpec, indices: &[SpaceTimeIndex]) -> Result<Self> {
        let cols = feature_count(spec);
        let mut data = Vec::with_capacity(indices.len() * cols);
        for idx in indices {
            data.extend(build_features(spec, idx)?);
        }
        Ok(FeatureMatrix {
            data,
            rows: indices.len(),
            cols,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.rows
    }

    pub fn n_cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}
