//! Run configuration files and on-disk checkpoints.
//!
//! A run configuration is a TOML document that describes one modeling run
//! end to end: where the data grid lives (`[data]`), which covariates to
//! build (`[features]`), the network and observation model (`[model]`),
//! how to fit it (`[train]`), and how to summarize the fit (`[prediction]`,
//! `[variogram]`). Every field has a sensible default except the data
//! frequency, so a minimal file is just:
//!
//! ```toml
//! [data]
//! frequency = "monthly"
//! ```
//!
//! [`RunConfig::normalize`] materializes the data-independent defaults so
//! that saving and reloading a normalized configuration reproduces it
//! exactly. Values that depend on the dataset size (epochs, batch size)
//! stay unset until [`RunConfig::train_config`] sees the record count.
//!
//! Checkpoints are directories holding a `manifest.json` with everything
//! needed to rebuild the model (network, features, schema, time grid) plus
//! one JSON file per ensemble member. All files are written atomically
//! (temp file + rename) and serialize deterministically, so two runs with
//! the same configuration and seed produce byte-identical checkpoints.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::data::TableSchema;
use crate::error::{Error, Result};
use crate::features::{feature_count, seasonal_period, FeatureSpec, Frequency, Seasonality};
use crate::inference::{
    Decay, LrSchedule, Members, Method, PosteriorEnsemble, TrainConfig, VariationalParams,
};
use crate::model::{
    config_hash, Activation, NetworkConfig, ObservationModel, ParamLayout, ParamVector,
};
use crate::variogram::{DistanceMetric, VariogramSpec};

/// Version tag written into checkpoint manifests.
pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// File name of the checkpoint manifest inside a checkpoint directory.
pub const MANIFEST_FILE: &str = "manifest.json";

/// `[data]` section: observation grid and table layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Spacing of the regular time grid.
    pub frequency: Frequency,
    /// Column names and delimiter of the observation table.
    #[serde(default)]
    pub schema: TableSchema,
}

/// One seasonal block: either a named effect resolved against the data
/// frequency (e.g. a `"yearly"` effect on monthly data gives period 12) or
/// an explicit period in time steps. Exactly one of the two must be set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeasonalConfig {
    /// Named effect, resolved via the data frequency.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub effect: Option<Frequency>,
    /// Explicit period in time steps.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub period: Option<f64>,
    /// Harmonic multiples of the base frequency to include.
    pub harmonics: Vec<u32>,
}

impl Default for SeasonalConfig {
    fn default() -> Self {
        SeasonalConfig {
            effect: None,
            period: None,
            harmonics: vec![1],
        }
    }
}

impl SeasonalConfig {
    /// Resolve to a concrete seasonality given the data frequency.
    fn resolve(&self, frequency: Frequency) -> Result<Seasonality> {
        let period = match (self.effect, self.period) {
            (Some(_), Some(_)) => {
                return Err(Error::invalid(
                    "seasonal block",
                    "set either `effect` or `period`, not both",
                ))
            }
            (None, None) => {
                return Err(Error::invalid(
                    "seasonal block",
                    "set `effect` (a named frequency) or `period` (in time steps)",
                ))
            }
            (Some(effect), None) => seasonal_period(frequency, effect).ok_or_else(|| {
                Error::invalid(
                    "seasonal block",
                    format!("no {effect:?} effect is defined for {frequency:?} data"),
                )
            })?,
            (None, Some(period)) => period,
        };
        Ok(Seasonality::new(period, self.harmonics.clone()))
    }
}

/// `[features]` section: which covariates to build from each index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeaturesConfig {
    /// Include the raw time and coordinate values.
    pub linear: bool,
    /// Include time x coordinate products.
    pub time_space_interactions: bool,
    /// Include pairwise coordinate products.
    pub space_space_interactions: bool,
    /// Seasonal harmonic blocks.
    pub seasonal: Vec<SeasonalConfig>,
    /// Spatial harmonic exponents, one list per coordinate dimension.
    pub spatial_fourier: Vec<Vec<u32>>,
    /// Per-dimension `(min, max)` ranges for spatial harmonics.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spatial_bounds: Option<Vec<(f64, f64)>>,
}

impl Default for FeaturesConfig {
    fn default() -> Self {
        FeaturesConfig {
            linear: true,
            time_space_interactions: true,
            space_space_interactions: true,
            seasonal: Vec::new(),
            spatial_fourier: Vec::new(),
            spatial_bounds: None,
        }
    }
}

/// `[model]` section: network architecture and observation model.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Data distribution attached to the field output.
    pub observation: ObservationModel,
    /// Expected covariate count; checked against the feature spec when set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub num_features: Option<usize>,
    /// Hidden layer widths; defaults to two layers of 64.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden_widths: Option<Vec<usize>>,
    /// Candidate activations per hidden layer; defaults to `[tanh, elu]`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub activations: Option<Vec<Vec<Activation>>>,
}

/// Default hidden widths when `[model]` does not set any.
const DEFAULT_HIDDEN_WIDTHS: [usize; 2] = [64, 64];

/// Default per-layer activation candidates.
const DEFAULT_ACTIVATIONS: [Activation; 2] = [Activation::Tanh, Activation::Elu];

/// `[train]` section: optimizer and ensemble settings. Unset fields fall
/// back to the data-sized defaults of [`TrainConfig::defaults_for`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    /// Estimation method.
    pub method: Method,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ensemble_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub peak_learning_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warmup_fraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decay: Option<Decay>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vi_samples_per_step: Option<usize>,
}

/// `[prediction]` section: posterior summary settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictionConfig {
    /// Quantile levels reported per index, each strictly inside (0, 1).
    pub quantiles: Vec<f64>,
    /// Posterior draws per prediction batch.
    pub n_draws: usize,
}

impl Default for PredictionConfig {
    fn default() -> Self {
        PredictionConfig {
            quantiles: vec![0.025, 0.5, 0.975],
            n_draws: 64,
        }
    }
}

/// `[variogram]` section: binning for empirical and inferred surfaces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VariogramConfig {
    /// Distance bin edges.
    pub distance_bins: Vec<f64>,
    /// Time lags in steps.
    pub time_lags: Vec<i64>,
    /// How to measure distance between locations.
    pub distance_metric: DistanceMetric,
    /// Cells with fewer pairs are reported as empty.
    pub min_pairs_per_bin: usize,
    /// Synthetic locations sampled inside the data hull for inferred mode.
    pub inferred_locations: usize,
}

impl Default for VariogramConfig {
    fn default() -> Self {
        let spec = VariogramSpec::default();
        VariogramConfig {
            distance_bins: spec.distance_bins,
            time_lags: spec.time_lags,
            distance_metric: spec.distance_metric,
            min_pairs_per_bin: spec.min_pairs_per_bin,
            inferred_locations: 70,
        }
    }
}

impl VariogramConfig {
    /// Binning spec shared by the empirical and inferred estimators.
    pub fn to_spec(&self) -> VariogramSpec {
        VariogramSpec {
            distance_bins: self.distance_bins.clone(),
            time_lags: self.time_lags.clone(),
            distance_metric: self.distance_metric,
            min_pairs_per_bin: self.min_pairs_per_bin,
        }
    }
}

/// `[paths]` section: optional default output locations.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

/// A complete, validated description of one modeling run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    #[serde(default)]
    pub features: FeaturesConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub prediction: PredictionConfig,
    #[serde(default)]
    pub variogram: VariogramConfig,
    #[serde(default)]
    pub paths: PathsConfig,
}

impl RunConfig {
    /// Parse a TOML document. Parse errors carry a 1-based line number.
    pub fn from_toml(text: &str, origin: &str) -> Result<RunConfig> {
        let config: RunConfig = toml::from_str(text).map_err(|err| {
            let line = err
                .span()
                .map(|span| {
                    let start = span.start.min(text.len());
                    text.as_bytes()[..start].iter().filter(|&&b| b == b'\n').count() + 1
                })
                .unwrap_or(1);
            Error::Parse {
                path: origin.to_string(),
                line,
                message: err.message().to_string(),
            }
        })?;
        config.validate()?;
        Ok(config)
    }

    /// Read and parse a configuration file.
    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::from_toml(&text, &path.display().to_string())
    }

    /// Check every section for internal consistency.
    pub fn validate(&self) -> Result<()> {
        self.network_config()?.validate()?;
        if self.prediction.quantiles.is_empty() {
            return Err(Error::invalid(
                "prediction.quantiles",
                "at least one quantile level is required",
            ));
        }
        for &q in &self.prediction.quantiles {
            if !q.is_finite() || q <= 0.0 || q >= 1.0 {
                return Err(Error::invalid(
                    "prediction.quantiles",
                    format!("level {q} is not strictly inside (0, 1)"),
                ));
            }
        }
        if self.prediction.n_draws == 0 {
            return Err(Error::invalid(
                "prediction.n_draws",
                "at least one posterior draw is required",
            ));
        }
        self.variogram.to_spec().validate()?;
        if self.variogram.inferred_locations == 0 {
            return Err(Error::invalid(
                "variogram.inferred_locations",
                "at least one sampled location is required",
            ));
        }
        let t = &self.train;
        if let Some(m) = t.ensemble_size {
            if m == 0 {
                return Err(Error::invalid("train.ensemble_size", "must be at least 1"));
            }
        }
        if let Some(b) = t.batch_size {
            if b == 0 {
                return Err(Error::invalid("train.batch_size", "must be at least 1"));
            }
        }
        if let Some(p) = t.peak_learning_rate {
            if !p.is_finite() || p <= 0.0 {
                return Err(Error::invalid(
                    "train.peak_learning_rate",
                    "must be positive and finite",
                ));
            }
        }
        if let Some(w) = t.warmup_fraction {
            if !w.is_finite() || !(0.0..=1.0).contains(&w) {
                return Err(Error::invalid(
                    "train.warmup_fraction",
                    "must lie in [0, 1]",
                ));
            }
        }
        if let Some(s) = t.vi_samples_per_step {
            if s == 0 {
                return Err(Error::invalid(
                    "train.vi_samples_per_step",
                    "must be at least 1",
                ));
            }
        }
        Ok(())
    }

    /// Covariate layout implied by `[features]` and the table schema.
    pub fn feature_spec(&self) -> Result<FeatureSpec> {
        let dims = self.data.schema.coords.len();
        let mut seasonal = Vec::with_capacity(self.features.seasonal.len());
        for block in &self.features.seasonal {
            seasonal.push(block.resolve(self.data.frequency)?);
        }
        let spec = FeatureSpec {
            dims,
            linear: self.features.linear,
            time_space_interactions: self.features.time_space_interactions,
            space_space_interactions: self.features.space_space_interactions,
            seasonal,
            spatial_fourier: self.features.spatial_fourier.clone(),
            spatial_bounds: self.features.spatial_bounds.clone(),
            exogenous: Vec::new(),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Network architecture implied by `[model]` and the feature spec.
    pub fn network_config(&self) -> Result<NetworkConfig> {
        let derived = feature_count(&self.feature_spec()?);
        if let Some(declared) = self.model.num_features {
            if declared != derived {
                return Err(Error::dim("model.num_features", derived, declared));
            }
        }
        let hidden_widths = self
            .model
            .hidden_widths
            .clone()
            .unwrap_or_else(|| DEFAULT_HIDDEN_WIDTHS.to_vec());
        let activations = self
            .model
            .activations
            .clone()
            .unwrap_or_else(|| vec![DEFAULT_ACTIVATIONS.to_vec(); hidden_widths.len()]);
        Ok(NetworkConfig {
            num_features: derived,
            hidden_widths,
            activations,
            observation: self.model.observation,
        })
    }

    /// Optimizer settings for a dataset of `n_records` observations.
    /// Unset fields take the data-sized defaults for the chosen method.
    pub fn train_config(&self, n_records: usize) -> Result<TrainConfig> {
        let t = &self.train;
        let mut config = TrainConfig::defaults_for(t.method, n_records);
        if let Some(m) = t.ensemble_size {
            config.ensemble_size = m;
        }
        if let Some(e) = t.epochs {
            config.epochs = e;
        }
        if let Some(b) = t.batch_size {
            config.batch_size = b;
        }
        if let Some(p) = t.peak_learning_rate {
            config.learning_rate.peak = p;
        }
        if let Some(w) = t.warmup_fraction {
            config.learning_rate.warmup_frac = w;
        }
        if let Some(d) = t.decay {
            config.learning_rate.decay = d;
        }
        if let Some(s) = t.seed {
            config.seed = s;
        }
        if let Some(v) = t.vi_samples_per_step {
            config.vi_samples_per_step = v;
        }
        config.validate()?;
        Ok(config)
    }

    /// Variogram binning from `[variogram]`.
    pub fn variogram_spec(&self) -> VariogramSpec {
        self.variogram.to_spec()
    }

    /// Materialize every data-independent default so the configuration
    /// round-trips exactly through [`RunConfig::save`] and
    /// [`RunConfig::load`]. Epochs and batch size stay unset because their
    /// defaults depend on the dataset size. Normalizing twice is a no-op.
    pub fn normalize(&self) -> Result<RunConfig> {
        let network = self.network_config()?;
        let mut out = self.clone();
        out.model.num_features = Some(network.num_features);
        out.model.hidden_widths = Some(network.hidden_widths);
        out.model.activations = Some(network.activations);
        let schedule = LrSchedule::default();
        let t = &mut out.train;
        t.ensemble_size = Some(t.ensemble_size.unwrap_or(8));
        t.peak_learning_rate = Some(t.peak_learning_rate.unwrap_or(schedule.peak));
        t.warmup_fraction = Some(t.warmup_fraction.unwrap_or(schedule.warmup_frac));
        t.decay = Some(t.decay.unwrap_or(schedule.decay));
        t.seed = Some(t.seed.unwrap_or(0));
        t.vi_samples_per_step = Some(t.vi_samples_per_step.unwrap_or(1));
        Ok(out)
    }

    /// Serialize to TOML text.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self)
            .map_err(|e| Error::invalid("run configuration", format!("not serializable: {e}")))
    }

    /// Write the configuration to `path` atomically.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        atomic_write(path.as_ref(), self.to_toml()?.as_bytes())
    }
}

/// Checkpoint manifest: everything needed to rebuild the fitted model and
/// map new queries onto the training grid, independent of the original
/// configuration file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// Checkpoint layout version; readers reject other versions.
    pub format_version: u32,
    /// Estimation method the ensemble was fitted with.
    pub method: Method,
    /// Architecture fingerprint shared by every member file.
    pub config_hash: String,
    /// Training seed, recorded for reproducibility.
    pub seed: u64,
    /// Network architecture.
    pub network: NetworkConfig,
    /// Covariate layout used at fit time.
    pub features: FeatureSpec,
    /// Full optimizer settings used at fit time.
    pub train: TrainConfig,
    /// Table layout for reading query files.
    pub schema: TableSchema,
    /// Time grid spacing.
    pub frequency: Frequency,
    /// Timestamp of grid step zero.
    pub origin: NaiveDateTime,
    /// Member file names, in ensemble order.
    pub members: Vec<String>,
}

/// One serialized ensemble member.
#[derive(Serialize, Deserialize)]
struct MemberFile {
    config_hash: String,
    layout: ParamLayout,
    values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    raw_scale: Option<Vec<f64>>,
}

/// Write a fitted ensemble and its manifest into `dir`, creating the
/// directory if needed. Member files are written first so a readable
/// manifest always describes complete members. Returns the manifest
/// actually written, with `members` filled in.
pub fn save_checkpoint(
    dir: impl AsRef<Path>,
    ensemble: &PosteriorEnsemble,
    manifest: &Manifest,
) -> Result<Manifest> {
    let dir = dir.as_ref();
    if manifest.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::Incompatible(format!(
            "manifest declares format version {}, writer supports {}",
            manifest.format_version, CHECKPOINT_FORMAT_VERSION
        )));
    }
    let network_hash = config_hash(&manifest.network);
    if manifest.config_hash != network_hash || ensemble.config_hash != network_hash {
        return Err(Error::Incompatible(
            "manifest, network, and ensemble hashes disagree".to_string(),
        ));
    }
    if manifest.method != ensemble.method {
        return Err(Error::Incompatible(format!(
            "manifest method {:?} does not match ensemble method {:?}",
            manifest.method, ensemble.method
        )));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let member_files: Vec<MemberFile> = match &ensemble.members {
        Members::Point(points) => points
            .iter()
            .map(|p| MemberFile {
                config_hash: ensemble.config_hash.clone(),
                layout: p.layout.clone(),
                values: p.values.clone(),
                raw_scale: None,
            })
            .collect(),
        Members::Variational(vps) => vps
            .iter()
            .map(|vp| MemberFile {
                config_hash: ensemble.config_hash.clone(),
                layout: vp.mean.layout.clone(),
                values: vp.mean.values.clone(),
                raw_scale: Some(vp.raw_scale.clone()),
            })
            .collect(),
    };
    if member_files.is_empty() {
        return Err(Error::EmptyInput(
            "checkpoint ensemble has no members".to_string(),
        ));
    }

    let mut written = manifest.clone();
    written.members = Vec::with_capacity(member_files.len());
    for (i, member) in member_files.iter().enumerate() {
        let name = format!("member_{i:03}.json");
        let bytes = serde_json::to_vec_pretty(member)
            .map_err(|e| Error::invalid("checkpoint member", format!("not serializable: {e}")))?;
        atomic_write(&dir.join(&name), &bytes)?;
        written.members.push(name);
    }
    let bytes = serde_json::to_vec_pretty(&written)
        .map_err(|e| Error::invalid("checkpoint manifest", format!("not serializable: {e}")))?;
    atomic_write(&dir.join(MANIFEST_FILE), &bytes)?;
    Ok(written)
}

/// Read a checkpoint directory back into a posterior ensemble and its
/// manifest, verifying version, hashes, layouts, and finiteness.
pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<(PosteriorEnsemble, Manifest)> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::Incompatible(format!("unreadable checkpoint manifest: {e}")))?;

    if manifest.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::Incompatible(format!(
            "checkpoint format version {} is not supported (expected {})",
            manifest.format_version, CHECKPOINT_FORMAT_VERSION
        )));
    }
    if config_hash(&manifest.network) != manifest.config_hash {
        return Err(Error::Incompatible(
            "manifest network does not match its recorded hash".to_string(),
        ));
    }
    if manifest.members.is_empty() {
        return Err(Error::Incompatible(
            "checkpoint manifest lists no members".to_string(),
        ));
    }
    let layout = ParamLayout::from_config(&manifest.network);

    let mut points = Vec::with_capacity(manifest.members.len());
    let mut variational = Vec::with_capacity(manifest.members.len());
    for name in &manifest.members {
        let path = dir.join(name);
        let text = match fs::read_to_string(&path) {
            Ok(text) => text,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(Error::Incompatible(format!(
                    "checkpoint member {name} is listed in the manifest but missing"
                )))
            }
            Err(e) => return Err(Error::io(&path, e)),
        };
        let member: MemberFile = serde_json::from_str(&text)
            .map_err(|e| Error::Incompatible(format!("unreadable checkpoint member {name}: {e}")))?;
        if member.config_hash != manifest.config_hash {
            return Err(Error::Incompatible(format!(
                "checkpoint member {name} was fitted under a different architecture"
            )));
        }
        if member.layout != layout {
            return Err(Error::Incompatible(format!(
                "checkpoint member {name} has a parameter layout that does not match the network"
            )));
        }
        if member.values.len() != layout.len() {
            return Err(Error::Incompatible(format!(
                "checkpoint member {name} holds {} values, layout requires {}",
                member.values.len(),
                layout.len()
            )));
        }
        if member.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Incompatible(format!(
                "checkpoint member {name} contains non-finite values"
            )));
        }
        let mean = ParamVector {
            values: member.values,
            layout: member.layout,
        };
        match (manifest.method, member.raw_scale) {
            (Method::Vi, Some(raw_scale)) => {
                if raw_scale.len() != layout.len() {
                    return Err(Error::Incompatible(format!(
                        "checkpoint member {name} holds {} scales, layout requires {}",
                        raw_scale.len(),
                        layout.len()
                    )));
                }
                if raw_scale.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Incompatible(format!(
                        "checkpoint member {name} contains non-finite scales"
                    )));
                }
                variational.push(VariationalParams { mean, raw_scale });
            }
            (Method::Vi, None) => {
                return Err(Error::Incompatible(format!(
                    "checkpoint member {name} lacks the variational scales its method requires"
                )))
            }
            (_, Some(_)) => {
                return Err(Error::Incompatible(format!(
                    "checkpoint member {name} carries variational scales but the method is {:?}",
                    manifest.method
                )))
            }
            (_, None) => points.push(mean),
        }
    }

    let members = if manifest.method == Method::Vi {
        Members::Variational(variational)
    } else {
        Members::Point(points)
    };
    let ensemble = PosteriorEnsemble {
        method: manifest.method,
        members,
        config_hash: manifest.config_hash.clone(),
    };
    Ok((ensemble, manifest))
}

/// Write `bytes` to `path` via a sibling temp file and an atomic rename,
/// so readers never observe a partially written file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::invalid("output path", format!("{} has no file name", path.display())))?;
    let tmp = parent.join(format!(".{name}.tmp{}", std::process::id()));
    let result = fs::write(&tmp, bytes)
        .map_err(|e| Error::io(&tmp, e))
        .and_then(|()| fs::rename(&tmp, path).map_err(|e| Error::io(path, e)));
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}
