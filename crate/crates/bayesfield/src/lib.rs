//! Bayesian neural fields for spatiotemporal prediction.
//!
//! A Bayesian neural field models a scalar observable over space and time
//! with a feed-forward network applied to deterministic space-time
//! covariates. Every network weight carries a prior, so a fitted model is an
//! ensemble of parameter draws and every prediction is a full distribution
//! rather than a point value.
//!
//! The pieces fit together as follows:
//!
//! - [`features`] expands raw space-time indices into covariate vectors
//!   (linear terms, interactions, seasonal and spatial harmonics).
//! - [`model`] defines the network, its parameter layout and priors, the
//!   observation models, and exact log-density gradients.
//! - [`inference`] fits ensembles by MAP, maximum likelihood, or mean-field
//!   variational inference, all driven by Adam with warmup and decay.
//! - [`predict`] queries ensemble predictive mixtures: means, densities,
//!   CDFs, and quantiles.
//! - [`metrics`] scores point and interval forecasts.
//! - [`variogram`] estimates empirical and model-implied semivariograms.
//! - [`data`] loads delimited tables and encodes them onto regular time
//!   grids, with per-location holdout splits for evaluation.
//! - [`config`] holds the run configuration and checkpoint formats used by
//!   the command-line tool.

pub mod config;
pub mod data;
pub mod error;
pub mod features;
pub mod inference;
pub mod metrics;
pub mod model;
pub mod predict;
pub mod root;
pub mod variogram;

pub use config::{atomic_write, load_checkpoint, save_checkpoint, Manifest, RunConfig};
pub use data::{
    encode, format_timestamp, load_query_table, load_table, make_splits, parse_timestamp,
    save_table, step_of, DataRecord, Dataset, Location, RawRow, RawTable, SplitOutcome, SplitPlan,
    TableSchema,
};
pub use error::{Error, Result};
pub use features::{
    build_features, feature_count, seasonal_period, FeatureMatrix, FeatureSpec, Frequency,
    SpaceTimeIndex,
};
pub use inference::{
    elbo_estimate, fit, fit_map, fit_mle, fit_vi, sample_ensemble, FitResult, Method,
    PosteriorEnsemble, TrainConfig, VariationalParams,
};
pub use metrics::{mae, mis, rmse, ScoreReport};
pub use model::{
    forward, init_params, log_joint, log_joint_grad, log_likelihood, log_prior, simulate_field,
    NetworkConfig, ObservationModel, ParamVector,
};
pub use predict::{
    predict_batch, predictive_at, PredictOptions, PredictionRow, PredictionTable,
    PredictiveMixture,
};
pub use variogram::{
    empirical_variogram, haversine_km, inferred_variogram, uniform_locations_in_hull,
    DistanceMetric, VariogramCell, VariogramSpec, VariogramSurface,
};
