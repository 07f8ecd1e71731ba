//! Gradient-attribution value signals on a differentiable surrogate forecast
//! model: attribution proxies, ablation oracles, statistics, payments and
//! gaming analysis.

pub mod ablation;
pub mod attribution;
pub mod error;
pub mod gaming;
pub mod grid;
pub mod incentive;
pub mod io;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod synth;

pub use error::{Error, Result};
pub use grid::{
    haversine, make_grid, make_station_grid, named_location, Climatology, FieldTensor, GridConfig, GridSpec, LatLon,
    Station, StationGrid, TargetSpec,
};
pub use model::{make_desk_model, make_linear_model, make_truth, ForecastModel, ForecastOutcome, ModelConfig, Truth};
pub use synth::synth_fields;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
