//! Areal interpolation of Poisson counts between incompatible zone systems
//! on a regular grid.
//!
//! Everything numeric is generic over [`scalar::Scalar`]; the aliases below
//! fix it to `f64`.

pub mod aim;
pub mod analytic;
pub mod experiment;
pub mod field;
pub mod grid;
pub mod interp;
pub mod io;
pub mod linalg;
pub mod mc;
pub mod regression;
pub mod scalar;

pub type Region = grid::GridRegion<f64>;
pub type Zones = grid::ZoneSystem<f64>;
pub type Table = grid::IntersectionTable<f64>;
pub type Geometry = grid::GeometryStats<f64>;
pub type Intensity = field::IntensityField<f64>;
pub type Counts = field::CountField<f64>;
pub type Params = aim::AimParams<f64>;
pub type Predictions = interp::PredictionSet<f64>;
pub type RegDesign = regression::Design<f64>;
pub type Fit = regression::FitResult<f64>;
pub type Errors = analytic::ErrorSummary<f64>;
