//! Multifractal analysis of coherent states of the Dicke model.

pub mod cache;
pub mod classical;
pub mod coherent;
pub mod error;
pub mod model;
pub mod multifractal;
pub mod pipeline;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Params = model::ModelParams<f64>;
pub type Spectrum = model::SpectralData<f64>;
pub type Point = coherent::PhaseSpacePoint<f64>;
pub type Expansion = coherent::EigenExpansion<f64>;
pub type Trajectory = classical::Trajectory<f64>;
pub type Section = classical::PoincareSection<f64>;
