//! Simulation and photon-statistics analysis for a multimode photon-pair
//! source built from an atomic frequency comb with spin-wave storage.
//!
//! The crate is split along the data flow:
//!
//! * [`ensemble`] samples the inhomogeneous ion population and computes the
//!   collective rephasing of the comb.
//! * [`protocol`] lays out the pulse timeline and the gate geometry.
//! * [`source`] runs the seeded Monte Carlo photon-pair source and emits
//!   [`records::DetectionRecord`] streams.
//! * [`analysis`] turns record streams into coincidence histograms,
//!   correlation functions and the Cauchy-Schwarz parameter.
//! * [`model`] holds the closed-form cross-correlation and noise models.
//!
//! Numerical kernels are generic over [`num::Real`]; the aliases below fix
//! them to `f64`.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod analysis;
pub mod config;
pub mod ensemble;
pub mod error;
pub mod model;
pub mod num;
pub mod protocol;
pub mod records;
pub mod source;

pub use config::ProtocolConfig;
pub use error::{Error, Result};
pub use records::{Channel, DetectionRecord};

pub type CombSpec = ensemble::CombSpec<f64>;
pub type IonPopulation = ensemble::IonPopulation<f64>;
pub type EchoPeak = ensemble::EchoPeak<f64>;
pub type ModelParams = model::ModelParams<f64>;
pub type BetaInputs = model::BetaInputs<f64>;
pub type ModelCurve = model::ModelCurve<f64>;

pub type CombSpecF32 = ensemble::CombSpec<f32>;
pub type IonPopulationF32 = ensemble::IonPopulation<f32>;
pub type ModelParamsF32 = model::ModelParams<f32>;
