//! SVRG Langevin dynamics, its stochastic delay differential equation
//! approximation, and numerical checks of the structure connecting the two.

// `!(a < b)` is used on purpose so that NaN lands on the error path.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ensemble;
pub mod error;
pub mod export;
pub mod linalg;
pub mod metrics;
pub mod models;
pub mod par;
pub mod rng;
pub mod sdde;
pub mod svrgld;
pub mod verify;

pub use ensemble::{Component, Ensemble, EpochPath};
pub use error::{Error, Result};
pub use models::{DiffusionSpec, Model, ObjectiveModel};
pub use par::Execution;
pub use sdde::SddeConfig;
pub use svrgld::RunConfig;
pub use verify::AssumptionReport;
