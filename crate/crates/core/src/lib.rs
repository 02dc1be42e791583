//! Step processes built from triangular arrays, their stochastic integrals,
//! and numerical checks of the conditions under which they converge to a
//! diffusion.
//!
//! ```
//! use stepdiff::conditions::{check_conditions, ConditionParams, ConditionVariant};
//! use stepdiff::models::model_nongood_triple;
//! use stepdiff::{DiffusionSpec, TimeGrid};
//!
//! # fn main() -> stepdiff::Result<()> {
//! let n = 300;
//! let model = model_nongood_triple(n)?;
//! let limit = DiffusionSpec::scaled_wiener(1, 1.0 / 3f64.sqrt());
//! let grid = TimeGrid::new(n, 1.0)?;
//! let params = ConditionParams::new(1.0, vec![0.1], vec![0.01], ConditionVariant::Cor22, None)?;
//! let report = check_conditions(&model, &limit, None, &grid, &params, 50, 42, 1)?;
//! assert!(report.sup_ii.iter().all(|&x| x <= 5.0 / n as f64));
//! # Ok(())
//! # }
//! ```

pub mod conditions;
pub mod config;
pub mod diffusion;
pub mod error;
pub mod gauss;
pub mod io;
pub mod integrals;
pub mod law;
pub mod limit;
pub mod models;
pub mod parallel;
pub mod paths;
pub mod rng;
pub mod runner;
pub mod stats;
pub mod truncation;

pub use diffusion::{DiffusionSpec, InitialLaw};
pub use error::{Error, Result};
pub use law::{Bound, CondLaw, ConditionalOracle, Noise};
pub use models::{ArrayModel, History};
pub use paths::{PathEnsemble, SampledPath, StepPath, TimeGrid};
pub use rng::{SeedRecord, StreamPurpose};
pub use truncation::{g_c, make_canonical_truncation, CanonicalTruncation};
