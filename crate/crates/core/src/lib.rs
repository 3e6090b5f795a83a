//! Two-stage differentiable random partition model.
//!
//! A partition of `n` elements into `K` labeled subsets is drawn by sampling
//! subset sizes from Fisher's noncentral multivariate hypergeometric
//! distribution ([`mvhg`]), an ordering from a Plackett-Luce distribution
//! ([`permutation`]), and filling the subsets in that order ([`partition`]).
//! Both stages have Gumbel-based relaxations whose hard twins coincide with the
//! exact samplers, so the whole draw is differentiable in `(log ω, log s)` for
//! fixed noise ([`grad`]).
//!
//! ```
//! use drpm::partition::{partition_log_pmf_exact, DrpmParams};
//!
//! let params = DrpmParams::uniform(3, 2).unwrap();
//! let y = "110,001".parse().unwrap();
//! let p = partition_log_pmf_exact(&params, &y).unwrap().exp();
//! assert!((p - 0.15).abs() < 1e-12);
//! ```
//!
//! The `examples/` directory has one runnable program per capability.

pub mod autodiff;
pub mod cli;
pub mod ddouble;
pub mod error;
pub mod estimate;
pub mod grad;
pub mod learn;
pub mod mvhg;
pub mod noise;
pub mod partition;
pub mod permutation;

pub use error::{DrpmError, Result};
pub use mvhg::{MvhgParams, SubsetSizes};
pub use noise::FixedNoise;
pub use partition::{AssignmentMatrix, DrpmParams};
pub use permutation::{PermutationMatrix, PlScores};
