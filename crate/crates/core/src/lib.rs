//! Numerics on symmetric cones: Euclidean Jordan algebras, multiplication
//! algorithms, w-logarithmic Cauchy functions and the solution families of
//! the fundamental equation of information, together with the sampling,
//! limit-extrapolation and fitting machinery used to verify and recover them.

pub mod cli;
pub mod error;
pub mod fei;
pub mod jordan;
pub mod log_cauchy;
pub mod mult;
pub mod recovery;
pub mod sampler;

pub use error::{Error, Result};
pub use fei::{FamilySpec, MaksaQuadruple, ResidualReport, SolutionQuadruple};
pub use log_cauchy::LogCauchyFn;
pub use mult::{AxiomReport, MultAlgorithm};
pub use recovery::{LimitEstimate, RecoveredComponents, RecoveryConfig};
pub use jordan::{Algebra, Element, LinearOperator, Region, SpectralDecomposition};
