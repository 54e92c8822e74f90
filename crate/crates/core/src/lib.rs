//! Spectral regularization toolkit.
//!
//! Diagonal operator models, index functions, filter methods, worst-case and
//! mean-square error evaluation, parameter choice rules, variational source
//! condition certificates and reproducible convergence-rate experiments.

pub mod error;
pub mod experiments;
pub mod filters;
mod float_serde;
pub mod grid;
pub mod index_fn;
pub mod param_choice;
pub mod problems;
pub mod regularize;
pub mod roots;
pub mod spectral;
pub mod vsc;

pub use error::{Result, SpecregError};
pub use filters::{FilterKind, FilterMethod};
pub use index_fn::IndexFunction;
pub use spectral::{SpectralElement, SpectralOperator};
