//! Linear transfer learning by common-space mapping and weighted domain
//! matching.
//!
//! Source and target data are projected into a shared subspace by a matrix
//! with orthonormal rows. Source points are reweighted so their weighted mean
//! matches the target mean there. A shared linear classifier is then adapted
//! to each domain by a per-domain linear correction. Local reconstruction
//! coefficients from k-nearest-neighbor graphs smooth both the source weights
//! and the target responses.
//!
//! Modules, bottom-up:
//!
//! - [`data`]: datasets, CSV/svmlight I/O, synthetic shifted domains;
//! - [`qp`]: active-set solver for box + sum constrained QPs;
//! - [`neighborhood`]: kNN graphs and reconstruction coefficients;
//! - [`model`]: parameters and objective terms;
//! - [`optimizer`]: alternating minimization;
//! - [`eval`]: baselines, cross-validation and reports.

pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod neighborhood;
pub mod optimizer;
pub mod qp;

pub use data::{DataFormat, DomainDataset, SyntheticShiftSpec};
pub use error::{Error, Result};
pub use model::{HyperParams, SourceWeights, TransferModel};
pub use optimizer::{fit, OptState};
