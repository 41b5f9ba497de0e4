//! Numerical core for nonsmooth optimal control of linear PDEs: grid
//! fields, spectral transforms, PDE solution operators, pointwise
//! resolvents, classical saddle-point solvers, and random problem data.

pub mod error;
pub mod field;
pub mod grf;
pub mod classic;
pub mod pde;
pub mod prox;
pub mod spectral;

pub use error::{Error, Result};
pub use field::{inner_product, norm_l1, norm_l2, relative_error, resample, Domain, GridField};
pub use pde::{PdeKind, PdeOperator};
pub use prox::{resolvent, Multiplier, Regularizer};
