//! iUzawa-Net: unrolled inexact Uzawa iterations whose operators are
//! learned Fourier neural operators, a spectral SPD preconditioner and a
//! pointwise proximal network.

pub mod augment;
pub mod checkpoint;
pub mod config;
mod error;
pub mod gradcheck;
pub mod modules;
pub mod params;
pub mod train;
pub mod unroll;

pub use config::{NetConfig, Tying};
pub use error::{Error, Result};
pub use params::NetParams;
