//! Haar-moment, Gaussian-process and tangent-kernel tools for layered
//! variational quantum circuits.

pub mod circuit;
pub mod error;
pub mod experiments;
pub mod gp;
pub mod haar;
pub mod linalg;
pub mod near_gaussian;
pub mod perm;
pub mod qntk;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
