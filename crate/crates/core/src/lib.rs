//! Uplink transmit-power minimization for RIS-aided IoT networks.
//!
//! RIS phases and BS receive beamformers are optimized jointly on the
//! product of the complex circle and complex oblique manifolds using
//! Riemannian conjugate gradient, alternating with a minimal-power solve.

pub mod channel;
pub mod error;
pub mod experiments;
pub mod estimation;
pub mod manifold;
pub mod power;
pub mod rcg;

pub use error::{Error, Result};
