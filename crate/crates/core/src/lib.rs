//! Stability and induced-l2-gain certificates for discrete-time recurrent
//! networks with ReLU activations.
//!
//! The plant is an LTI system in feedback with a repeated ReLU. Certificates
//! come from a dissipativity LMI over an N-step lifting of the plant, with
//! quadratic constraints that exploit ReLU structure across the lifted
//! window, solved by an interior-point conic backend.

use netlib_src as _;

pub mod certifier;
pub mod error;
pub mod io;
pub mod lifting;
pub mod linalg;
pub mod qc;
pub mod sdp;
pub mod sim;
pub mod sysmodel;

pub use error::{Error, Result};
pub use nalgebra;
