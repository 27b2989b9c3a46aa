pub mod error;
pub mod gp_envelope;
pub mod cme;
pub mod config;
pub mod kernels;
pub mod pipeline;
pub mod polynomials;
pub mod safety;
pub mod sdp;
pub mod sos;
pub mod systems;

pub use error::{Error, Result};
