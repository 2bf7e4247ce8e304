//! Measurement models for spin chains driven by autonomous quantum clocks.

pub mod acceptance;
pub mod clock_sim;
pub mod error;
pub mod mediator;
pub mod qla;
pub mod projective;
pub mod signalling;
pub mod spin_chain;
pub mod util;
pub mod wavepacket_analytic;

pub use error::{Error, Result};
