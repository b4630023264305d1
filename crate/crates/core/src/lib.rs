//! Scalable ramp rejection for leader-follower networks with delayed couplings:
//! matrix measures, the Halanay rate, a delay-differential simulator, the
//! contraction certificate and the unicycle formation scenario.

pub mod certificate;
pub mod config;
pub mod dde;
pub mod error;
pub mod formation;
pub mod halanay;
pub mod network;
pub mod norms;
pub mod output;

pub use error::{Error, Result};
