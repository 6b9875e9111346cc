//! Angle-delay-time channel modeling.
//!
//! The crate covers the whole pipeline: a geometric channel sequence
//! simulator ([`scene`]), beamspace transforms ([`adt`]), masked-modeling
//! corruption ([`masking`]), sparse spatio-temporal attention
//! ([`attention`]), the transformer backbone with hand-written reverse mode
//! ([`model`]), pretraining ([`train`]) and channel-prediction evaluation
//! ([`downstream`]). File formats live in [`io`], configuration in
//! [`config`].

pub mod adt;
pub mod attention;
pub mod config;
pub mod downstream;
pub mod error;
pub mod frame;
pub mod io;
pub mod masking;
pub mod model;
mod ops;
pub mod rng;
pub mod scene;
pub mod train;

pub use error::{Error, Result};
pub use frame::Frame;

pub use num_complex::Complex64 as C64;

/// Version string embedded in every artifact.
pub const TOOL_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), "/", env!("CARGO_PKG_VERSION"));
