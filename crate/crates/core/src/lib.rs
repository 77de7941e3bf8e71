//! Rate-splitting transmit precoder design for dual-function
//! radar-communication arrays.
//!
//! The joint problem trades the weighted sum rate of a rate-splitting
//! downlink against least-squares matching of a desired transmit
//! beampattern, under equal per-antenna power. It is solved by consensus
//! ADMM: a communication-side copy of the precoder is updated with a
//! rate-WMMSE alternating optimisation ([`wmmse`]), a radar-side copy with
//! a semidefinite relaxation plus rank-one extraction ([`sdr`]), and the
//! two are tied together by a scaled dual in [`admm`].

// Input checks are written `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod admm;
pub mod comm;
pub mod conic;
mod error;
pub mod harness;
pub mod model;
pub mod radar;
pub mod sdr;
pub mod wmmse;

pub use comm::RateReport;
pub use error::{Error, Result};
pub use model::{CMatrix, CVector, PrecoderSolution, Scenario, ScenarioConfig};
pub use radar::BeampatternProfile;
pub use admm::{AdmmConfig, AdmmOutcome, AdmmStatus};
pub use model::Method;
