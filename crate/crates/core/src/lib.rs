//! Sum-rate maximization for a transmissive-RIS LEO satellite serving two
//! NOMA users as a secondary (underlay) network.
//!
//! The crate is `no_std` (it needs `alloc`) and contains only the numerical
//! pieces:
//!
//! * [`channel`]: steering-vector channels and effective beam gains.
//! * [`rate`]: SINRs, Shannon rates and the SCA lower-bound surrogate.
//! * [`power`]: NOMA power split and total power for a fixed surface phase.
//! * [`phase`]: lifted phase design, Taylor-linearized objective and
//!   Gaussian-randomization beam extraction.
//! * [`conic`]: a small log-barrier interior-point solver for the lifted
//!   phase problem.
//! * [`optimize`]: the alternating optimization outer loop.
//!
//! IO, configuration files, sweeps and the command line live in the
//! companion `trisnoma` crate.
#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod channel;
pub mod conic;
pub mod error;
pub mod linalg;
pub mod optimize;
pub mod phase;
pub mod power;
pub mod rate;

pub use error::{Error, Result};
pub use linalg::{CMat, CVec, C64};
