//! Field model and zone control for a multi-carrier parametric loudspeaker.
//!
//! [`ultrasound`] radiates the sideband tones from a baffled piston,
//! [`nonlinear`] turns each sideband pair into an audio transfer function,
//! [`szc`] picks carrier weights by acoustic contrast control and [`signal`]
//! builds the emitted drive signal.

// `!(x > 0.0)` is how NaN inputs are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod medium;
pub mod nonlinear;
pub mod quad;
pub mod signal;
pub mod special;
pub mod szc;
pub mod ultrasound;

pub use error::{Error, Result};
pub use medium::AirMedium;
pub use nonlinear::{AudioTransferGrid, CarrierChannel, CarrierSet, ObsPoint, QuadSpec};
pub use signal::{DriveSignal, FactorMode};
pub use szc::{AccSolution, ZoneSpec};
pub use ultrasound::{Backend, PistonSource, UltraFieldGrid};
