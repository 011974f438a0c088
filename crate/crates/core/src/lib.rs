//! Boundary-controlled quantum state transfer through spin-chain channels.
//!
//! The channel is an XX chain in its single-excitation sector. Two end
//! qubits couple to it through a time-dependent control `alpha(t)`; the
//! channel's zero-energy mode carries the excitation while every other
//! mode acts as a fermionic bath whose influence is set by the overlap of
//! the control's spectral filter with the bath spectrum.

pub mod chain;
pub mod quad;
pub mod bathspec;
pub mod control;
pub mod dynamics;
pub mod noise;

/// Crate version, echoed into run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
