//! Single-phase grid-forming inverter toolkit.
//!
//! The crate models a bipolar H-bridge feeding an LC filter and a
//! constant-impedance load, drives it with a sampled hysteresis controller
//! on a first-order sliding surface, and evaluates the dc-link
//! controllability boundary
//!
//! ```text
//! v_dc / (L_f C_f) > | u_o / (L_f C_f) + (1 / C_f) di_o/dt |
//! ```
//!
//! both instantaneously along simulated trajectories and in sinusoidal
//! steady state (phasor form). The best-achievable tracking-error envelope
//! and the minimum hysteresis band enforceable by sampled hardware are in
//! [`boundary`].
//!
//! Module map:
//!
//! * [`circuit`]: plant parameters, state and right-hand side.
//! * [`controller`]: sliding surface, hysteresis relay, error reconstruction.
//! * [`boundary`]: controllability criterion, safe operating area, envelope.
//! * [`sim`]: fixed-step RK4 engine, scenarios, metrics.
//! * [`scenario_io`]: scenario script parser, CSV writers, run manifest.

pub mod boundary;
pub mod circuit;
pub mod controller;
mod error;
pub mod scenario_io;
pub mod sim;

pub use error::{Error, Result};
