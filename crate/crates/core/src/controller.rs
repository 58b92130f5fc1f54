//! Sliding-surface voltage tracking with a sampled hysteresis relay.
//!
//! With `x = u_o` and tracking error `x̃ = x - x_d`, the surface is
//! `s = dx̃/dt + λ x̃`. Its derivative splits into a plant drift, reference
//! feed terms and the bridge input:
//!
//! ```text
//! ds/dt = f(u_o, i_o) - ẍ_d + λ dx̃/dt + T v_dc / (L_f C_f)
//! ```
//!
//! The bridge term dominates, so flipping `T` whenever `s` leaves the band
//! `[-Bound, +Bound]` produces a sawtooth `s`. Because the map from `s` back
//! to `x̃` is a first-order filter with a known initial condition,
//! [`reconstruct_error`] recovers `x̃` from a recorded `s` trace.

use std::collections::VecDeque;

use crate::circuit::{
    equivalent_control_input, state_derivatives, CircuitParams, CircuitState, LoadSpec,
    SwitchCommand,
};
use crate::{Error, Result};

/// Ratio between the nominal switching frequency and the surface pole.
pub const POLE_DIVISOR: f64 = 10.0;

/// `λ = f_sw / 10`.
pub fn surface_pole(params: &CircuitParams) -> f64 {
    params.f_sw / POLE_DIVISOR
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerConfig {
    /// Surface pole λ (1/s).
    pub lambda: f64,
    /// Hysteresis half-width on `s` (V/s).
    pub bound: f64,
    /// Controller sampling period (s).
    pub t_sample: f64,
    /// Actuation delay between a decision and the bridge (s).
    pub t_delay: f64,
}

impl ControllerConfig {
    pub fn new(lambda: f64, bound: f64, t_sample: f64, t_delay: f64) -> Result<Self> {
        let cfg = Self {
            lambda,
            bound,
            t_sample,
            t_delay,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Uses the surface pole `λ = f_sw / 10` of the given filter design.
    pub fn for_circuit(
        params: &CircuitParams,
        bound: f64,
        t_sample: f64,
        t_delay: f64,
    ) -> Result<Self> {
        Self::new(surface_pole(params), bound, t_sample, t_delay)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(self.lambda) {
            return Err(Error::param(format!("lambda must be > 0, got {}", self.lambda)));
        }
        if !ok(self.bound) {
            return Err(Error::param(format!("bound must be > 0, got {}", self.bound)));
        }
        if !ok(self.t_sample) {
            return Err(Error::param(format!("t_sample must be > 0, got {}", self.t_sample)));
        }
        if !(self.t_delay.is_finite() && self.t_delay >= 0.0) {
            return Err(Error::param(format!("t_delay must be >= 0, got {}", self.t_delay)));
        }
        Ok(())
    }

    /// `Bound / λ`: the largest `|x̃|` a surface held inside the band can sustain.
    pub fn ripple_bound(&self) -> f64 {
        self.bound / self.lambda
    }
}

/// Sinusoidal voltage reference `x_d(t) = A sin(ωt + φ)` (peak convention).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceSignal {
    pub amplitude: f64,
    pub omega: f64,
    pub phase: f64,
}

/// Reference value and its first two derivatives at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ReferencePoint {
    pub x_d: f64,
    pub x_d_dot: f64,
    pub x_d_ddot: f64,
}

impl ReferenceSignal {
    pub fn new(amplitude: f64, omega: f64, phase: f64) -> Self {
        Self {
            amplitude,
            omega,
            phase,
        }
    }

    pub fn at(&self, t: f64) -> ReferencePoint {
        let (sin, cos) = (self.omega * t + self.phase).sin_cos();
        ReferencePoint {
            x_d: self.amplitude * sin,
            x_d_dot: self.amplitude * self.omega * cos,
            x_d_ddot: -self.amplitude * self.omega * self.omega * sin,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackingSample {
    pub x: f64,
    pub x_dot: f64,
    pub x_tilde: f64,
    pub x_tilde_dot: f64,
    pub s: f64,
}

impl TrackingSample {
    pub fn new(x: f64, x_dot: f64, reference: &ReferencePoint, lambda: f64) -> Self {
        let x_tilde = x - reference.x_d;
        let x_tilde_dot = x_dot - reference.x_d_dot;
        Self {
            x,
            x_dot,
            x_tilde,
            x_tilde_dot,
            s: x_tilde_dot + lambda * x_tilde,
        }
    }
}

/// `s = (ẋ - ẋ_d) + λ (x - x_d)`.
pub fn sliding_surface(x: f64, x_dot: f64, reference: &ReferencePoint, lambda: f64) -> f64 {
    TrackingSample::new(x, x_dot, reference, lambda).s
}

/// Relay law on the surface. Exactly on the band edge the previous command holds.
pub fn hysteresis_decision(s: f64, cfg: &ControllerConfig, prev: SwitchCommand) -> SwitchCommand {
    if s > cfg.bound {
        SwitchCommand::Negative
    } else if s < -cfg.bound {
        SwitchCommand::Positive
    } else {
        prev
    }
}

/// The three addends of `ds/dt`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SDotTerms {
    /// `-u_o / (L_f C_f) - (1 / C_f) di_o/dt`
    pub f_term: f64,
    /// `-ẍ_d + λ dx̃/dt`
    pub feed_terms: f64,
    /// `T v_dc / (L_f C_f)`
    pub u_term: f64,
}

impl SDotTerms {
    pub fn total(&self) -> f64 {
        self.f_term + self.feed_terms + self.u_term
    }
}

pub fn s_dot_decomposition(
    state: &CircuitState,
    load: &LoadSpec,
    reference: &ReferencePoint,
    cfg: &ControllerConfig,
    params: &CircuitParams,
    cmd: SwitchCommand,
) -> SDotTerms {
    let d = state_derivatives(state, cmd, params, load);
    let x_tilde_dot = d.du_o - reference.x_d_dot;
    SDotTerms {
        f_term: -state.u_o / params.lc() - d.di_o / params.c_f,
        feed_terms: -reference.x_d_ddot + cfg.lambda * x_tilde_dot,
        u_term: equivalent_control_input(cmd, state.v_dc, params),
    }
}

/// Rebuilds `x̃` on a uniform grid from sampled `s` and `x̃(t_0)`.
///
/// Evaluates `x̃(t) = e^{-λ(t-t_0)} [x̃(t_0) + ∫ s(τ) e^{λ(τ-t_0)} dτ]`
/// with the trapezoidal rule, one interval at a time. The output has the
/// same length as `s_series`; element 0 is `x_tilde_0`.
pub fn reconstruct_error(
    s_series: &[f64],
    step: f64,
    x_tilde_0: f64,
    lambda: f64,
) -> Result<Vec<f64>> {
    if s_series.is_empty() {
        return Err(Error::InvalidInput("empty surface series".into()));
    }
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::InvalidInput(format!("sample step must be > 0, got {step}")));
    }
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::InvalidInput(format!("lambda must be > 0, got {lambda}")));
    }
    let decay = (-lambda * step).exp();
    let half = 0.5 * step;
    let mut out = Vec::with_capacity(s_series.len());
    let mut x = x_tilde_0;
    out.push(x);
    for pair in s_series.windows(2) {
        x = decay * x + half * (decay * pair[0] + pair[1]);
        out.push(x);
    }
    Ok(out)
}

/// Sampled relay with an optional actuation delay, stepped on the
/// integrator grid.
#[derive(Debug, Clone)]
pub struct HysteresisController {
    cfg: ControllerConfig,
    sample_stride: u64,
    delay_steps: u64,
    decided: SwitchCommand,
    applied: SwitchCommand,
    pending: VecDeque<(u64, SwitchCommand)>,
}

/// `period / dt` when it is a whole number of steps.
pub(crate) fn whole_steps(period: f64, dt: f64, what: &str) -> Result<u64> {
    let ratio = period / dt;
    let n = ratio.round();
    if (ratio - n).abs() > 1e-6 * n.max(1.0) {
        return Err(Error::param(format!(
            "{what} = {period} s is not a whole number of integration steps (dt = {dt} s)"
        )));
    }
    Ok(n as u64)
}

impl HysteresisController {
    pub fn new(cfg: ControllerConfig, dt: f64, initial: SwitchCommand) -> Result<Self> {
        cfg.validate()?;
        let sample_stride = whole_steps(cfg.t_sample, dt, "t_sample")?;
        if sample_stride == 0 {
            return Err(Error::param("t_sample must be at least one integration step"));
        }
        let delay_steps = whole_steps(cfg.t_delay, dt, "t_delay")?;
        Ok(Self {
            cfg,
            sample_stride,
            delay_steps,
            decided: initial,
            applied: initial,
            pending: VecDeque::new(),
        })
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.cfg
    }

    pub fn applied(&self) -> SwitchCommand {
        self.applied
    }

    /// Advances to integration step `step` and returns the command the bridge
    /// holds over it. `surface` is evaluated only on sampling steps.
    pub fn tick(&mut self, step: u64, surface: impl FnOnce() -> f64) -> SwitchCommand {
        if step % self.sample_stride == 0 {
            let next = hysteresis_decision(surface(), &self.cfg, self.decided);
            if next != self.decided {
                self.decided = next;
                self.pending.push_back((step + self.delay_steps, next));
            }
        }
        while let Some(&(due, cmd)) = self.pending.front() {
            if due > step {
                break;
            }
            self.applied = cmd;
            self.pending.pop_front();
        }
        self.applied
    }
}
