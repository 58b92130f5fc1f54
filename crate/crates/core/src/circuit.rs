//! Switched H-bridge, LC filter and constant-impedance load.
//!
//! The bridge applies `T * v_dc` (with `T` in {-1, +1}) across the filter
//! inductor; the filter capacitor voltage `u_o` is the controlled output.
//! Eliminating the inductor current gives the second-order form used by the
//! controller and the boundary analysis:
//!
//! ```text
//! d²u_o/dt² = -u_o / (L_f C_f) - (1 / C_f) di_o/dt + T v_dc / (L_f C_f)
//! ```
//!
//! The load sits either directly on the capacitor node or behind an optional
//! series R-L line. Without a line the output current is algebraic in the
//! state; with a line it is the line current and is integrated.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::{Error, Result};

/// Smallest switching-to-resonance ratio accepted by the LC design rule.
pub const MIN_DESIGN_RATIO: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CircuitParams {
    /// Filter inductance (H).
    pub l_f: f64,
    /// Filter capacitance (F).
    pub c_f: f64,
    /// Nominal switching frequency (Hz).
    pub f_sw: f64,
    /// Series line resistance (Ω).
    pub r_line: f64,
    /// Series line inductance (H). Zero attaches the load at the capacitor.
    pub l_line: f64,
}

impl Default for CircuitParams {
    /// 0.5 mH / 20 µF filter (≈1.59 kHz resonance) switched at 20 kHz.
    fn default() -> Self {
        Self {
            l_f: 0.5e-3,
            c_f: 20e-6,
            f_sw: 20e3,
            r_line: 0.0,
            l_line: 0.0,
        }
    }
}

impl CircuitParams {
    pub fn new(l_f: f64, c_f: f64, f_sw: f64) -> Result<Self> {
        let params = Self {
            l_f,
            c_f,
            f_sw,
            r_line: 0.0,
            l_line: 0.0,
        };
        params.validate()?;
        Ok(params)
    }

    /// Derives `f_sw = a / (2π √(L_f C_f))` from the design ratio `a`.
    pub fn from_design_ratio(l_f: f64, c_f: f64, a: f64) -> Result<Self> {
        if !(l_f > 0.0 && c_f > 0.0) || !l_f.is_finite() || !c_f.is_finite() {
            return Err(Error::param("L_f and C_f must be positive and finite"));
        }
        Self::new(l_f, c_f, a / (2.0 * PI * (l_f * c_f).sqrt()))
    }

    pub fn with_line(mut self, r_line: f64, l_line: f64) -> Result<Self> {
        self.r_line = r_line;
        self.l_line = l_line;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.l_f) {
            return Err(Error::param(format!("L_f must be > 0, got {}", self.l_f)));
        }
        if !positive(self.c_f) {
            return Err(Error::param(format!("C_f must be > 0, got {}", self.c_f)));
        }
        if !positive(self.f_sw) {
            return Err(Error::param(format!("f_sw must be > 0, got {}", self.f_sw)));
        }
        // Tiny slack so that a = 10 exactly survives the round trip through f_sw.
        let a = self.design_ratio();
        if a < MIN_DESIGN_RATIO * (1.0 - 1e-12) {
            return Err(Error::param(format!(
                "f_sw = {} Hz is only {a:.3}x the LC resonance; the filter design rule needs a >= {MIN_DESIGN_RATIO}",
                self.f_sw
            )));
        }
        if !(self.r_line.is_finite() && self.r_line >= 0.0) {
            return Err(Error::param(format!("R_line must be >= 0, got {}", self.r_line)));
        }
        if !(self.l_line.is_finite() && self.l_line >= 0.0) {
            return Err(Error::param(format!("L_line must be >= 0, got {}", self.l_line)));
        }
        if self.r_line > 0.0 && self.l_line == 0.0 {
            return Err(Error::param("a resistive line needs L_line > 0"));
        }
        Ok(())
    }

    /// `L_f · C_f` (s²).
    pub fn lc(&self) -> f64 {
        self.l_f * self.c_f
    }

    pub fn resonance_hz(&self) -> f64 {
        1.0 / (2.0 * PI * self.lc().sqrt())
    }

    /// The ratio `a = f_sw / f_res`.
    pub fn design_ratio(&self) -> f64 {
        self.f_sw / self.resonance_hz()
    }

    pub fn has_line(&self) -> bool {
        self.l_line > 0.0
    }
}

/// Bipolar bridge polarity `T`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SwitchCommand {
    Positive,
    Negative,
}

impl SwitchCommand {
    pub fn value(self) -> f64 {
        match self {
            SwitchCommand::Positive => 1.0,
            SwitchCommand::Negative => -1.0,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            SwitchCommand::Positive => SwitchCommand::Negative,
            SwitchCommand::Negative => SwitchCommand::Positive,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CircuitState {
    pub t: f64,
    /// Capacitor (output) voltage, the tracked quantity.
    pub u_o: f64,
    /// Filter inductor current.
    pub i_l: f64,
    /// Current leaving the capacitor node towards the load.
    pub i_o: f64,
    /// Inductor current (A) or capacitor voltage (V) of the reactive load branch.
    pub i_load_aux: f64,
    /// Exogenous dc-link voltage.
    pub v_dc: f64,
}

impl CircuitState {
    pub fn at_rest(v_dc: f64) -> Self {
        Self {
            t: 0.0,
            u_o: 0.0,
            i_l: 0.0,
            i_o: 0.0,
            i_load_aux: 0.0,
            v_dc,
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.t, self.u_o, self.i_l, self.i_o, self.i_load_aux, self.v_dc]
            .iter()
            .all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StateDerivative {
    pub du_o: f64,
    pub di_l: f64,
    pub di_o: f64,
    pub di_load_aux: f64,
}

impl StateDerivative {
    /// Second derivative of the output voltage, `(di_L/dt - di_o/dt) / C_f`.
    pub fn d2u_o(&self, params: &CircuitParams) -> f64 {
        (self.di_l - self.di_o) / params.c_f
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReactiveBranch {
    Open,
    /// Inductance in henries.
    Inductor(f64),
    /// Capacitance in farads.
    Capacitor(f64),
}

/// Parallel R ∥ (L or C) load synthesized from a power setpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadSpec {
    pub p: f64,
    /// Positive for inductive, negative for capacitive reactive power.
    pub q: f64,
    pub v_rated_peak: f64,
    pub omega: f64,
    r_load: Option<f64>,
    x_mag: Option<f64>,
    branch: ReactiveBranch,
}

/// Sizes a constant-impedance load that absorbs `(p, q)` at `v_rated_peak`.
pub fn build_load_from_power(p: f64, q: f64, v_rated_peak: f64, omega: f64) -> Result<LoadSpec> {
    if !(v_rated_peak.is_finite() && v_rated_peak > 0.0) {
        return Err(Error::param(format!(
            "rated peak voltage must be > 0, got {v_rated_peak}"
        )));
    }
    if !(omega.is_finite() && omega > 0.0) {
        return Err(Error::param(format!("angular frequency must be > 0, got {omega}")));
    }
    if !(p.is_finite() && p >= 0.0) {
        return Err(Error::param(format!("active power must be >= 0, got {p}")));
    }
    if !q.is_finite() {
        return Err(Error::param(format!("reactive power must be finite, got {q}")));
    }
    // Peak-voltage convention: apparent power uses V_rms² = V̂² / 2.
    let v_sq = v_rated_peak * v_rated_peak / 2.0;
    let r_load = (p > 0.0).then(|| v_sq / p);
    let x_mag = (q != 0.0).then(|| v_sq / q.abs());
    let branch = match x_mag {
        None => ReactiveBranch::Open,
        Some(x) if q > 0.0 => ReactiveBranch::Inductor(x / omega),
        Some(x) => ReactiveBranch::Capacitor(1.0 / (omega * x)),
    };
    Ok(LoadSpec {
        p,
        q,
        v_rated_peak,
        omega,
        r_load,
        x_mag,
        branch,
    })
}

impl LoadSpec {
    pub fn open(v_rated_peak: f64, omega: f64) -> Result<Self> {
        build_load_from_power(0.0, 0.0, v_rated_peak, omega)
    }

    pub fn r_load(&self) -> Option<f64> {
        self.r_load
    }

    pub fn x_mag(&self) -> Option<f64> {
        self.x_mag
    }

    pub fn branch(&self) -> ReactiveBranch {
        self.branch
    }

    pub fn is_open(&self) -> bool {
        self.r_load.is_none() && self.branch == ReactiveBranch::Open
    }

    fn conductance(&self) -> f64 {
        self.r_load.map_or(0.0, |r| 1.0 / r)
    }

    /// Complex admittance of the load terminals at `omega`.
    pub fn admittance(&self, omega: f64) -> Complex64 {
        let g = Complex64::new(self.conductance(), 0.0);
        match self.branch {
            ReactiveBranch::Open => g,
            ReactiveBranch::Inductor(l) => g + Complex64::new(0.0, -1.0 / (omega * l)),
            ReactiveBranch::Capacitor(c) => g + Complex64::new(0.0, omega * c),
        }
    }

    /// Voltage across the load terminals.
    pub fn node_voltage(&self, state: &CircuitState, params: &CircuitParams) -> f64 {
        if !params.has_line() {
            return state.u_o;
        }
        match (self.branch, self.r_load) {
            (ReactiveBranch::Capacitor(_), _) => state.i_load_aux,
            (ReactiveBranch::Inductor(_), Some(r)) => r * (state.i_o - state.i_load_aux),
            (ReactiveBranch::Inductor(l), None) => {
                l * (state.u_o - params.r_line * state.i_o) / (params.l_line + l)
            }
            (ReactiveBranch::Open, Some(r)) => r * state.i_o,
            (ReactiveBranch::Open, None) => state.u_o,
        }
    }

    /// Projects the algebraic parts of `state` onto this load.
    ///
    /// Without a line the output current is a function of the other states;
    /// a capacitive branch then shares the node voltage.
    pub fn consistent(&self, mut state: CircuitState, params: &CircuitParams) -> CircuitState {
        if params.has_line() {
            match (self.branch, self.r_load) {
                (ReactiveBranch::Open, None) => state.i_o = 0.0,
                (ReactiveBranch::Inductor(_), None) => state.i_load_aux = state.i_o,
                _ => {}
            }
            return state;
        }
        let g = self.conductance();
        match self.branch {
            ReactiveBranch::Open => {
                state.i_o = state.u_o * g;
                state.i_load_aux = 0.0;
            }
            ReactiveBranch::Inductor(_) => state.i_o = state.u_o * g + state.i_load_aux,
            ReactiveBranch::Capacitor(c) => {
                let du = (state.i_l - state.u_o * g) / (params.c_f + c);
                state.i_o = state.u_o * g + c * du;
                state.i_load_aux = state.u_o;
            }
        }
        state
    }

    /// Carries the circuit state across a load swap.
    ///
    /// The capacitor node and the line current are continuous. A new
    /// capacitive branch starts charged to the present terminal voltage. A
    /// new inductive branch keeps the previous inductor current when the old
    /// load also had one. Otherwise it takes whatever part of the line
    /// current the resistor cannot carry at the present terminal voltage
    /// (zero without a line).
    pub fn transfer_state(
        &self,
        next: &LoadSpec,
        state: &CircuitState,
        params: &CircuitParams,
    ) -> CircuitState {
        let v_node = self.node_voltage(state, params);
        let mut out = *state;
        out.i_load_aux = match (next.branch, self.branch) {
            (ReactiveBranch::Capacitor(_), _) => v_node,
            (ReactiveBranch::Inductor(_), ReactiveBranch::Inductor(_)) => state.i_load_aux,
            (ReactiveBranch::Inductor(_), _) if params.has_line() => {
                state.i_o - v_node * next.conductance()
            }
            _ => 0.0,
        };
        next.consistent(out, params)
    }
}

/// `u = T · v_dc / (L_f C_f)`, the bridge's contribution to `d²u_o/dt²`.
pub fn equivalent_control_input(cmd: SwitchCommand, v_dc: f64, params: &CircuitParams) -> f64 {
    cmd.value() * v_dc / params.lc()
}

/// Right-hand side of the plant for a held switch command.
///
/// `di_o` is the exact load-side derivative (not a finite difference) and is
/// what the controllability check consumes.
pub fn state_derivatives(
    state: &CircuitState,
    cmd: SwitchCommand,
    params: &CircuitParams,
    load: &LoadSpec,
) -> StateDerivative {
    let u = state.u_o;
    let di_l = (cmd.value() * state.v_dc - u) / params.l_f;
    let g = load.conductance();

    if !params.has_line() {
        return match load.branch {
            ReactiveBranch::Open => {
                let i_o = u * g;
                let du = (state.i_l - i_o) / params.c_f;
                StateDerivative {
                    du_o: du,
                    di_l,
                    di_o: du * g,
                    di_load_aux: 0.0,
                }
            }
            ReactiveBranch::Inductor(l) => {
                let i_o = u * g + state.i_load_aux;
                let du = (state.i_l - i_o) / params.c_f;
                StateDerivative {
                    du_o: du,
                    di_l,
                    di_o: du * g + u / l,
                    di_load_aux: u / l,
                }
            }
            ReactiveBranch::Capacitor(c) => {
                // Load capacitor in parallel with C_f.
                let c_total = params.c_f + c;
                let du = (state.i_l - u * g) / c_total;
                let d2u = (di_l - du * g) / c_total;
                StateDerivative {
                    du_o: du,
                    di_l,
                    di_o: du * g + c * d2u,
                    di_load_aux: du,
                }
            }
        };
    }

    let i = state.i_o;
    let du = (state.i_l - i) / params.c_f;
    let line_drop = u - params.r_line * i;
    let v = load.node_voltage(state, params);
    let (di_o, di_aux) = match (load.branch, load.r_load) {
        (ReactiveBranch::Open, None) => (0.0, 0.0),
        (ReactiveBranch::Open, Some(_)) => ((line_drop - v) / params.l_line, 0.0),
        (ReactiveBranch::Inductor(l), None) => {
            let di = line_drop / (params.l_line + l);
            (di, di)
        }
        (ReactiveBranch::Inductor(l), Some(_)) => ((line_drop - v) / params.l_line, v / l),
        (ReactiveBranch::Capacitor(c), _) => ((line_drop - v) / params.l_line, (i - v * g) / c),
    };
    StateDerivative {
        du_o: du,
        di_l,
        di_o,
        di_load_aux: di_aux,
    }
}

/// Energy held in the filter, `½ C_f u_o² + ½ L_f i_L²`.
pub fn filter_energy(state: &CircuitState, params: &CircuitParams) -> f64 {
    0.5 * params.c_f * state.u_o * state.u_o + 0.5 * params.l_f * state.i_l * state.i_l
}
