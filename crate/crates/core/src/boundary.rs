//! Controllability boundary, safe operating area and tracking-error envelope.
//!
//! The bridge can only reverse the sign of `ds/dt` while
//!
//! ```text
//! v_dc / (L_f C_f) > | u_o / (L_f C_f) + (1 / C_f) di_o/dt |
//! ```
//!
//! Multiplying through by `L_f C_f` gives the volt-equivalent form
//! `v_dc > |u_o + L_f di_o/dt|`, which in sinusoidal steady state is a
//! phasor modulus and yields a closed-form safe operating area.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::circuit::{build_load_from_power, CircuitParams, LoadSpec};
use crate::controller::ControllerConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryVerdict {
    /// `v_dc / (L_f C_f)` (V/s²).
    pub lhs: f64,
    /// `|u_o / (L_f C_f) + di_o/dt / C_f|` (V/s²).
    pub rhs: f64,
    /// `(lhs - rhs) / lhs`.
    pub margin: f64,
    pub satisfied: bool,
}

impl BoundaryVerdict {
    pub fn from_sides(lhs: f64, rhs: f64) -> Self {
        let margin = if lhs > 0.0 {
            (lhs - rhs) / lhs
        } else if rhs > 0.0 {
            f64::NEG_INFINITY
        } else {
            0.0
        };
        Self {
            lhs,
            rhs,
            margin,
            satisfied: lhs > rhs,
        }
    }

    /// `lhs` rescaled to volts (`v_dc`).
    pub fn lhs_volts(&self, params: &CircuitParams) -> f64 {
        self.lhs * params.lc()
    }

    /// `rhs` rescaled to volts (`|u_o + L_f di_o/dt|`).
    pub fn rhs_volts(&self, params: &CircuitParams) -> f64 {
        self.rhs * params.lc()
    }
}

pub fn instantaneous_criterion(
    u_o: f64,
    di_o_dt: f64,
    v_dc: f64,
    params: &CircuitParams,
) -> BoundaryVerdict {
    let lhs = v_dc / params.lc();
    let rhs = (u_o / params.lc() + di_o_dt / params.c_f).abs();
    BoundaryVerdict::from_sides(lhs, rhs)
}

/// Complex output-current phasor (peak) when the capacitor voltage is
/// `v_peak ∠ 0` at angular frequency `omega`.
pub fn load_current_phasor(
    v_peak: f64,
    load: &LoadSpec,
    omega: f64,
    params: &CircuitParams,
) -> Complex64 {
    let y_load = load.admittance(omega);
    if y_load == Complex64::new(0.0, 0.0) {
        return Complex64::new(0.0, 0.0);
    }
    let z = y_load.inv() + Complex64::new(params.r_line, omega * params.l_line);
    Complex64::new(v_peak, 0.0) / z
}

/// Worst case over one cycle of `|u_o + L_f di_o/dt|` in sinusoidal steady
/// state, i.e. `|V + jωL_f I|`.
///
/// The steady-state criterion holds exactly when `v_dc` exceeds this value.
pub fn steady_state_worst_case(
    v_peak: f64,
    load: &LoadSpec,
    omega: f64,
    params: &CircuitParams,
) -> f64 {
    let current = load_current_phasor(v_peak, load, omega, params);
    (Complex64::new(v_peak, 0.0) + Complex64::new(0.0, omega * params.l_f) * current).norm()
}

pub fn steady_state_verdict(
    v_dc: f64,
    v_peak: f64,
    load: &LoadSpec,
    omega: f64,
    params: &CircuitParams,
) -> BoundaryVerdict {
    let worst = steady_state_worst_case(v_peak, load, omega, params);
    BoundaryVerdict::from_sides(v_dc / params.lc(), worst / params.lc())
}

/// Axes of a safe-operating-area sweep.
///
/// Loads are `(P, Q)` setpoints sized as constant impedances at
/// `v_rated_peak`, then evaluated at each reference amplitude.
#[derive(Debug, Clone, PartialEq)]
pub struct SoaAxes {
    pub v_dc: Vec<f64>,
    pub v_ref: Vec<f64>,
    pub loads: Vec<(f64, f64)>,
    pub v_rated_peak: f64,
    pub omega: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoaCell {
    pub v_dc: f64,
    pub v_ref: f64,
    pub p: f64,
    pub q: f64,
    /// `|V + jωL_f I|` in volts.
    pub worst_case_v: f64,
    pub verdict: BoundaryVerdict,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoaGrid {
    pub axes: SoaAxes,
    /// `v_dc`-major, then `v_ref`, then load.
    pub cells: Vec<SoaCell>,
}

impl SoaGrid {
    pub fn cell(&self, i_vdc: usize, i_vref: usize, i_load: usize) -> &SoaCell {
        let n_ref = self.axes.v_ref.len();
        let n_load = self.axes.loads.len();
        &self.cells[(i_vdc * n_ref + i_vref) * n_load + i_load]
    }
}

pub fn safe_operating_area(axes: &SoaAxes, params: &CircuitParams) -> Result<SoaGrid> {
    if axes.v_dc.is_empty() || axes.v_ref.is_empty() || axes.loads.is_empty() {
        return Err(Error::InvalidInput("every sweep axis needs at least one value".into()));
    }
    params.validate()?;
    if let Some(v) = axes.v_dc.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::InvalidInput(format!("v_dc axis value {v} must be >= 0")));
    }
    if let Some(v) = axes.v_ref.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::InvalidInput(format!("v_ref axis value {v} must be >= 0")));
    }
    let loads = axes
        .loads
        .iter()
        .map(|&(p, q)| build_load_from_power(p, q, axes.v_rated_peak, axes.omega))
        .collect::<Result<Vec<_>>>()?;

    let n_ref = axes.v_ref.len();
    let n_load = loads.len();
    let total = axes.v_dc.len() * n_ref * n_load;
    let cells = (0..total)
        .into_par_iter()
        .map(|idx| {
            let i_load = idx % n_load;
            let i_ref = (idx / n_load) % n_ref;
            let i_vdc = idx / (n_load * n_ref);
            let (v_dc, v_ref) = (axes.v_dc[i_vdc], axes.v_ref[i_ref]);
            let load = &loads[i_load];
            let worst = steady_state_worst_case(v_ref, load, axes.omega, params);
            SoaCell {
                v_dc,
                v_ref,
                p: load.p,
                q: load.q,
                worst_case_v: worst,
                verdict: BoundaryVerdict::from_sides(v_dc / params.lc(), worst / params.lc()),
            }
        })
        .collect();
    Ok(SoaGrid {
        axes: axes.clone(),
        cells,
    })
}

/// Smallest hysteresis band that sampled hardware can enforce, `H_b`.
///
/// The surface can move at most `v_dc / (L_f C_f) + worst_rhs` between a
/// sample and the moment the bridge reacts, so
/// `H_b = (v_dc / (L_f C_f) + worst_rhs) (T_sample + T_delay)`.
pub fn min_bound_estimate(
    t_sample: f64,
    t_delay: f64,
    v_dc: f64,
    worst_rhs: f64,
    params: &CircuitParams,
) -> Result<f64> {
    if !(t_sample.is_finite() && t_sample > 0.0) {
        return Err(Error::param(format!("t_sample must be > 0, got {t_sample}")));
    }
    if !(t_delay.is_finite() && t_delay >= 0.0) {
        return Err(Error::param(format!("t_delay must be >= 0, got {t_delay}")));
    }
    Ok((v_dc / params.lc() + worst_rhs) * (t_sample + t_delay))
}

/// Drift fraction `k` used when none is given.
///
/// Calibrated with [`peak_drift_fraction`] on the scripted boundary test
/// (150 V dc-link, 120 V reference, 5 kW + 20 kVar inductive load).
pub const DEFAULT_DRIFT_FRACTION: f64 = 3.2e-5;

/// Parameters of the tracking-error envelope for one violation window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopeParams {
    /// Fraction of the bridge authority lost to the drift, in (0, 1).
    pub k: f64,
    /// Length of the violation window (s).
    pub window: f64,
    /// Onset of the violation (s).
    pub t0: f64,
    /// Violation indicator `J`.
    pub violated: bool,
    /// Minimum enforceable band (V/s).
    pub h_b: f64,
}

impl EnvelopeParams {
    pub fn new(k: f64, window: f64, t0: f64, violated: bool, h_b: f64) -> Result<Self> {
        let env = Self {
            k,
            window,
            t0,
            violated,
            h_b,
        };
        env.validate()?;
        Ok(env)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k > 0.0 && self.k < 1.0) {
            return Err(Error::param(format!("k must lie in (0, 1), got {}", self.k)));
        }
        if !(self.window.is_finite() && self.window >= 0.0) {
            return Err(Error::param(format!("window must be >= 0, got {}", self.window)));
        }
        if !self.t0.is_finite() {
            return Err(Error::param("t0 must be finite"));
        }
        if !(self.h_b.is_finite() && self.h_b > 0.0) {
            return Err(Error::param(format!("H_b must be > 0, got {}", self.h_b)));
        }
        Ok(())
    }

    fn in_window(&self, t: f64) -> bool {
        self.violated && t < self.t0 + self.window
    }

    /// Drift slope `-k v_dc / (L_f C_f λ)` (V/s).
    pub fn drift_slope(&self, v_dc: f64, lambda: f64, params: &CircuitParams) -> f64 {
        -self.k * v_dc / (params.lc() * lambda)
    }
}

fn check_envelope_inputs(env: &EnvelopeParams, cfg: &ControllerConfig, t: &[f64]) -> Result<()> {
    env.validate()?;
    cfg.validate()?;
    if cfg.bound < env.h_b {
        return Err(Error::InfeasibleBand {
            bound: cfg.bound,
            min_bound: env.h_b,
        });
    }
    if let Some(bad) = t.iter().find(|&&ti| !(ti >= env.t0)) {
        return Err(Error::InvalidInput(format!(
            "envelope sample time {bad} precedes the onset t0 = {}",
            env.t0
        )));
    }
    Ok(())
}

/// Predicted tracking error.
///
/// Inside the violation window `[t0, t0 + Δt)` (when `J = 1`) the error
/// drifts linearly from `x_at_t0` with slope `-k v_dc / (L_f C_f λ)`.
/// Outside it, the error is a ripple of amplitude `Bound / λ` at `f_sw`.
pub fn error_envelope(
    env: &EnvelopeParams,
    cfg: &ControllerConfig,
    v_dc: f64,
    x_at_t0: f64,
    params: &CircuitParams,
    t: &[f64],
) -> Result<Vec<f64>> {
    check_envelope_inputs(env, cfg, t)?;
    let slope = env.drift_slope(v_dc, cfg.lambda, params);
    let ripple = cfg.ripple_bound();
    Ok(t.iter()
        .map(|&ti| {
            if env.in_window(ti) {
                slope * (ti - env.t0) + x_at_t0
            } else {
                ripple * (2.0 * PI * params.f_sw * ti).sin()
            }
        })
        .collect())
}

/// Magnitude bound of [`error_envelope`]: the drift magnitude inside the
/// window and the ripple amplitude `Bound / λ` elsewhere.
pub fn envelope_magnitude(
    env: &EnvelopeParams,
    cfg: &ControllerConfig,
    v_dc: f64,
    x_at_t0: f64,
    params: &CircuitParams,
    t: &[f64],
) -> Result<Vec<f64>> {
    check_envelope_inputs(env, cfg, t)?;
    let slope = env.drift_slope(v_dc, cfg.lambda, params);
    let ripple = cfg.ripple_bound();
    Ok(t.iter()
        .map(|&ti| {
            if env.in_window(ti) {
                (slope * (ti - env.t0) + x_at_t0).abs()
            } else {
                ripple
            }
        })
        .collect())
}

/// Least-squares drive fraction `k` for a recorded violation episode.
///
/// Fits `x̃(t) - x̃(t0) ≈ -k v_dc (t - t0) / (L_f C_f λ)` over the samples
/// inside `[t0, t0 + window)`. The result is not clamped; callers decide
/// whether it is a usable `k`.
pub fn fit_drift_fraction(
    times: &[f64],
    errors: &[f64],
    t0: f64,
    window: f64,
    v_dc: f64,
    lambda: f64,
    params: &CircuitParams,
) -> Result<f64> {
    if times.len() != errors.len() {
        return Err(Error::InvalidInput("times and errors differ in length".into()));
    }
    let start = times
        .iter()
        .position(|&t| t >= t0)
        .ok_or_else(|| Error::InvalidInput("no samples after t0".into()))?;
    let offset = errors[start];
    let unit_slope = -v_dc / (params.lc() * lambda);
    let (mut num, mut den) = (0.0, 0.0);
    for (&t, &e) in times.iter().zip(errors).skip(start) {
        if t >= t0 + window {
            break;
        }
        let g = unit_slope * (t - t0);
        num += g * (e - offset);
        den += g * g;
    }
    if den == 0.0 {
        return Err(Error::InvalidInput("violation window holds fewer than two samples".into()));
    }
    Ok(num / den)
}

/// Drive fraction `k` whose drift reaches `peak_error` at the end of the
/// window, `k = peak L_f C_f λ / (v_dc Δt)`.
///
/// Unlike [`fit_drift_fraction`] this ignores the shape of the error inside
/// the window, which under saturation oscillates with the fundamental
/// rather than ramping.
pub fn peak_drift_fraction(
    peak_error: f64,
    window: f64,
    v_dc: f64,
    lambda: f64,
    params: &CircuitParams,
) -> Result<f64> {
    if !(window > 0.0 && v_dc > 0.0 && lambda > 0.0) {
        return Err(Error::InvalidInput(
            "window, v_dc and lambda must all be > 0".into(),
        ));
    }
    Ok(peak_error.abs() * params.lc() * lambda / (v_dc * window))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::ReactiveBranch;

    const OMEGA: f64 = 2.0 * PI * 50.0;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn criterion_at_rest_is_satisfied() {
        let v = instantaneous_criterion(0.0, 0.0, 250.0, &CircuitParams::default());
        assert!(v.satisfied);
        assert_eq!(v.rhs, 0.0);
        assert_eq!(v.margin, 1.0);
    }

    #[test]
    fn criterion_direct_substitution() {
        let v = instantaneous_criterion(120.0, 0.0, 150.0, &CircuitParams::default());
        assert!(rel(v.lhs, 1.5e10) < 1e-12);
        assert!(rel(v.rhs, 1.2e10) < 1e-12);
        assert!(v.satisfied);
        assert!((v.margin - 0.2).abs() < 1e-12);
    }

    #[test]
    fn criterion_violated_at_phasor_worst_case() {
        let p = CircuitParams::default();
        // u_o + L_f di_o/dt = 173 V
        let di = (173.0 - 120.0) / p.l_f;
        let v = instantaneous_criterion(120.0, di, 150.0, &p);
        assert!(!v.satisfied);
        assert!(v.margin < 0.0);
        assert!(rel(v.rhs_volts(&p), 173.0) < 1e-12);
    }

    #[test]
    fn zero_dc_link_never_satisfies() {
        let v = BoundaryVerdict::from_sides(0.0, 1.0);
        assert!(!v.satisfied && v.margin < 0.0);
        let v = BoundaryVerdict::from_sides(0.0, 0.0);
        assert!(!v.satisfied && v.margin == 0.0);
    }

    #[test]
    fn resistive_worst_case_closed_form() {
        let p = CircuitParams::default();
        let load = build_load_from_power(5e3, 0.0, 120.0, OMEGA).unwrap();
        let r = load.r_load().unwrap();
        let expected = 120.0 * (1.0 + (OMEGA * p.l_f / r).powi(2)).sqrt();
        assert!(rel(steady_state_worst_case(120.0, &load, OMEGA, &p), expected) < 1e-14);
    }

    #[test]
    fn inductive_worst_case_closed_form() {
        let p = CircuitParams::default();
        let load = build_load_from_power(0.0, 20e3, 120.0, OMEGA).unwrap();
        let x = load.x_mag().unwrap();
        let expected = 120.0 * (1.0 + OMEGA * p.l_f / x);
        assert!(rel(steady_state_worst_case(120.0, &load, OMEGA, &p), expected) < 1e-14);
    }

    #[test]
    fn capacitive_worst_case_closed_form() {
        let p = CircuitParams::default();
        let load = build_load_from_power(0.0, -20e3, 120.0, OMEGA).unwrap();
        let ReactiveBranch::Capacitor(c) = load.branch() else {
            panic!("capacitive load expected")
        };
        let expected = 120.0 * (1.0 - OMEGA * OMEGA * p.l_f * c).abs();
        assert!(rel(steady_state_worst_case(120.0, &load, OMEGA, &p), expected) < 1e-14);
    }

    #[test]
    fn rated_inductive_point_is_near_173_volts() {
        let p = CircuitParams::default();
        let load = build_load_from_power(5e3, 20e3, 120.0, OMEGA).unwrap();
        let w = steady_state_worst_case(120.0, &load, OMEGA, &p);
        assert!((w - 172.85).abs() < 0.01, "{w}");
    }

    #[test]
    fn open_load_worst_case_is_the_voltage() {
        let p = CircuitParams::default();
        let load = LoadSpec::open(120.0, OMEGA).unwrap();
        assert_eq!(steady_state_worst_case(80.0, &load, OMEGA, &p), 80.0);
    }

    fn scenario_axes() -> SoaAxes {
        SoaAxes {
            v_dc: vec![150.0, 250.0],
            v_ref: vec![60.0, 120.0],
            loads: vec![(5e3, 20e3), (5e3, -20e3)],
            v_rated_peak: 120.0,
            omega: OMEGA,
        }
    }

    #[test]
    fn soa_reproduces_scenario_operating_points() {
        for params in [
            CircuitParams::default(),
            CircuitParams::default().with_line(0.0, 50e-6).unwrap(),
        ] {
            let grid = safe_operating_area(&scenario_axes(), &params).unwrap();
            assert_eq!(grid.cells.len(), 8);
            // (v_dc, v_ref, load)
            assert!(!grid.cell(0, 1, 0).verdict.satisfied);
            assert!(grid.cell(0, 0, 0).verdict.satisfied);
            assert!(grid.cell(0, 1, 1).verdict.satisfied);
            assert!(grid.cell(1, 1, 0).verdict.satisfied);
        }
    }

    #[test]
    fn soa_is_axis_major() {
        let grid = safe_operating_area(&scenario_axes(), &CircuitParams::default()).unwrap();
        let order: Vec<_> = grid.cells.iter().map(|c| (c.v_dc, c.v_ref, c.q)).collect();
        assert_eq!(order[0], (150.0, 60.0, 20e3));
        assert_eq!(order[1], (150.0, 60.0, -20e3));
        assert_eq!(order[2], (150.0, 120.0, 20e3));
        assert_eq!(order[4], (250.0, 60.0, 20e3));
    }

    #[test]
    fn soa_rejects_empty_axis() {
        let mut axes = scenario_axes();
        axes.v_ref.clear();
        assert!(matches!(
            safe_operating_area(&axes, &CircuitParams::default()),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn min_bound_examples() {
        let p = CircuitParams::default();
        let hb = min_bound_estimate(1e-6, 0.0, 250.0, 0.0, &p).unwrap();
        assert!(rel(hb, 2.5e4) < 1e-12);
        let tiny = min_bound_estimate(1e-15, 0.0, 250.0, 0.0, &p).unwrap();
        assert!(tiny < 1e-4);
        let double = min_bound_estimate(1.5e-6, 0.5e-6, 250.0, 1e10, &p).unwrap();
        let single = min_bound_estimate(0.5e-6, 0.5e-6, 250.0, 1e10, &p).unwrap();
        assert!(rel(double, 2.0 * single) < 1e-12);
        assert!(min_bound_estimate(0.0, 0.0, 250.0, 0.0, &p).is_err());
    }

    fn env_cfg(bound: f64) -> ControllerConfig {
        ControllerConfig::new(2000.0, bound, 1e-6, 0.0).unwrap()
    }

    #[test]
    fn compliant_envelope_is_pure_ripple() {
        let p = CircuitParams::default();
        let env = EnvelopeParams::new(0.5, 0.01, 0.0, false, 2.5e4).unwrap();
        let cfg = env_cfg(5e4);
        let t: Vec<f64> = (0..2000).map(|n| n as f64 * 1e-7).collect();
        let pred = error_envelope(&env, &cfg, 250.0, 3.0, &p, &t).unwrap();
        let peak = pred.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(rel(peak, 5e4 / 2000.0) < 1e-6, "{peak}");
        let mag = envelope_magnitude(&env, &cfg, 250.0, 3.0, &p, &t).unwrap();
        assert!(mag.iter().all(|&m| m == 25.0));
    }

    #[test]
    fn drift_term_direct_substitution() {
        let p = CircuitParams::default();
        let env = EnvelopeParams::new(0.5, 0.01, 0.2, true, 2.5e4).unwrap();
        let cfg = env_cfg(5e4);
        let t = [0.2, 0.205, 0.21 - 1e-9];
        let pred = error_envelope(&env, &cfg, 150.0, 0.0, &p, &t).unwrap();
        assert_eq!(pred[0], 0.0);
        // 0.5 * 150 / (1e-8 * 2000) = 3.75e6 V/s
        assert!(rel(pred[1], -3.75e6 * 0.005) < 1e-9);
        assert!(rel(pred[2], -3.75e4) < 1e-6);
        // After the window only the ripple remains.
        let after = error_envelope(&env, &cfg, 150.0, 0.0, &p, &[0.3]).unwrap();
        assert!(after[0].abs() <= cfg.bound / cfg.lambda);
    }

    #[test]
    fn ripple_after_window_scales_with_bound() {
        let p = CircuitParams::default();
        let hb = 2.5e4;
        let env = EnvelopeParams::new(0.5, 0.0, 0.0, true, hb).unwrap();
        let cfg = env_cfg(2.0 * hb);
        let mag = envelope_magnitude(&env, &cfg, 250.0, 0.0, &p, &[0.1]).unwrap();
        assert_eq!(mag[0], 2.0 * hb / 2000.0);
    }

    #[test]
    fn envelope_rejects_band_below_minimum() {
        let p = CircuitParams::default();
        let env = EnvelopeParams::new(0.5, 0.01, 0.0, true, 2.5e4).unwrap();
        let err = error_envelope(&env, &env_cfg(1e4), 250.0, 0.0, &p, &[0.0]).unwrap_err();
        assert!(matches!(err, Error::InfeasibleBand { .. }));
        assert!(EnvelopeParams::new(1.0, 0.01, 0.0, true, 1.0).is_err());
    }

    #[test]
    fn fit_recovers_synthetic_drift() {
        let p = CircuitParams::default();
        let (k, v_dc, lambda) = (0.3, 150.0, 2000.0);
        let times: Vec<f64> = (0..1000).map(|n| 0.2 + n as f64 * 1e-5).collect();
        let errors: Vec<f64> = times
            .iter()
            .map(|t| 4.0 - k * v_dc / (p.lc() * lambda) * (t - 0.2))
            .collect();
        let fitted = fit_drift_fraction(&times, &errors, 0.2, 0.005, v_dc, lambda, &p).unwrap();
        assert!((fitted - k).abs() < 1e-9);
    }

    #[test]
    fn peak_fraction_inverts_drift() {
        let p = CircuitParams::default();
        let k = peak_drift_fraction(66.0, 0.2, 150.0, 2000.0, &p).unwrap();
        let env = EnvelopeParams::new(k, 0.2, 0.0, true, 1.0).unwrap();
        assert!((env.drift_slope(150.0, 2000.0, &p) * 0.2 + 66.0).abs() < 1e-9);
        assert!(peak_drift_fraction(66.0, 0.0, 150.0, 2000.0, &p).is_err());
    }
}
