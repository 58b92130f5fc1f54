//! Fixed-step time-domain engine.
//!
//! The plant is integrated with classical RK4 on a uniform grid `dt`. The
//! relay samples the surface every `t_sample` and the bridge command is held
//! constant across each step, so switch instants fall on grid points.
//! Scenario events change inputs (dc-link voltage, reference amplitude,
//! load) at the first grid point at or after their time; the circuit state
//! itself is continuous across them.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::boundary::{instantaneous_criterion, min_bound_estimate, steady_state_worst_case};
use crate::circuit::{
    build_load_from_power, state_derivatives, CircuitParams, CircuitState, LoadSpec,
    StateDerivative, SwitchCommand,
};
use crate::controller::{
    surface_pole, whole_steps, ControllerConfig, HysteresisController, ReferenceSignal,
    TrackingSample,
};
use crate::{Error, Result};

/// Default hysteresis band as a multiple of the minimum enforceable band.
pub const DEFAULT_BAND_FACTOR: f64 = 2.0;

/// Shortest violation run kept by [`violation_intervals`] (s).
pub const DEBOUNCE_MIN_RUN: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerSetpoint {
    pub p: f64,
    pub q: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EventKind {
    SetVdc(f64),
    SetVrefAmp(f64),
    SetLoad(PowerSetpoint),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub t: f64,
    pub kind: EventKind,
}

/// A scripted experiment: initial operating point plus timed input steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub params: CircuitParams,
    pub init_vdc: f64,
    pub init_vref_amp: f64,
    pub init_load: PowerSetpoint,
    pub f_grid: f64,
    /// Peak voltage at which load setpoints are converted to impedances.
    pub v_rated: f64,
    pub t_end: f64,
    pub dt: f64,
    pub record_period: f64,
    /// Surface pole; `None` selects `f_sw / 10`.
    pub lambda: Option<f64>,
    /// Hysteresis band; `None` selects `DEFAULT_BAND_FACTOR · H_b`.
    pub bound: Option<f64>,
    pub t_sample: f64,
    pub t_delay: f64,
    pub events: Vec<Event>,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            params: CircuitParams::default(),
            init_vdc: 250.0,
            init_vref_amp: 120.0,
            init_load: PowerSetpoint { p: 5e3, q: 20e3 },
            f_grid: 50.0,
            v_rated: 120.0,
            t_end: 1.0,
            dt: 0.5e-6,
            record_period: 10e-6,
            lambda: None,
            bound: None,
            t_sample: 1.5e-6,
            t_delay: 0.0,
            events: Vec::new(),
        }
    }
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidScenario(msg.into())
}

impl Scenario {
    pub fn omega(&self) -> f64 {
        2.0 * PI * self.f_grid
    }

    pub fn load_for(&self, setpoint: PowerSetpoint) -> Result<LoadSpec> {
        build_load_from_power(setpoint.p, setpoint.q, self.v_rated, self.omega())
    }

    pub fn initial_load(&self) -> Result<LoadSpec> {
        self.load_for(self.init_load)
    }

    /// Orders events by time, keeping the written order of simultaneous ones.
    pub fn sort_events(&mut self) {
        self.events.sort_by(|a, b| a.t.total_cmp(&b.t));
    }

    pub fn validate(&self) -> Result<()> {
        self.params
            .validate()
            .map_err(|e| invalid(e.to_string()))?;
        let finite_pos = |v: f64| v.is_finite() && v > 0.0;
        if !finite_pos(self.dt) {
            return Err(invalid(format!("dt must be > 0, got {}", self.dt)));
        }
        let dt_max = 1.0 / (20.0 * self.params.f_sw);
        if self.dt > dt_max * (1.0 + 1e-12) {
            return Err(invalid(format!(
                "dt = {} s violates dt <= 1/(20 f_sw) = {dt_max} s",
                self.dt
            )));
        }
        if !(self.t_end.is_finite() && self.t_end >= 0.0) {
            return Err(invalid(format!("t_end must be >= 0, got {}", self.t_end)));
        }
        if !finite_pos(self.f_grid) {
            return Err(invalid(format!("f_grid must be > 0, got {}", self.f_grid)));
        }
        if !finite_pos(self.v_rated) {
            return Err(invalid(format!("v_rated must be > 0, got {}", self.v_rated)));
        }
        if !finite_pos(self.init_vdc) {
            return Err(invalid(format!("initial v_dc must be > 0, got {}", self.init_vdc)));
        }
        if !(self.init_vref_amp.is_finite() && self.init_vref_amp >= 0.0) {
            return Err(invalid(format!(
                "initial reference amplitude must be >= 0, got {}",
                self.init_vref_amp
            )));
        }
        self.initial_load().map_err(|e| invalid(e.to_string()))?;
        for (name, period) in [
            ("t_sample", self.t_sample),
            ("record_period", self.record_period),
        ] {
            if !finite_pos(period) {
                return Err(invalid(format!("{name} must be > 0, got {period}")));
            }
            whole_steps(period, self.dt, name).map_err(|e| invalid(e.to_string()))?;
            if period < self.dt * (1.0 - 1e-9) {
                return Err(invalid(format!("{name} must be at least dt")));
            }
        }
        if !(self.t_delay.is_finite() && self.t_delay >= 0.0) {
            return Err(invalid(format!("t_delay must be >= 0, got {}", self.t_delay)));
        }
        whole_steps(self.t_delay, self.dt, "t_delay").map_err(|e| invalid(e.to_string()))?;
        if let Some(l) = self.lambda {
            if !finite_pos(l) {
                return Err(invalid(format!("lambda must be > 0, got {l}")));
            }
        }
        if let Some(b) = self.bound {
            if !finite_pos(b) {
                return Err(invalid(format!("bound must be > 0, got {b}")));
            }
        }
        let mut prev = f64::NEG_INFINITY;
        for ev in &self.events {
            if !(ev.t.is_finite() && ev.t >= 0.0 && ev.t <= self.t_end) {
                return Err(invalid(format!(
                    "event at t = {} lies outside [0, t_end = {}]",
                    ev.t, self.t_end
                )));
            }
            if ev.t < prev {
                return Err(invalid("events are not in time order"));
            }
            prev = ev.t;
            match ev.kind {
                EventKind::SetVdc(v) if !finite_pos(v) => {
                    return Err(invalid(format!("set_vdc at t = {} needs v_dc > 0", ev.t)))
                }
                EventKind::SetVrefAmp(a) if !(a.is_finite() && a >= 0.0) => {
                    return Err(invalid(format!(
                        "set_vref_amp at t = {} needs amplitude >= 0",
                        ev.t
                    )))
                }
                EventKind::SetLoad(sp) => {
                    self.load_for(sp).map_err(|e| invalid(format!("event at t = {}: {e}", ev.t)))?;
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Controller settings: explicit `lambda`/`bound` when given, otherwise
    /// `λ = f_sw / 10` and `Bound = 2 H_b` at the initial operating point.
    pub fn controller_config(&self) -> Result<ControllerConfig> {
        let lambda = self.lambda.unwrap_or_else(|| surface_pole(&self.params));
        let bound = match self.bound {
            Some(b) => b,
            None => {
                let load = self.initial_load()?;
                let worst =
                    steady_state_worst_case(self.init_vref_amp, &load, self.omega(), &self.params);
                DEFAULT_BAND_FACTOR
                    * min_bound_estimate(
                        self.t_sample,
                        self.t_delay,
                        self.init_vdc,
                        worst / self.params.lc(),
                        &self.params,
                    )?
            }
        };
        ControllerConfig::new(lambda, bound, self.t_sample, self.t_delay)
    }

    /// Inter-event segments partitioning `[0, t_end]`.
    pub fn segments(&self) -> Vec<(f64, f64)> {
        let mut cuts = vec![0.0];
        for ev in &self.events {
            if ev.t > *cuts.last().unwrap() && ev.t < self.t_end {
                cuts.push(ev.t);
            }
        }
        cuts.push(self.t_end);
        cuts.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Record {
    pub t: f64,
    pub x_d: f64,
    pub u_o: f64,
    pub i_l: f64,
    pub i_o: f64,
    pub v_dc: f64,
    pub cmd: SwitchCommand,
    pub s: f64,
    pub margin: f64,
    pub violated: bool,
}

impl Record {
    pub fn x_tilde(&self) -> f64 {
        self.u_o - self.x_d
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TimeSeries {
    pub sample_period: f64,
    pub records: Vec<Record>,
    /// Every bridge transition on the integration grid.
    pub switch_times: Vec<f64>,
}

impl TimeSeries {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.t).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub start: f64,
    pub end: f64,
}

impl Interval {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }

    pub fn overlap(&self, start: f64, end: f64) -> f64 {
        (self.end.min(end) - self.start.max(start)).max(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentMetrics {
    pub start: f64,
    pub end: f64,
    pub rms_error: f64,
    pub peak_error: f64,
    pub switching_frequency: f64,
    /// More than half of the segment lies inside violation intervals.
    pub violated: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Metrics {
    pub segments: Vec<SegmentMetrics>,
    pub violation_intervals: Vec<Interval>,
}

/// De-bounce settings for violation detection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Debounce {
    /// Runs shorter than this are discarded (s).
    pub min_run: f64,
    /// Runs separated by at most this gap are merged (s).
    pub bridge_gap: f64,
}

impl Debounce {
    /// 1 ms minimum run; gaps up to a quarter fundamental period are bridged,
    /// since the instantaneous criterion only fails near the voltage peaks of
    /// each half cycle.
    pub fn for_grid(f_grid: f64) -> Self {
        Self {
            min_run: DEBOUNCE_MIN_RUN,
            bridge_gap: 0.25 / f_grid,
        }
    }
}

/// Intervals on which `margin <= 0`, after de-bouncing and merging.
///
/// A run spans from its first to its last non-positive sample. Runs shorter
/// than `min_run` are discarded first, so isolated chatter never joins a
/// real episode; the survivors are then merged across gaps of at most
/// `bridge_gap`.
pub fn violation_intervals(times: &[f64], margins: &[f64], debounce: &Debounce) -> Vec<Interval> {
    let mut runs: Vec<Interval> = Vec::new();
    let mut open: Option<Interval> = None;
    for (&t, &m) in times.iter().zip(margins) {
        if m <= 0.0 {
            match open.as_mut() {
                Some(run) => run.end = t,
                None => open = Some(Interval { start: t, end: t }),
            }
        } else if let Some(run) = open.take() {
            runs.push(run);
        }
    }
    runs.extend(open);
    runs.retain(|iv| iv.duration() >= debounce.min_run);

    let mut merged: Vec<Interval> = Vec::new();
    for run in runs {
        match merged.last_mut() {
            Some(last) if run.start - last.end <= debounce.bridge_gap => last.end = run.end,
            _ => merged.push(run),
        }
    }
    merged
}

pub fn series_violation_intervals(series: &TimeSeries, debounce: &Debounce) -> Vec<Interval> {
    let times = series.times();
    let margins: Vec<f64> = series.records.iter().map(|r| r.margin).collect();
    violation_intervals(&times, &margins, debounce)
}

/// Per-segment tracking metrics and violation intervals.
pub fn metrics(series: &TimeSeries, scenario: &Scenario) -> Result<Metrics> {
    if series.is_empty() {
        return Err(Error::InvalidInput("cannot compute metrics of an empty series".into()));
    }
    let intervals = series_violation_intervals(series, &Debounce::for_grid(scenario.f_grid));
    let segments_bounds = scenario.segments();
    let last = segments_bounds.len() - 1;
    let segments = segments_bounds
        .iter()
        .enumerate()
        .map(|(i, &(start, end))| {
            let inside = |t: f64| t >= start && (t < end || (i == last && t <= end));
            let (mut sum_sq, mut peak, mut n) = (0.0, 0.0f64, 0usize);
            for r in series.records.iter().filter(|r| inside(r.t)) {
                let e = r.x_tilde();
                sum_sq += e * e;
                peak = peak.max(e.abs());
                n += 1;
            }
            let duration = end - start;
            let switches = series.switch_times.iter().filter(|&&t| inside(t)).count();
            let overlap: f64 = intervals.iter().map(|iv| iv.overlap(start, end)).sum();
            SegmentMetrics {
                start,
                end,
                rms_error: if n > 0 { (sum_sq / n as f64).sqrt() } else { 0.0 },
                peak_error: peak,
                switching_frequency: if duration > 0.0 {
                    switches as f64 / (2.0 * duration)
                } else {
                    0.0
                },
                violated: duration > 0.0 && overlap > 0.5 * duration,
            }
        })
        .collect();
    Ok(Metrics {
        segments,
        violation_intervals: intervals,
    })
}

fn axpy(state: &CircuitState, d: &StateDerivative, h: f64) -> CircuitState {
    CircuitState {
        u_o: state.u_o + h * d.du_o,
        i_l: state.i_l + h * d.di_l,
        i_o: state.i_o + h * d.di_o,
        i_load_aux: state.i_load_aux + h * d.di_load_aux,
        ..*state
    }
}

/// One classical RK4 step with the switch command held over `dt`.
pub fn step(
    state: &CircuitState,
    cmd: SwitchCommand,
    load: &LoadSpec,
    params: &CircuitParams,
    dt: f64,
) -> Result<CircuitState> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::param(format!("dt must be > 0, got {dt}")));
    }
    let f = |s: &CircuitState| state_derivatives(&load.consistent(*s, params), cmd, params, load);
    let k1 = f(state);
    let k2 = f(&axpy(state, &k1, 0.5 * dt));
    let k3 = f(&axpy(state, &k2, 0.5 * dt));
    let k4 = f(&axpy(state, &k3, dt));
    let w = dt / 6.0;
    let combined = StateDerivative {
        du_o: k1.du_o + 2.0 * k2.du_o + 2.0 * k3.du_o + k4.du_o,
        di_l: k1.di_l + 2.0 * k2.di_l + 2.0 * k3.di_l + k4.di_l,
        di_o: k1.di_o + 2.0 * k2.di_o + 2.0 * k3.di_o + k4.di_o,
        di_load_aux: k1.di_load_aux
            + 2.0 * k2.di_load_aux
            + 2.0 * k3.di_load_aux
            + k4.di_load_aux,
    };
    let mut next = load.consistent(axpy(state, &combined, w), params);
    next.t = state.t + dt;
    if !next.is_finite() {
        return Err(Error::Diverged {
            last_good: Box::new(*state),
        });
    }
    Ok(next)
}

fn event_step(t: f64, dt: f64) -> u64 {
    let ratio = t / dt;
    let nearest = ratio.round();
    if (ratio - nearest).abs() <= 1e-6 {
        nearest as u64
    } else {
        ratio.ceil() as u64
    }
}

/// Runs a scenario to `t_end` and returns the recorded series with metrics.
pub fn run(scenario: &Scenario, cfg: &ControllerConfig) -> Result<(TimeSeries, Metrics)> {
    scenario.validate()?;
    cfg.validate()?;
    let params = scenario.params;
    let dt = scenario.dt;
    let omega = scenario.omega();
    let n_steps = event_step(scenario.t_end, dt);
    let record_stride = whole_steps(scenario.record_period, dt, "record_period")?;

    let mut series = TimeSeries {
        sample_period: scenario.record_period,
        records: Vec::with_capacity((n_steps / record_stride.max(1)) as usize + 1),
        switch_times: Vec::new(),
    };
    if n_steps == 0 {
        return Ok((series, Metrics::default()));
    }

    let mut load = scenario.initial_load()?;
    let mut amplitude = scenario.init_vref_amp;
    let mut state = load.consistent(CircuitState::at_rest(scenario.init_vdc), &params);
    let mut controller = HysteresisController::new(*cfg, dt, SwitchCommand::Positive)?;
    let events: Vec<(u64, EventKind)> = scenario
        .events
        .iter()
        .map(|e| (event_step(e.t, dt), e.kind))
        .collect();
    let mut next_event = 0;
    let mut prev_cmd = controller.applied();

    for k in 0..n_steps {
        let t = k as f64 * dt;
        state.t = t;
        while next_event < events.len() && events[next_event].0 <= k {
            match events[next_event].1 {
                EventKind::SetVdc(v) => state.v_dc = v,
                EventKind::SetVrefAmp(a) => amplitude = a,
                EventKind::SetLoad(sp) => {
                    let next = scenario.load_for(sp)?;
                    state = load.transfer_state(&next, &state, &params);
                    load = next;
                }
            }
            next_event += 1;
        }
        let reference = ReferenceSignal::new(amplitude, omega, 0.0).at(t);
        let cmd = controller.tick(k, || {
            let d = state_derivatives(&state, prev_cmd, &params, &load);
            TrackingSample::new(state.u_o, d.du_o, &reference, cfg.lambda).s
        });
        if cmd != prev_cmd {
            series.switch_times.push(t);
            prev_cmd = cmd;
        }
        if k % record_stride == 0 {
            let d = state_derivatives(&state, cmd, &params, &load);
            let sample = TrackingSample::new(state.u_o, d.du_o, &reference, cfg.lambda);
            let verdict = instantaneous_criterion(state.u_o, d.di_o, state.v_dc, &params);
            series.records.push(Record {
                t,
                x_d: reference.x_d,
                u_o: state.u_o,
                i_l: state.i_l,
                i_o: state.i_o,
                v_dc: state.v_dc,
                cmd,
                s: sample.s,
                margin: verdict.margin,
                violated: !verdict.satisfied,
            });
        }
        state = step(&state, cmd, &load, &params, dt)?;
    }

    let metrics = metrics(&series, scenario)?;
    Ok((series, metrics))
}

/// Runs independent jobs in parallel; results keep the input order.
pub fn run_many(jobs: &[(Scenario, ControllerConfig)]) -> Vec<Result<(TimeSeries, Metrics)>> {
    jobs.par_iter().map(|(sc, cfg)| run(sc, cfg)).collect()
}
