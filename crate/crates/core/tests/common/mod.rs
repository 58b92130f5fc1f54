//! Helpers shared by the integration tests, including oracles that do not
//! go through the crate's plant equations.

#![allow(dead_code)]

use std::f64::consts::PI;

use gfm_core::scenario_io::parse_scenario;
use gfm_core::sim::{Event, EventKind, PowerSetpoint, Scenario};

pub const BOUNDARY_TEST: &str = include_str!("../../scenarios/boundary_test.scn");
pub const COMPLIANT: &str = include_str!("../../scenarios/compliant_steady.scn");
pub const CAPACITIVE_LINE: &str = include_str!("../../scenarios/capacitive_line.scn");

/// Every scenario script shipped with the crate.
pub fn corpus() -> Vec<(&'static str, &'static str)> {
    vec![
        ("boundary_test", BOUNDARY_TEST),
        ("compliant_steady", COMPLIANT),
        ("capacitive_line", CAPACITIVE_LINE),
    ]
}

pub fn boundary_scenario() -> Scenario {
    parse_scenario(BOUNDARY_TEST).expect("shipped scenario parses")
}

/// Constant operating point with no events.
pub fn steady(v_dc: f64, v_ref: f64, p: f64, q: f64, t_end: f64) -> Scenario {
    Scenario {
        init_vdc: v_dc,
        init_vref_amp: v_ref,
        init_load: PowerSetpoint { p, q },
        t_end,
        ..Scenario::default()
    }
}

/// The scripted boundary test compressed in time, for cheaper runs.
pub fn short_boundary(t_step: f64) -> Scenario {
    let mut sc = boundary_scenario();
    sc.t_end = 5.0 * t_step;
    sc.events = vec![
        Event { t: t_step, kind: EventKind::SetVdc(150.0) },
        Event { t: 2.0 * t_step, kind: EventKind::SetVrefAmp(60.0) },
        Event { t: 3.0 * t_step, kind: EventKind::SetVrefAmp(120.0) },
        Event {
            t: 4.0 * t_step,
            kind: EventKind::SetLoad(PowerSetpoint { p: 5e3, q: -20e3 }),
        },
    ];
    sc
}

/// Parallel R with an optional inductor or capacitor, sized from (P, Q) at
/// `v_rated` peak, written out directly from the circuit laws.
#[derive(Debug, Clone, Copy)]
pub struct OracleLoad {
    pub r: f64,
    pub l: Option<f64>,
    pub c: Option<f64>,
}

impl OracleLoad {
    pub fn from_power(p: f64, q: f64, v_rated: f64, omega: f64) -> Self {
        let s_half = v_rated * v_rated / 2.0;
        let x = if q != 0.0 { s_half / q.abs() } else { f64::INFINITY };
        Self {
            r: s_half / p,
            l: (q > 0.0).then(|| x / omega),
            c: (q < 0.0).then(|| 1.0 / (omega * x)),
        }
    }
}

/// Maximum over the last fundamental cycle of `|v + L_f di_o/dt|` when the
/// capacitor node is driven by `v = V sin ωt` from rest.
///
/// With `l_line = 0` the load sits on the node and `i_o` is algebraic in
/// `v`, `dv/dt`, `d²v/dt²` and the inductor current. With a line the line
/// current and the load-side state are integrated by RK4.
pub fn driven_worst_case(
    v_peak: f64,
    load: OracleLoad,
    omega: f64,
    l_f: f64,
    l_line: f64,
    r_line: f64,
) -> f64 {
    let period = 2.0 * PI / omega;
    let n_per = 20_000usize;
    let h = period / n_per as f64;
    let cycles = if l_line > 0.0 { 40 } else { 3 };
    let v = |t: f64| v_peak * (omega * t).sin();
    let dv = |t: f64| v_peak * omega * (omega * t).cos();
    let d2v = |t: f64| -v_peak * omega * omega * (omega * t).sin();

    if l_line == 0.0 {
        let mut worst: f64 = 0.0;
        for n in 0..n_per {
            let t = (cycles - 1) as f64 * period + n as f64 * h;
            let mut di = dv(t) / load.r;
            if let Some(l) = load.l {
                di += v(t) / l;
            }
            if let Some(c) = load.c {
                di += c * d2v(t);
            }
            worst = worst.max((v(t) + l_f * di).abs());
        }
        return worst;
    }

    // States: line current i, load-side quantity y (inductor current or
    // capacitor voltage). Load node voltage w.
    let node = |i: f64, y: f64| -> f64 {
        match (load.l, load.c) {
            (_, Some(_)) => y,
            _ => load.r * (i - y),
        }
    };
    let rhs = |t: f64, i: f64, y: f64| -> (f64, f64) {
        let w = node(i, y);
        let di = (v(t) - r_line * i - w) / l_line;
        let dy = match (load.l, load.c) {
            (Some(l), _) => w / l,
            (_, Some(c)) => (i - w / load.r) / c,
            _ => 0.0,
        };
        (di, dy)
    };
    let (mut i, mut y) = (0.0, 0.0);
    let mut worst: f64 = 0.0;
    for n in 0..cycles * n_per {
        let t = n as f64 * h;
        if n >= (cycles - 1) * n_per {
            let (di, _) = rhs(t, i, y);
            worst = worst.max((v(t) + l_f * di).abs());
        }
        let k1 = rhs(t, i, y);
        let k2 = rhs(t + h / 2.0, i + h / 2.0 * k1.0, y + h / 2.0 * k1.1);
        let k3 = rhs(t + h / 2.0, i + h / 2.0 * k2.0, y + h / 2.0 * k2.1);
        let k4 = rhs(t + h, i + h * k3.0, y + h * k3.1);
        i += h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
        y += h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
    }
    worst
}

/// Free LC oscillation `u(t) = u0 cos(t/√(LC))`, `i(t) = -u0 √(C/L) sin(t/√(LC))`.
pub fn lc_free(u0: f64, l: f64, c: f64, t: f64) -> (f64, f64) {
    let w = 1.0 / (l * c).sqrt();
    (u0 * (w * t).cos(), -u0 * (c / l).sqrt() * (w * t).sin())
}
