//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p gfm-core --test acceptance`.

mod common;

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::Instant;

use gfm_core::boundary::{min_bound_estimate, steady_state_verdict, steady_state_worst_case};
use gfm_core::circuit::{build_load_from_power, CircuitParams, CircuitState, LoadSpec, SwitchCommand};
use gfm_core::controller::reconstruct_error;
use gfm_core::scenario_io::{
    format_scenario, parse_scenario, write_manifest, write_timeseries, RunManifest,
};
use gfm_core::sim::{run, run_many, step, DEFAULT_BAND_FACTOR};

const OMEGA_50: f64 = 2.0 * PI * 50.0;

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn script_reproduction() -> Outcome {
    let sc = common::boundary_scenario();
    let cfg = sc.controller_config().map_err(|e| e.to_string())?;
    let started = Instant::now();
    let (_, metrics) = run(&sc, &cfg).map_err(|e| e.to_string())?;
    let elapsed = started.elapsed().as_secs_f64();

    let iv = &metrics.violation_intervals;
    let edges_ok = iv.len() == 2
        && iv.iter().zip([(0.2, 0.4), (0.6, 0.8)]).all(|(got, (a, b))| {
            (got.start - a).abs() <= 5e-3 && (got.end - b).abs() <= 5e-3
        });
    let seg = &metrics.segments;
    let rms: Vec<f64> = seg.iter().map(|s| s.rms_error).collect();
    // Violated segments 1 and 3; each is compared with both neighbours.
    let ratios = [rms[1] / rms[0], rms[1] / rms[2], rms[3] / rms[2], rms[3] / rms[4]];
    let min_ratio = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let detail = format!(
        "intervals {:?}, min violated/compliant RMS ratio {:.2}, runtime {:.2} s",
        iv.iter().map(|i| (i.start, i.end)).collect::<Vec<_>>(),
        min_ratio,
        elapsed
    );
    check(edges_ok && seg.len() == 5 && min_ratio >= 2.0 && elapsed <= 60.0, detail)
}

fn criterion_oracle() -> Outcome {
    let params = CircuitParams::default();
    let loads = [(5e3, 20e3), (5e3, -20e3), (5e3, 0.0), (2e3, 8e3)];
    let mut worst_rel: f64 = 0.0;
    let mut cells = 0;
    for v_dc in [150.0, 200.0, 250.0] {
        for v_ref in [60.0, 90.0, 120.0] {
            for (p, q) in loads {
                let load = build_load_from_power(p, q, 120.0, OMEGA_50).map_err(|e| e.to_string())?;
                let phasor = steady_state_worst_case(v_ref, &load, OMEGA_50, &params);
                let oracle = common::OracleLoad::from_power(p, q, 120.0, OMEGA_50);
                let sim = common::driven_worst_case(v_ref, oracle, OMEGA_50, params.l_f, 0.0, 0.0);
                worst_rel = worst_rel.max((phasor - sim).abs() / sim);
                // The verdict must agree with the simulated worst case.
                let verdict = steady_state_verdict(v_dc, v_ref, &load, OMEGA_50, &params);
                if verdict.satisfied != (v_dc > sim) {
                    return Err(format!("verdict disagrees at ({v_dc}, {v_ref}, {p}, {q})"));
                }
                cells += 1;
            }
        }
    }
    let script = [
        (250.0, 120.0, 20e3, true),
        (150.0, 120.0, 20e3, false),
        (150.0, 60.0, 20e3, true),
        (150.0, 120.0, -20e3, true),
    ];
    for (v_dc, v_ref, q, expected) in script {
        let load = build_load_from_power(5e3, q, 120.0, OMEGA_50).map_err(|e| e.to_string())?;
        if steady_state_verdict(v_dc, v_ref, &load, OMEGA_50, &params).satisfied != expected {
            return Err(format!("scripted point ({v_dc}, {v_ref}, {q}) misclassified"));
        }
    }
    check(
        cells == 36 && worst_rel <= 0.05,
        format!("{cells} cells, max relative deviation {:.2e}", worst_rel),
    )
}

fn reconstruction() -> Outcome {
    let mut scenarios: Vec<(String, _)> = common::corpus()
        .into_iter()
        .map(|(n, t)| (n.to_string(), parse_scenario(t).unwrap()))
        .collect();
    scenarios.push(("steady 250 V".into(), common::steady(250.0, 120.0, 5e3, 20e3, 0.2)));
    scenarios.push(("steady 150 V".into(), common::steady(150.0, 120.0, 5e3, 20e3, 0.2)));
    let mut worst: f64 = 0.0;
    for (name, mut sc) in scenarios {
        sc.record_period = sc.t_sample;
        let cfg = sc.controller_config().map_err(|e| e.to_string())?;
        let (series, _) = run(&sc, &cfg).map_err(|e| e.to_string())?;
        let s: Vec<f64> = series.records.iter().map(|r| r.s).collect();
        let x: Vec<f64> = series.records.iter().map(|r| r.x_tilde()).collect();
        let rebuilt =
            reconstruct_error(&s, series.sample_period, x[0], cfg.lambda).map_err(|e| e.to_string())?;
        let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let err = rebuilt.iter().zip(&x).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        let rel = err / peak;
        if rel > 0.005 {
            return Err(format!("{name}: {rel:.2e} of peak"));
        }
        worst = worst.max(rel);
    }
    Ok(format!("worst mismatch {:.2e} of peak |x̃| over 5 scenarios", worst))
}

fn ripple_bound() -> Outcome {
    let sc = common::steady(250.0, 120.0, 5e3, 20e3, 0.3);
    let cfg = sc.controller_config().map_err(|e| e.to_string())?;
    let load = sc.initial_load().map_err(|e| e.to_string())?;
    let worst = steady_state_worst_case(120.0, &load, OMEGA_50, &sc.params);
    let h_b = min_bound_estimate(cfg.t_sample, cfg.t_delay, 250.0, worst / sc.params.lc(), &sc.params)
        .map_err(|e| e.to_string())?;
    if (cfg.bound - 2.0 * h_b).abs() > 1e-9 * cfg.bound || DEFAULT_BAND_FACTOR != 2.0 {
        return Err(format!("default band {} is not 2·H_b = {}", cfg.bound, 2.0 * h_b));
    }
    let (series, metrics) = run(&sc, &cfg).map_err(|e| e.to_string())?;
    let peak = series
        .records
        .iter()
        .filter(|r| r.t >= 0.02)
        .fold(0.0f64, |m, r| m.max(r.x_tilde().abs()));
    let settled_switches = series.switch_times.iter().filter(|&&t| t >= 0.02).count();
    let f_sw = settled_switches as f64 / (2.0 * (sc.t_end - 0.02));
    let limit = 1.25 * cfg.ripple_bound();
    check(
        peak <= limit && (10e3..=40e3).contains(&f_sw) && metrics.violation_intervals.is_empty(),
        format!(
            "peak |x̃| {:.2} V <= {:.2} V, mean switching {:.0} Hz",
            peak, limit, f_sw
        ),
    )
}

fn lc_error(n: usize, dt: f64, params: &CircuitParams, load: &LoadSpec) -> f64 {
    let mut state = CircuitState {
        u_o: 10.0,
        ..CircuitState::at_rest(0.0)
    };
    for _ in 0..n {
        state = step(&state, SwitchCommand::Positive, load, params, dt).unwrap();
    }
    let (u, i) = common::lc_free(10.0, params.l_f, params.c_f, state.t);
    let i_scale = 10.0 * (params.c_f / params.l_f).sqrt();
    ((state.u_o - u) / 10.0).abs().max(((state.i_l - i) / i_scale).abs())
}

fn integrator_order() -> Outcome {
    let params = CircuitParams::default();
    let load = LoadSpec::open(120.0, OMEGA_50).map_err(|e| e.to_string())?;
    let period = 2.0 * PI * params.lc().sqrt();
    let fine = lc_error((period / 0.5e-6).round() as usize, 0.5e-6, &params, &load);
    let ratio = lc_error(50, period / 50.0, &params, &load) / lc_error(100, period / 100.0, &params, &load);
    check(
        fine <= 1e-6 && (13.0..=19.0).contains(&ratio),
        format!("error at 0.5 µs {:.2e}, halving ratio {:.2}", fine, ratio),
    )
}

fn scaling_law() -> Outcome {
    let params = CircuitParams::default();
    let mut worst_ulps: f64 = 0.0;
    for (p, q) in [(5e3, 20e3), (5e3, -20e3), (5e3, 0.0), (2e3, 8e3)] {
        let load = build_load_from_power(p, q, 120.0, OMEGA_50).map_err(|e| e.to_string())?;
        let base = steady_state_worst_case(120.0, &load, OMEGA_50, &params);
        if steady_state_worst_case(60.0, &load, OMEGA_50, &params) != base / 2.0 {
            return Err(format!("60 V step is not exactly half for ({p}, {q})"));
        }
        for alpha in [0.1, 0.3, 0.75, 1.7, 3.0] {
            let scaled = steady_state_worst_case(alpha * 120.0, &load, OMEGA_50, &params);
            worst_ulps = worst_ulps.max((scaled - alpha * base).abs() / (f64::EPSILON * scaled));
        }
        let margins: Vec<f64> = (0..=400)
            .map(|n| steady_state_verdict(n as f64, 120.0, &load, OMEGA_50, &params).margin)
            .collect();
        if !margins.windows(2).all(|w| w[1] > w[0]) {
            return Err(format!("margin not strictly increasing in v_dc for ({p}, {q})"));
        }
    }
    check(
        worst_ulps <= 8.0,
        format!("max deviation from linearity {:.1} ulp; margin strictly increasing", worst_ulps),
    )
}

fn determinism_and_round_trips() -> Outcome {
    let err = |e: gfm_core::Error| e.to_string();
    let sc = common::boundary_scenario();
    let cfg = sc.controller_config().map_err(err)?;
    let (first, metrics) = run(&sc, &cfg).map_err(err)?;
    let (second, _) = run(&sc, &cfg).map_err(err)?;
    if first != second {
        return Err("repeated runs differ".into());
    }
    let short = common::short_boundary(0.02);
    let short_cfg = short.controller_config().map_err(err)?;
    let jobs = vec![(short.clone(), short_cfg); 4];
    let mut reference = None;
    for threads in [1, 4] {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| e.to_string())?;
        for r in pool.install(|| run_many(&jobs)) {
            let (series, _) = r.map_err(err)?;
            match &reference {
                None => reference = Some(series),
                Some(s) if *s != series => return Err(format!("{threads} threads differ")),
                _ => {}
            }
        }
    }

    for (name, text) in common::corpus() {
        let parsed = parse_scenario(text).map_err(err)?;
        if parse_scenario(&format_scenario(&parsed)).map_err(err)? != parsed {
            return Err(format!("{name}: scenario round trip changed content"));
        }
    }

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let csv = dir.path().join("timeseries.csv");
    write_timeseries(&first, &csv).map_err(err)?;
    let text = std::fs::read_to_string(&csv).map_err(|e| e.to_string())?;
    let mut last_t = f64::NEG_INFINITY;
    for (line, r) in text.lines().skip(1).zip(&first.records) {
        let cols: Vec<f64> = line.split(',').map(|v| v.parse().unwrap()).collect();
        let want = [r.t, r.x_d, r.u_o, r.i_l, r.i_o, r.v_dc, r.cmd.value(), r.s, r.margin];
        if cols.len() != 10
            || cols[0] <= last_t
            || cols.iter().zip(want).any(|(g, w)| (g - w).abs() > 5e-9 * w.abs())
        {
            return Err(format!("CSV row mismatch at t = {}", r.t));
        }
        last_t = cols[0];
    }

    let manifest = write_manifest(&sc, &cfg, &metrics, "sha256:-", 0, dir.path().join("m.txt"))
        .map_err(err)?;
    let reread = RunManifest::parse(
        &std::fs::read_to_string(dir.path().join("m.txt")).map_err(|e| e.to_string())?,
    )
    .map_err(err)?;
    let replay = reread.to_scenario().map_err(err)?;
    let (replayed, _) = run(&replay, &replay.controller_config().map_err(err)?).map_err(err)?;
    check(
        replayed == first && reread == manifest,
        format!(
            "{} records bit-identical across runs, threads and manifest replay; {} corpus scripts round-trip",
            first.len(),
            common::corpus().len()
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 7] = [
        ("boundary script reproduction", script_reproduction),
        ("criterion oracle equivalence", criterion_oracle),
        ("error reconstruction", reconstruction),
        ("ripple bound", ripple_bound),
        ("integrator order", integrator_order),
        ("scaling law", scaling_law),
        ("determinism and round trips", determinism_and_round_trips),
    ];
    let mut failed = 0;
    for (n, (name, f)) in criteria.iter().enumerate() {
        match f() {
            Ok(detail) => println!("criterion {}: PASS  {name}: {detail}", n + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {}: FAIL  {name}: {detail}", n + 1);
            }
        }
    }
    println!("acceptance: {} passed, {} failed", criteria.len() - failed, failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
