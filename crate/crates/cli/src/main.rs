use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};

use gfm_core::boundary::{
    envelope_magnitude, min_bound_estimate, safe_operating_area, steady_state_verdict,
    steady_state_worst_case, EnvelopeParams, SoaAxes, DEFAULT_DRIFT_FRACTION,
};
use gfm_core::circuit::{build_load_from_power, CircuitParams};
use gfm_core::scenario_io::{
    digest, format_sig9, parse_scenario, write_envelope, write_manifest, write_soa,
    write_timeseries, RunManifest,
};
use gfm_core::sim::{run, Scenario};
use gfm_core::{Error, Result};

#[derive(Parser)]
#[command(name = "gfm", version, about = "Grid-forming inverter boundary simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario script; writes timeseries.csv and manifest.txt.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Steady-state controllability over a grid of operating points.
    Sweep(SweepArgs),
    /// Steady-state controllability of one operating point.
    Check(CheckArgs),
    /// Predicted tracking-error envelope next to the simulated error.
    Envelope {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Drift fraction used inside violation windows.
        #[arg(long, default_value_t = DEFAULT_DRIFT_FRACTION)]
        k: f64,
    },
}

#[derive(Args)]
struct CircuitArgs {
    #[arg(long = "Lf", default_value_t = 0.5e-3)]
    l_f: f64,
    #[arg(long = "Cf", default_value_t = 20e-6)]
    c_f: f64,
    #[arg(long = "fsw", default_value_t = 20e3)]
    f_sw: f64,
    #[arg(long = "fgrid", default_value_t = 50.0)]
    f_grid: f64,
    #[arg(long = "Lline", default_value_t = 0.0)]
    l_line: f64,
    #[arg(long = "Rline", default_value_t = 0.0)]
    r_line: f64,
    /// Peak voltage at which (P, Q) setpoints become impedances.
    #[arg(long = "vrated", default_value_t = 120.0)]
    v_rated: f64,
}

impl CircuitArgs {
    fn params(&self) -> Result<CircuitParams> {
        CircuitParams::new(self.l_f, self.c_f, self.f_sw)?.with_line(self.r_line, self.l_line)
    }

    fn omega(&self) -> Result<f64> {
        if !(self.f_grid.is_finite() && self.f_grid > 0.0) {
            return Err(Error::param(format!("fgrid must be > 0, got {}", self.f_grid)));
        }
        Ok(2.0 * PI * self.f_grid)
    }
}

#[derive(Args)]
#[command(allow_negative_numbers = true)]
struct SweepArgs {
    /// dc-link axis `a:b:step` (V).
    #[arg(long)]
    vdc: String,
    /// Reference amplitude axis `a:b:step` (V peak).
    #[arg(long)]
    vref: String,
    /// Active power per load point (W); one value applies to every Q.
    #[arg(long = "P", required = true, allow_hyphen_values = true)]
    p: Vec<String>,
    /// Reactive power per load point (VAr, + inductive, - capacitive).
    #[arg(long = "Q", required = true, allow_hyphen_values = true)]
    q: Vec<String>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    circuit: CircuitArgs,
}

#[derive(Args)]
#[command(allow_negative_numbers = true)]
struct CheckArgs {
    #[arg(long)]
    vdc: f64,
    #[arg(long)]
    vref: f64,
    #[arg(long = "P", allow_hyphen_values = true)]
    p: f64,
    #[arg(long = "Q", allow_hyphen_values = true)]
    q: f64,
    #[command(flatten)]
    circuit: CircuitArgs,
}

fn timestamp() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Parses `a:b:step`: starts at `a`, includes `b` when a step lands on it.
fn parse_range(text: &str, what: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = text.split(':').collect();
    let bad = || Error::InvalidInput(format!("{what} range '{text}' is not a:b:step"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let nums: Vec<f64> = parts
        .iter()
        .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<_>>()?;
    let (a, b, step) = (nums[0], nums[1], nums[2]);
    if !(a.is_finite() && b.is_finite() && step.is_finite()) {
        return Err(bad());
    }
    if b < a {
        return Err(Error::InvalidInput(format!("{what} range '{text}' is inverted")));
    }
    if step <= 0.0 {
        return Err(Error::InvalidInput(format!("{what} range '{text}' needs step > 0")));
    }
    let count = ((b - a) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|i| a + i as f64 * step).collect())
}

fn parse_numbers(values: &[String], what: &str) -> Result<Vec<f64>> {
    values
        .iter()
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| Error::InvalidInput(format!("{what} value '{v}' is not a number")))
        })
        .collect()
}

fn load_scenario(path: &Path) -> Result<(Scenario, String)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|_| Error::InvalidInput(format!("{} is not UTF-8", path.display())))?;
    Ok((parse_scenario(&text)?, digest(&bytes)))
}

fn simulate(scenario_path: &Path, out: &Path) -> Result<()> {
    let (scenario, input_digest) = load_scenario(scenario_path)?;
    let cfg = scenario.controller_config()?;
    let (series, metrics) = run(&scenario, &cfg)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_timeseries(&series, out.join("timeseries.csv"))?;
    write_manifest(
        &scenario,
        &cfg,
        &metrics,
        &input_digest,
        timestamp(),
        out.join("manifest.txt"),
    )?;
    for (i, seg) in metrics.segments.iter().enumerate() {
        println!(
            "segment={} start={} end={} rms_error={} peak_error={} switching_hz={} violated={}",
            i,
            format_sig9(seg.start),
            format_sig9(seg.end),
            format_sig9(seg.rms_error),
            format_sig9(seg.peak_error),
            format_sig9(seg.switching_frequency),
            if seg.violated { "yes" } else { "no" }
        );
    }
    for iv in &metrics.violation_intervals {
        println!(
            "violation start={} end={}",
            format_sig9(iv.start),
            format_sig9(iv.end)
        );
    }
    Ok(())
}

fn sweep(args: &SweepArgs) -> Result<()> {
    let params = args.circuit.params()?;
    let v_dc = parse_range(&args.vdc, "vdc")?;
    let v_ref = parse_range(&args.vref, "vref")?;
    let p = parse_numbers(&args.p, "P")?;
    let q = parse_numbers(&args.q, "Q")?;
    let loads: Vec<(f64, f64)> = match p.len() {
        1 => q.iter().map(|&q| (p[0], q)).collect(),
        n if n == q.len() => p.iter().copied().zip(q.iter().copied()).collect(),
        _ => {
            return Err(Error::InvalidInput(
                "give one --P for all --Q values, or one --P per --Q".into(),
            ))
        }
    };
    let axes = SoaAxes {
        v_dc,
        v_ref,
        loads,
        v_rated_peak: args.circuit.v_rated,
        omega: args.circuit.omega()?,
    };
    let grid = safe_operating_area(&axes, &params)?;
    write_soa(&grid, &args.out)?;

    let axis_text = format!(
        "vdc={} vref={} P={:?} Q={:?}",
        args.vdc, args.vref, args.p, args.q
    );
    let mut m = RunManifest::with_header(&digest(axis_text.as_bytes()), timestamp());
    m.push("axis.vdc", &args.vdc);
    m.push("axis.vref", &args.vref);
    m.push("axis.P", args.p.join(" "));
    m.push("axis.Q", args.q.join(" "));
    m.push("param.L_f", params.l_f);
    m.push("param.C_f", params.c_f);
    m.push("param.f_sw", params.f_sw);
    m.push("param.f_grid", args.circuit.f_grid);
    m.push("param.L_line", params.l_line);
    m.push("param.R_line", params.r_line);
    m.push("param.v_rated", args.circuit.v_rated);
    m.push("cells", grid.cells.len());
    m.push(
        "cells.satisfied",
        grid.cells.iter().filter(|c| c.verdict.satisfied).count(),
    );
    m.write(manifest_path_for(&args.out))?;
    println!(
        "cells={} satisfied={}",
        grid.cells.len(),
        grid.cells.iter().filter(|c| c.verdict.satisfied).count()
    );
    Ok(())
}

fn manifest_path_for(csv: &Path) -> PathBuf {
    let stem = csv
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "soa".into());
    csv.with_file_name(format!("{stem}.manifest.txt"))
}

fn check(args: &CheckArgs) -> Result<()> {
    let params = args.circuit.params()?;
    let omega = args.circuit.omega()?;
    if !(args.vdc.is_finite() && args.vdc >= 0.0) {
        return Err(Error::param(format!("vdc must be >= 0, got {}", args.vdc)));
    }
    if !(args.vref.is_finite() && args.vref >= 0.0) {
        return Err(Error::param(format!("vref must be >= 0, got {}", args.vref)));
    }
    let load = build_load_from_power(args.p, args.q, args.circuit.v_rated, omega)?;
    let worst = steady_state_worst_case(args.vref, &load, omega, &params);
    let verdict = steady_state_verdict(args.vdc, args.vref, &load, omega, &params);
    println!(
        "lhs_V={} rhs_V={} margin={} verdict={}",
        format_sig9(args.vdc),
        format_sig9(worst),
        format_sig9(verdict.margin),
        if verdict.satisfied { "SATISFIED" } else { "VIOLATED" }
    );
    Ok(())
}

fn envelope(scenario_path: &Path, out: &Path, k: f64) -> Result<()> {
    let (scenario, _) = load_scenario(scenario_path)?;
    let cfg = scenario.controller_config()?;
    let (series, metrics) = run(&scenario, &cfg)?;
    let params = scenario.params;
    let worst = steady_state_worst_case(
        scenario.init_vref_amp,
        &scenario.initial_load()?,
        scenario.omega(),
        &params,
    );
    let h_b = min_bound_estimate(
        cfg.t_sample,
        cfg.t_delay,
        scenario.init_vdc,
        worst / params.lc(),
        &params,
    )?;

    let times = series.times();
    let simulated: Vec<f64> = series.records.iter().map(|r| r.x_tilde().abs()).collect();
    let mut predicted = vec![cfg.ripple_bound(); times.len()];
    // Any valid EnvelopeParams checks the band and k before a window is seen.
    EnvelopeParams::new(k, 0.0, 0.0, false, h_b)?;
    if cfg.bound < h_b {
        return Err(Error::InfeasibleBand {
            bound: cfg.bound,
            min_bound: h_b,
        });
    }
    for iv in &metrics.violation_intervals {
        let first = times.partition_point(|&t| t < iv.start);
        let last = times.partition_point(|&t| t <= iv.end);
        if first >= last {
            continue;
        }
        let t0 = times[first];
        let env = EnvelopeParams::new(k, iv.end - t0, t0, true, h_b)?;
        let onset = &series.records[first];
        let window = envelope_magnitude(
            &env,
            &cfg,
            onset.v_dc,
            onset.x_tilde(),
            &params,
            &times[first..last],
        )?;
        predicted[first..last].copy_from_slice(&window);
    }
    write_envelope(&times, &predicted, &simulated, out)?;
    println!(
        "records={} violation_windows={} ripple_bound={} k={}",
        times.len(),
        metrics.violation_intervals.len(),
        format_sig9(cfg.ripple_bound()),
        format_sig9(k)
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate { scenario, out } => simulate(scenario, out),
        Command::Sweep(args) => sweep(args),
        Command::Check(args) => check(args),
        Command::Envelope { scenario, out, k } => envelope(scenario, out, *k),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_divergence() { 3 } else { 2 })
        }
    }
}
