//! Scenario scripts, CSV outputs and run manifests.
//!
//! Scenario grammar, one directive per line, `#` starts a comment:
//!
//! ```text
//! param <name> <number>
//! init vdc <V>
//! init vref_amp <V>
//! init load P=<W> Q=<VAr>
//! event <t> set_vdc <V>
//! event <t> set_vref_amp <V>
//! event <t> set_load P=<W> Q=<VAr>
//! ```
//!
//! Parameter names: `L_f C_f f_sw f_grid t_end dt lambda bound t_sample
//! t_delay L_line R_line v_rated record_period`. `Q > 0` is inductive and
//! `Q < 0` capacitive.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::boundary::SoaGrid;
use crate::controller::ControllerConfig;
use crate::sim::{Event, EventKind, Metrics, PowerSetpoint, Scenario, TimeSeries};
use crate::{Error, Result};

pub const TIMESERIES_HEADER: &str = "t,x_d,u_o,i_L,i_o,v_dc,T,s,margin,violated";
pub const SOA_HEADER: &str = "v_dc,v_ref,P,Q,worst_case_V,margin,satisfied";
pub const ENVELOPE_HEADER: &str = "t,predicted_env,simulated_abs_err";

pub const PARAM_NAMES: [&str; 14] = [
    "L_f",
    "C_f",
    "f_sw",
    "f_grid",
    "t_end",
    "dt",
    "lambda",
    "bound",
    "t_sample",
    "t_delay",
    "L_line",
    "R_line",
    "v_rated",
    "record_period",
];

#[derive(Debug, Clone, PartialEq)]
pub enum Directive {
    Param { name: String, value: f64 },
    InitVdc(f64),
    InitVrefAmp(f64),
    InitLoad(PowerSetpoint),
    Event(Event),
}

/// Directives of a scenario script in written order, with their line numbers.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScenarioDocument {
    pub directives: Vec<(usize, Directive)>,
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn number(line: usize, token: &str, what: &str) -> Result<f64> {
    let v: f64 = token
        .parse()
        .map_err(|_| parse_err(line, format!("{what}: '{token}' is not a number")))?;
    if !v.is_finite() {
        return Err(parse_err(line, format!("{what}: '{token}' is not finite")));
    }
    Ok(v)
}

fn power_pair(line: usize, tokens: &[&str]) -> Result<PowerSetpoint> {
    let (mut p, mut q) = (None, None);
    for tok in tokens {
        let (key, value) = tok
            .split_once('=')
            .ok_or_else(|| parse_err(line, format!("expected KEY=value, got '{tok}'")))?;
        let slot = match key {
            "P" => &mut p,
            "Q" => &mut q,
            _ => return Err(parse_err(line, format!("unknown load key '{key}'"))),
        };
        if slot.is_some() {
            return Err(parse_err(line, format!("load key '{key}' given twice")));
        }
        *slot = Some(number(line, value, key)?);
    }
    match (p, q) {
        (Some(p), Some(q)) => Ok(PowerSetpoint { p, q }),
        _ => Err(parse_err(line, "load needs both P=<W> and Q=<VAr>")),
    }
}

fn arity(line: usize, tokens: &[&str], n: usize, usage: &str) -> Result<()> {
    if tokens.len() != n {
        return Err(parse_err(line, format!("expected '{usage}'")));
    }
    Ok(())
}

impl ScenarioDocument {
    pub fn parse(text: &str) -> Result<Self> {
        let mut directives = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let tokens: Vec<&str> = content.split_whitespace().collect();
            let directive = match tokens[0] {
                "param" => {
                    arity(line, &tokens, 3, "param <name> <number>")?;
                    let name = tokens[1];
                    if !PARAM_NAMES.contains(&name) {
                        return Err(parse_err(line, format!("unknown parameter '{name}'")));
                    }
                    Directive::Param {
                        name: name.to_string(),
                        value: number(line, tokens[2], name)?,
                    }
                }
                "init" => match tokens.get(1).copied() {
                    Some("vdc") => {
                        arity(line, &tokens, 3, "init vdc <V>")?;
                        Directive::InitVdc(number(line, tokens[2], "vdc")?)
                    }
                    Some("vref_amp") => {
                        arity(line, &tokens, 3, "init vref_amp <V>")?;
                        Directive::InitVrefAmp(number(line, tokens[2], "vref_amp")?)
                    }
                    Some("load") => {
                        arity(line, &tokens, 4, "init load P=<W> Q=<VAr>")?;
                        Directive::InitLoad(power_pair(line, &tokens[2..])?)
                    }
                    other => {
                        return Err(parse_err(
                            line,
                            format!("unknown init target '{}'", other.unwrap_or("")),
                        ))
                    }
                },
                "event" => {
                    if tokens.len() < 3 {
                        return Err(parse_err(line, "expected 'event <t> <action> ...'"));
                    }
                    let t = number(line, tokens[1], "event time")?;
                    let kind = match tokens[2] {
                        "set_vdc" => {
                            arity(line, &tokens, 4, "event <t> set_vdc <V>")?;
                            EventKind::SetVdc(number(line, tokens[3], "set_vdc")?)
                        }
                        "set_vref_amp" => {
                            arity(line, &tokens, 4, "event <t> set_vref_amp <V>")?;
                            EventKind::SetVrefAmp(number(line, tokens[3], "set_vref_amp")?)
                        }
                        "set_load" => {
                            arity(line, &tokens, 5, "event <t> set_load P=<W> Q=<VAr>")?;
                            EventKind::SetLoad(power_pair(line, &tokens[3..])?)
                        }
                        other => {
                            return Err(parse_err(line, format!("unknown event action '{other}'")))
                        }
                    };
                    Directive::Event(Event { t, kind })
                }
                other => return Err(parse_err(line, format!("unknown directive '{other}'"))),
            };
            directives.push((line, directive));
        }
        Ok(Self { directives })
    }

    /// Builds the scenario, filling unset values with defaults.
    ///
    /// Returns the scenario and the names of the defaulted entries.
    pub fn to_scenario(&self) -> Result<(Scenario, Vec<&'static str>)> {
        let mut sc = Scenario::default();
        let mut seen_params: Vec<&str> = Vec::new();
        let (mut vdc, mut vref, mut load) = (false, false, false);
        for (line, d) in &self.directives {
            let line = *line;
            match d {
                Directive::Param { name, value } => {
                    if seen_params.contains(&name.as_str()) {
                        return Err(parse_err(line, format!("parameter '{name}' set twice")));
                    }
                    seen_params.push(name);
                    let v = *value;
                    match name.as_str() {
                        "L_f" => sc.params.l_f = v,
                        "C_f" => sc.params.c_f = v,
                        "f_sw" => sc.params.f_sw = v,
                        "f_grid" => sc.f_grid = v,
                        "t_end" => sc.t_end = v,
                        "dt" => sc.dt = v,
                        "lambda" => sc.lambda = Some(v),
                        "bound" => sc.bound = Some(v),
                        "t_sample" => sc.t_sample = v,
                        "t_delay" => sc.t_delay = v,
                        "L_line" => sc.params.l_line = v,
                        "R_line" => sc.params.r_line = v,
                        "v_rated" => sc.v_rated = v,
                        "record_period" => sc.record_period = v,
                        _ => unreachable!("parameter names are checked while parsing"),
                    }
                }
                Directive::InitVdc(v) => {
                    if std::mem::replace(&mut vdc, true) {
                        return Err(parse_err(line, "init vdc given twice"));
                    }
                    sc.init_vdc = *v;
                }
                Directive::InitVrefAmp(v) => {
                    if std::mem::replace(&mut vref, true) {
                        return Err(parse_err(line, "init vref_amp given twice"));
                    }
                    sc.init_vref_amp = *v;
                }
                Directive::InitLoad(sp) => {
                    if std::mem::replace(&mut load, true) {
                        return Err(parse_err(line, "init load given twice"));
                    }
                    sc.init_load = *sp;
                }
                Directive::Event(ev) => sc.events.push(*ev),
            }
        }
        sc.sort_events();
        let mut defaulted: Vec<&'static str> = PARAM_NAMES
            .iter()
            .copied()
            .filter(|n| !seen_params.contains(n))
            .collect();
        for (given, name) in [(vdc, "init.vdc"), (vref, "init.vref_amp"), (load, "init.load")] {
            if !given {
                defaulted.push(name);
            }
        }
        Ok((sc, defaulted))
    }
}

/// Parses and validates a scenario script.
pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let (sc, _) = ScenarioDocument::parse(text)?.to_scenario()?;
    sc.validate()?;
    Ok(sc)
}

fn event_line(ev: &Event) -> String {
    match ev.kind {
        EventKind::SetVdc(v) => format!("{} set_vdc {}", ev.t, v),
        EventKind::SetVrefAmp(a) => format!("{} set_vref_amp {}", ev.t, a),
        EventKind::SetLoad(sp) => format!("{} set_load P={} Q={}", ev.t, sp.p, sp.q),
    }
}

fn param_values(sc: &Scenario) -> Vec<(&'static str, Option<f64>)> {
    vec![
        ("L_f", Some(sc.params.l_f)),
        ("C_f", Some(sc.params.c_f)),
        ("f_sw", Some(sc.params.f_sw)),
        ("f_grid", Some(sc.f_grid)),
        ("t_end", Some(sc.t_end)),
        ("dt", Some(sc.dt)),
        ("lambda", sc.lambda),
        ("bound", sc.bound),
        ("t_sample", Some(sc.t_sample)),
        ("t_delay", Some(sc.t_delay)),
        ("L_line", Some(sc.params.l_line)),
        ("R_line", Some(sc.params.r_line)),
        ("v_rated", Some(sc.v_rated)),
        ("record_period", Some(sc.record_period)),
    ]
}

/// Canonical script for a scenario. Numbers use the shortest exact decimal
/// form, so `parse_scenario(&format_scenario(s)) == s`.
pub fn format_scenario(sc: &Scenario) -> String {
    let mut out = String::new();
    for (name, value) in param_values(sc) {
        if let Some(v) = value {
            let _ = writeln!(out, "param {name} {v}");
        }
    }
    let _ = writeln!(out, "init vdc {}", sc.init_vdc);
    let _ = writeln!(out, "init vref_amp {}", sc.init_vref_amp);
    let _ = writeln!(out, "init load P={} Q={}", sc.init_load.p, sc.init_load.q);
    for ev in &sc.events {
        let _ = writeln!(out, "event {}", event_line(ev));
    }
    out
}

/// `%.9g`-style formatting: 9 significant digits, trailing zeros trimmed.
pub fn format_sig9(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format has an exponent");
    let exp: i32 = exp.parse().expect("exponent is an integer");
    let trim = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if !(-5..9).contains(&exp) {
        format!("{}e{}", trim(mantissa), exp)
    } else {
        let decimals = (8 - exp).max(0) as usize;
        trim(&format!("{x:.decimals$}"))
    }
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn write_rows(
    path: &Path,
    header: &str,
    rows: impl Iterator<Item = Vec<String>>,
) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "{header}").map_err(io)?;
    for row in rows {
        writeln!(w, "{}", row.join(",")).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn timeseries_rows(series: &TimeSeries) -> impl Iterator<Item = Vec<String>> + '_ {
    series.records.iter().map(|r| {
        vec![
            format_sig9(r.t),
            format_sig9(r.x_d),
            format_sig9(r.u_o),
            format_sig9(r.i_l),
            format_sig9(r.i_o),
            format_sig9(r.v_dc),
            format_sig9(r.cmd.value()),
            format_sig9(r.s),
            format_sig9(r.margin),
            (r.violated as u8).to_string(),
        ]
    })
}

pub fn write_timeseries(series: &TimeSeries, path: impl AsRef<Path>) -> Result<()> {
    write_rows(path.as_ref(), TIMESERIES_HEADER, timeseries_rows(series))
}

pub fn write_soa(grid: &SoaGrid, path: impl AsRef<Path>) -> Result<()> {
    let rows = grid.cells.iter().map(|c| {
        vec![
            format_sig9(c.v_dc),
            format_sig9(c.v_ref),
            format_sig9(c.p),
            format_sig9(c.q),
            format_sig9(c.worst_case_v),
            format_sig9(c.verdict.margin),
            (c.verdict.satisfied as u8).to_string(),
        ]
    });
    write_rows(path.as_ref(), SOA_HEADER, rows)
}

/// Writes `t,predicted_env,simulated_abs_err` rows.
pub fn write_envelope(
    times: &[f64],
    predicted: &[f64],
    simulated: &[f64],
    path: impl AsRef<Path>,
) -> Result<()> {
    if times.len() != predicted.len() || times.len() != simulated.len() {
        return Err(Error::InvalidInput("envelope columns differ in length".into()));
    }
    let rows = (0..times.len()).map(|i| {
        vec![
            format_sig9(times[i]),
            format_sig9(predicted[i]),
            format_sig9(simulated[i]),
        ]
    });
    write_rows(path.as_ref(), ENVELOPE_HEADER, rows)
}

/// Hex SHA-256 of an input file's bytes.
pub fn digest(bytes: &[u8]) -> String {
    format!("sha256:{:x}", Sha256::digest(bytes))
}

pub const TIMESTAMP_KEY: &str = "run.timestamp";

/// Flat `<key> = <value>` record of a run, in a fixed key order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunManifest {
    pub entries: Vec<(String, String)>,
}

impl RunManifest {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.push((key.into(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    /// Header entries shared by every manifest this crate writes.
    pub fn with_header(input_digest: &str, timestamp: u64) -> Self {
        let mut m = Self::new();
        m.push("tool.name", "gfm");
        m.push("tool.version", env!("CARGO_PKG_VERSION"));
        m.push("input.digest", input_digest);
        m.push(TIMESTAMP_KEY, timestamp);
        m
    }

    /// Manifest of a simulation: resolved parameters (including the
    /// controller's `lambda` and `bound`), initial conditions, events and
    /// the metrics summary.
    pub fn for_run(
        scenario: &Scenario,
        cfg: &ControllerConfig,
        metrics: &Metrics,
        input_digest: &str,
        timestamp: u64,
    ) -> Self {
        let mut m = Self::with_header(input_digest, timestamp);
        let resolved = Scenario {
            lambda: Some(cfg.lambda),
            bound: Some(cfg.bound),
            t_sample: cfg.t_sample,
            t_delay: cfg.t_delay,
            ..scenario.clone()
        };
        for (name, value) in param_values(&resolved) {
            if let Some(v) = value {
                m.push(format!("param.{name}"), v);
            }
        }
        m.push("init.vdc", resolved.init_vdc);
        m.push("init.vref_amp", resolved.init_vref_amp);
        m.push(
            "init.load",
            format!("P={} Q={}", resolved.init_load.p, resolved.init_load.q),
        );
        m.push("event.count", resolved.events.len());
        for (i, ev) in resolved.events.iter().enumerate() {
            m.push(format!("event.{i:03}"), event_line(ev));
        }
        m.push("metrics.segment.count", metrics.segments.len());
        for (i, seg) in metrics.segments.iter().enumerate() {
            m.push(
                format!("metrics.segment.{i:03}"),
                format!(
                    "start={} end={} rms_error={} peak_error={} switching_hz={} violated={}",
                    format_sig9(seg.start),
                    format_sig9(seg.end),
                    format_sig9(seg.rms_error),
                    format_sig9(seg.peak_error),
                    format_sig9(seg.switching_frequency),
                    seg.violated as u8
                ),
            );
        }
        m.push("metrics.violation.count", metrics.violation_intervals.len());
        for (i, iv) in metrics.violation_intervals.iter().enumerate() {
            m.push(
                format!("metrics.violation.{i:03}"),
                format!("start={} end={}", format_sig9(iv.start), format_sig9(iv.end)),
            );
        }
        m
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Text without the timestamp, for identity comparisons.
    pub fn identity_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries.iter().filter(|(k, _)| k != TIMESTAMP_KEY) {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut m = Self::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once(" = ")
                .ok_or_else(|| parse_err(idx + 1, "expected '<key> = <value>'"))?;
            m.push(k.trim(), v.trim());
        }
        Ok(m)
    }

    /// Rebuilds the scenario script from the `param.*`, `init.*` and
    /// `event.*` entries.
    pub fn scenario_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            if let Some(name) = k.strip_prefix("param.") {
                let _ = writeln!(out, "param {name} {v}");
            } else if let Some(target) = k.strip_prefix("init.") {
                let _ = writeln!(out, "init {target} {v}");
            } else if k.starts_with("event.") && k != "event.count" {
                let _ = writeln!(out, "event {v}");
            }
        }
        out
    }

    pub fn to_scenario(&self) -> Result<Scenario> {
        parse_scenario(&self.scenario_text())
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = create(path)?;
        w.write_all(self.to_text().as_bytes())
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }
}

/// Writes the manifest of a completed simulation.
pub fn write_manifest(
    scenario: &Scenario,
    cfg: &ControllerConfig,
    metrics: &Metrics,
    input_digest: &str,
    timestamp: u64,
    path: impl AsRef<Path>,
) -> Result<RunManifest> {
    let m = RunManifest::for_run(scenario, cfg, metrics, input_digest, timestamp);
    m.write(path)?;
    Ok(m)
}
