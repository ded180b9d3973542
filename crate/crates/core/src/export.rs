//! CSV and JSON export of a [`SimLog`]. Floats are written with 17
//! significant digits so a replay reads back the exact values.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::sim::{Metrics, RunInfo, SimLog};

pub const TRACE_FILE: &str = "trace.csv";
pub const EVENTS_FILE: &str = "events.csv";
pub const CYCLES_FILE: &str = "cycles.csv";
pub const METRICS_FILE: &str = "metrics.json";

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, fmt_f64)
}

fn fmt_idx(v: Option<usize>) -> String {
    v.map_or_else(String::new, |i| i.to_string())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// `t, x0.., u0.., v_f, mode, cycle, deviation`.
pub fn write_trace<W: Write>(log: &SimLog, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let n = log.trace.first().map_or(0, |s| s.x.len());
    let m = log.trace.first().map_or(0, |s| s.u.len());
    let mut header = vec!["t".to_string()];
    header.extend((0..n).map(|i| format!("x{i}")));
    header.extend((0..m).map(|i| format!("u{i}")));
    header.extend(["v_f", "mode", "cycle", "deviation"].map(String::from));
    w.write_record(&header).map_err(csv_err)?;
    for s in &log.trace {
        let mut row = vec![fmt_f64(s.t)];
        row.extend(s.x.iter().map(|&v| fmt_f64(v)));
        row.extend(s.u.iter().map(|&v| fmt_f64(v)));
        row.push(fmt_f64(s.v_f));
        row.push(s.phase.label().to_string());
        row.push(fmt_idx(s.cycle));
        row.push(fmt_opt(s.deviation));
        w.write_record(&row).map_err(csv_err)?;
    }
    Ok(w.flush()?)
}

pub fn write_events<W: Write>(log: &SimLog, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "t",
        "kind",
        "cycle",
        "m",
        "deviation",
        "threshold",
        "delta_star",
        "delta_min",
        "t_star",
    ])
    .map_err(csv_err)?;
    for e in &log.events {
        w.write_record([
            fmt_f64(e.t),
            e.kind.label().to_string(),
            fmt_idx(e.cycle),
            fmt_idx(e.m),
            fmt_opt(e.deviation),
            fmt_opt(e.threshold),
            fmt_opt(e.delta_star),
            fmt_opt(e.delta_min),
            fmt_opt(e.t_star),
        ])
        .map_err(csv_err)?;
    }
    Ok(w.flush()?)
}

pub fn write_cycles<W: Write>(log: &SimLog, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "k",
        "t_k",
        "delta",
        "horizon",
        "t_star",
        "delta_min",
        "branch",
        "cost",
        "delta_star",
        "terminal_vf",
        "converged",
        "iterations",
        "stationarity",
        "ets_evaluations",
    ])
    .map_err(csv_err)?;
    for c in &log.cycles {
        w.write_record([
            c.k.to_string(),
            fmt_f64(c.t_k),
            fmt_opt(c.delta),
            fmt_f64(c.horizon),
            fmt_f64(c.t_star),
            fmt_f64(c.delta_min),
            c.branch.label().to_string(),
            fmt_f64(c.cost),
            fmt_opt(c.delta_star),
            fmt_f64(c.terminal_vf),
            c.converged.to_string(),
            c.iterations.to_string(),
            fmt_f64(c.stationarity),
            c.ets_evaluations.to_string(),
        ])
        .map_err(csv_err)?;
    }
    Ok(w.flush()?)
}

#[derive(Serialize)]
struct MetricsDoc<'a> {
    run: &'a RunInfo,
    metrics: &'a Metrics,
    /// `ok` or the error that ended the run.
    status: &'a str,
}

pub fn write_metrics<W: Write>(log: &SimLog, status: &str, mut out: W) -> Result<()> {
    let doc = MetricsDoc {
        run: &log.info,
        metrics: &log.metrics,
        status,
    };
    serde_json::to_writer_pretty(&mut out, &doc).map_err(|e| Error::Io(e.into()))?;
    writeln!(out)?;
    Ok(out.flush()?)
}

/// Writes the four export files into `dir`, creating it if needed.
pub fn write_run_dir(log: &SimLog, status: &str, dir: &Path) -> Result<()> {
    let with_path = |p: &Path, e: std::io::Error| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", p.display())));
    fs::create_dir_all(dir).map_err(|e| with_path(dir, e))?;
    let open = |name: &str| {
        let p = dir.join(name);
        fs::File::create(&p).map(std::io::BufWriter::new).map_err(|e| with_path(&p, e))
    };
    write_trace(log, open(TRACE_FILE)?)?;
    write_events(log, open(EVENTS_FILE)?)?;
    write_cycles(log, open(CYCLES_FILE)?)?;
    write_metrics(log, status, open(METRICS_FILE)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{EventKind, EventRecord, Phase, TraceSample};

    fn tiny_log() -> SimLog {
        let mut log = SimLog::default();
        log.trace.push(TraceSample {
            t: 0.1,
            x: vec![1.0 / 3.0, -2.0],
            u: vec![0.5],
            v_f: 1e-20,
            phase: Phase::Mpc,
            cycle: Some(0),
            x_hat: Some(vec![0.0, 0.0]),
            deviation: Some(0.25),
        });
        log.events.push(EventRecord {
            t: 0.0,
            kind: EventKind::ModeSwitch,
            cycle: None,
            m: None,
            deviation: None,
            threshold: None,
            delta_star: None,
            delta_min: None,
            t_star: None,
        });
        log
    }

    #[test]
    fn floats_round_trip_exactly() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 1e300, 5e-324] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn trace_layout() {
        let mut buf = Vec::new();
        write_trace(&tiny_log(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,x0,x1,u0,v_f,mode,cycle,deviation");
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(row.len(), 8);
        assert_eq!(row[1].parse::<f64>().unwrap(), 1.0 / 3.0);
        assert_eq!(row[5], "mpc");
    }

    #[test]
    fn empty_fields_for_missing_payload() {
        let mut buf = Vec::new();
        write_events(&tiny_log(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.lines().nth(1).unwrap().ends_with("mode_switch,,,,,,,"));
    }

    #[test]
    fn run_dir_has_four_files() {
        let dir = tempfile::tempdir().unwrap();
        write_run_dir(&tiny_log(), "ok", dir.path()).unwrap();
        for f in [TRACE_FILE, EVENTS_FILE, CYCLES_FILE, METRICS_FILE] {
            assert!(dir.path().join(f).is_file());
        }
        let doc: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap()).unwrap();
        assert_eq!(doc["status"], "ok");
    }
}
