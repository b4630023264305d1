//! CSV traces, sweep tables, certificate reports and a matplotlib plot script.
//!
//! Numbers are written with 17 significant digits so every `f64` round-trips.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::certificate::CertificateReport;
use crate::dde::TraceRecord;
use crate::error::{Error, Result};
use crate::formation::SweepResult;

pub const TRACE_HEADER: &str = "t,agent_id,circle,dev_p,x1,x2,r1_1,r1_2,r2_1,r2_2,bound";
pub const SWEEP_HEADER: &str = "circles,circle,max_dev";

/// Scientific notation with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Trace CSV text. `labels[i]` is the circle of agent `i`.
pub fn trace_csv(records: &[TraceRecord], labels: &[usize]) -> Result<String> {
    let mut out = String::with_capacity(64 + records.len() * labels.len() * 200);
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for rec in records {
        if rec.agents.len() != labels.len() {
            return Err(Error::Dimension(format!(
                "record at t = {} has {} agents, expected {}",
                rec.t,
                rec.agents.len(),
                labels.len()
            )));
        }
        let bound = rec.bound.map(fmt_f64).unwrap_or_default();
        for (i, a) in rec.agents.iter().enumerate() {
            if a.x.len() != 2 || a.r1.len() != 2 || a.r2.len() != 2 {
                return Err(Error::Dimension("trace rows require two-dimensional agents".into()));
            }
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                fmt_f64(rec.t),
                i,
                labels[i],
                fmt_f64(a.deviation),
                fmt_f64(a.x[0]),
                fmt_f64(a.x[1]),
                fmt_f64(a.r1[0]),
                fmt_f64(a.r1[1]),
                fmt_f64(a.r2[0]),
                fmt_f64(a.r2[1]),
                bound
            );
        }
    }
    Ok(out)
}

pub fn sweep_csv(result: &SweepResult) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for row in &result.rows {
        for (c, v) in row.per_circle.iter().enumerate() {
            let _ = writeln!(out, "{},{},{}", row.circles, c + 1, fmt_f64(*v));
        }
    }
    out
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn emit_trace(records: &[TraceRecord], labels: &[usize], path: &Path) -> Result<()> {
    write(path, &trace_csv(records, labels)?)
}

pub fn emit_sweep(result: &SweepResult, path: &Path) -> Result<()> {
    write(path, &sweep_csv(result))
}

pub fn emit_report(report: &CertificateReport, path: &Path) -> Result<()> {
    write(path, &report.to_text())
}

/// Python script drawing trajectories, per-circle deviations and the bound
/// from a trace CSV, and the sweep table when given.
pub fn plot_script(trace: Option<&Path>, sweep: Option<&Path>) -> String {
    let quote = |p: Option<&Path>| match p {
        Some(p) => format!("{:?}", p.display().to_string()),
        None => "None".to_string(),
    };
    format!(
        r#"#!/usr/bin/env python3
"""Plots for scalenet outputs. Requires pandas and matplotlib."""
import pandas as pd
import matplotlib.pyplot as plt

TRACE = {trace}
SWEEP = {sweep}

if TRACE is not None:
    df = pd.read_csv(TRACE)
    fig, ax = plt.subplots(figsize=(6, 6))
    for _, g in df.groupby("agent_id"):
        ax.plot(g["x1"], g["x2"], lw=0.6)
    last = df[df["t"] == df["t"].max()]
    ax.scatter(last["x1"], last["x2"], s=8, c="k")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_aspect("equal")
    ax.set_title("hand positions")
    fig.savefig(TRACE.replace(".csv", "_paths.png"), dpi=150)

    fig, ax = plt.subplots(figsize=(7, 4))
    for aid, g in df.groupby("agent_id"):
        first = g["circle"].iloc[0] == 1 and aid == df["agent_id"].min()
        ax.plot(g["t"], g["dev_p"], lw=1.5 if first else 0.4, color="C3" if first else "C0")
    bound = df.groupby("t")["bound"].first().dropna()
    if len(bound):
        ax.plot(bound.index, bound.values, "k--", label="bound")
        ax.legend()
    ax.set_yscale("log")
    ax.set_xlabel("t [s]")
    ax.set_ylabel("deviation [m]")
    fig.savefig(TRACE.replace(".csv", "_deviation.png"), dpi=150)

if SWEEP is not None:
    sw = pd.read_csv(SWEEP)
    fig, ax = plt.subplots(figsize=(7, 4))
    for k, g in sw.groupby("circles"):
        ax.plot(g["circle"], g["max_dev"], marker="o", label=f"{{k}} circles")
    ax.set_xlabel("circle")
    ax.set_ylabel("max deviation [m]")
    ax.legend(fontsize=6, ncol=2)
    fig.savefig(SWEEP.replace(".csv", ".png"), dpi=150)

plt.show()
"#,
        trace = quote(trace),
        sweep = quote(sweep)
    )
}

pub fn emit_plotscript(trace: Option<&Path>, sweep: Option<&Path>, path: &Path) -> Result<()> {
    write(path, &plot_script(trace, sweep))
}
