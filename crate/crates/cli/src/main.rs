//! `scalenet`: certify, simulate and sweep formation scenarios.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use scalenet_core::config::load_config;
use scalenet_core::formation::{run_sweep, run_trace, ExperimentKind};
use scalenet_core::halanay::{halanay_bound, halanay_rate, HalanayParams};
use scalenet_core::output::{emit_plotscript, emit_report, emit_sweep, emit_trace};
use scalenet_core::Error;

#[derive(Parser)]
#[command(name = "scalenet", version, about = "Delayed multiplex networks: certificates and formation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the certificate for a scenario; exit 1 when infeasible.
    Certify { config: PathBuf },
    /// Run a track or ramp-rejection scenario and write the trace CSV.
    Simulate { config: PathBuf },
    /// Run ramp rejection for 1..=K circles and write per-circle maxima.
    Sweep { config: PathBuf },
    /// Print the normalized configuration with all defaults filled in.
    Check { config: PathBuf },
    /// Decay rate of the delay inequality u' <= a u + b sup u + c.
    Halanay {
        #[arg(long, allow_hyphen_values = true)]
        a: f64,
        #[arg(long)]
        b: f64,
        #[arg(long)]
        tau: f64,
        #[arg(long, default_value_t = 0.0)]
        c: f64,
        /// Initial supremum; with --elapsed prints the bound as well.
        #[arg(long)]
        u0: Option<f64>,
        #[arg(long)]
        elapsed: Option<f64>,
    },
}

enum Outcome {
    Success,
    Negative,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::Negative) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } | Error::Validation(_) | Error::Dimension(_) => 2,
        Error::Io { .. } => 2,
        _ => 1,
    }
}

fn run(cmd: Command) -> Result<Outcome, Error> {
    match cmd {
        Command::Certify { config } => {
            let cfg = load_config(&config)?;
            let report = cfg.to_scenario()?.certificate()?;
            print!("{}", report.to_text());
            emit_report(&report, &cfg.output_dir().join("certificate.txt"))?;
            Ok(if report.feasible { Outcome::Success } else { Outcome::Negative })
        }
        Command::Simulate { config } => {
            let cfg = load_config(&config)?;
            let mut scenario = cfg.to_scenario()?;
            if scenario.kind == ExperimentKind::Sweep {
                scenario.kind = ExperimentKind::RampReject;
            }
            let report = scenario.certificate()?;
            if !report.feasible {
                eprintln!("warning: certificate is infeasible; the trace has no bound column");
            }
            let out = run_trace(&scenario, Some(report.clone()))?;
            let dir = cfg.output_dir();
            let trace = dir.join("trace.csv");
            emit_trace(&out.records, &out.labels, &trace)?;
            emit_report(&report, &dir.join("certificate.txt"))?;
            emit_plotscript(Some(&trace), None, &dir.join("plot.py"))?;
            if let Some(last) = out.records.last() {
                println!("t_end: {}", last.t);
                println!("final_max_deviation: {:.17e}", last.max_deviation());
            }
            let peak = out.records.iter().map(|r| r.max_deviation()).fold(0.0, f64::max);
            println!("peak_deviation: {peak:.17e}");
            println!("trace: {}", trace.display());
            Ok(Outcome::Success)
        }
        Command::Sweep { config } => {
            let cfg = load_config(&config)?;
            let mut scenario = cfg.to_scenario()?;
            scenario.kind = ExperimentKind::Sweep;
            let result = run_sweep(&scenario)?;
            let dir = cfg.output_dir();
            let path = dir.join("sweep.csv");
            emit_sweep(&result, &path)?;
            emit_plotscript(None, Some(&path), &dir.join("plot.py"))?;
            for row in &result.rows {
                let cols: Vec<String> = row.per_circle.iter().map(|v| format!("{v:.6e}")).collect();
                println!("circles {:2}: {}", row.circles, cols.join(" "));
            }
            println!("sweep: {}", path.display());
            Ok(Outcome::Success)
        }
        Command::Check { config } => {
            let cfg = load_config(&config)?;
            print!("{}", cfg.to_toml());
            Ok(Outcome::Success)
        }
        Command::Halanay {
            a,
            b,
            tau,
            c,
            u0,
            elapsed,
        } => {
            let rate = match halanay_rate(a, b, tau) {
                Ok(r) => r,
                Err(Error::Infeasible(msg)) => {
                    println!("feasible: false");
                    eprintln!("{msg}");
                    return Ok(Outcome::Negative);
                }
                Err(e) => return Err(e),
            };
            println!("feasible: true");
            println!("lambda_hat: {rate:.17e}");
            if let (Some(u0), Some(t)) = (u0, elapsed) {
                let params = HalanayParams::tight(a, b, c, tau)?;
                println!("bound: {:.17e}", halanay_bound(&params, u0, t)?);
            }
            Ok(Outcome::Success)
        }
    }
}
