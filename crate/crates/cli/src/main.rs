//! `teleop` — run, validate, serve and re-summarize testbed scenarios.
//!
//! Exit codes: 0 success, 2 invalid scenario, 3 runtime failure.

use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use teleop_core::runner::{
    self, report, scenario, ExperimentReport, Mode, OperatorKind, RunError, Scenario,
};

#[derive(Parser)]
#[command(name = "teleop", version, about = "Teleoperated-driving testbed")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its outputs.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; defaults to the scenario's `outputs`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a scenario file and list warnings.
    Validate { scenario: PathBuf },
    /// Serve the cockpit WebSocket for a live scenario.
    Serve {
        scenario: PathBuf,
        #[arg(long)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-summarize the CSVs in an output directory.
    Report { dir: PathBuf },
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        match e.exit_code() {
            2 => Failure::Config(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

impl From<teleop_bridge::BridgeError> for Failure {
    fn from(e: teleop_bridge::BridgeError) -> Self {
        match e {
            teleop_bridge::BridgeError::Scenario(m) => Failure::Config(m),
            e => Failure::Runtime(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            scenario,
            seed,
            out,
        } => run(&scenario, seed, out),
        Command::Validate { scenario } => validate(&scenario),
        Command::Serve {
            scenario,
            port,
            host,
            out,
        } => serve(&scenario, SocketAddr::new(host, port), out),
        Command::Report { dir } => report::report_dir(&dir)
            .map(|r| print!("{}", r.to_json()))
            .map_err(Failure::from),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
    }
}

fn load(path: &Path, seed: Option<u64>) -> Result<Scenario, Failure> {
    let v = scenario::load(path, seed).map_err(RunError::Config)?;
    for w in &v.warnings {
        eprintln!("warning: {w}");
    }
    Ok(v.scenario)
}

fn runtime() -> Result<tokio::runtime::Runtime, Failure> {
    tokio::runtime::Runtime::new().map_err(|e| Failure::Runtime(e.to_string()))
}

fn run(path: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<(), Failure> {
    let sc = load(path, seed)?;
    let base = path.parent();
    let out = out.unwrap_or_else(|| sc.outputs.clone());
    let report = match sc.mode {
        Mode::Virtual => runner::run(&sc, base, &out)?,
        Mode::Realtime => {
            if sc.operator.kind == OperatorKind::Live {
                return Err(Failure::Config("live operator: use `teleop serve`".into()));
            }
            let data = runtime()?.block_on(teleop_bridge::run_headless(&sc, base))?;
            finish(&sc, &data, &out)?
        }
    };
    print_report(&report, &out);
    Ok(())
}

fn finish(sc: &Scenario, data: &runner::RunData, out: &Path) -> Result<ExperimentReport, Failure> {
    let report = ExperimentReport::build(sc, data);
    runner::write_outputs(out, sc, data, &report)?;
    Ok(report)
}

fn validate(path: &Path) -> Result<(), Failure> {
    let sc = load(path, None)?;
    println!(
        "{}: ok ({}, {} s)",
        sc.name,
        if sc.mode == Mode::Virtual {
            "virtual"
        } else {
            "realtime"
        },
        sc.duration_s
    );
    Ok(())
}

fn serve(path: &Path, addr: SocketAddr, out: Option<PathBuf>) -> Result<(), Failure> {
    let sc = load(path, None)?;
    let out = out.unwrap_or_else(|| sc.outputs.clone());
    let stop = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    let data = runtime()?.block_on(teleop_bridge::serve(&sc, addr, stop, |a| {
        println!("listening on ws://{a}");
    }))?;
    let report = finish(&sc, &data, &out)?;
    print_report(&report, &out);
    Ok(())
}

fn print_report(r: &ExperimentReport, out: &Path) {
    let ms = |us: f64| us / 1e3;
    println!(
        "scenario {} (seed {}), {} commands",
        r.scenario, r.seed, r.commands
    );
    if let Some(b) = &r.rtt {
        println!(
            "  rtt   n={:<6} mean {:.2} ms  std {:.2} ms  p95 {:.2} ms",
            b.summary.n,
            ms(b.summary.mean_us),
            ms(b.summary.std_us),
            ms(b.summary.p95_us as f64)
        );
    }
    if let Some(b) = &r.g2g {
        println!(
            "  g2g   n={:<6} mean {:.2} ms  std {:.2} ms  p95 {:.2} ms",
            b.summary.n,
            ms(b.summary.mean_us),
            ms(b.summary.std_us),
            ms(b.summary.p95_us as f64)
        );
    }
    if let Some(j) = &r.jitter {
        println!(
            "  jitter {:.3} ms over {} telemetry packets",
            ms(j.jitter_us),
            j.packets
        );
    }
    match (&r.steering_lag.estimate, &r.steering_lag.error) {
        (Some(e), _) => println!(
            "  steering lag {:.0} ms (peak r = {:.4})",
            ms(e.lag_us as f64),
            e.correlation_peak
        ),
        (None, Some(err)) => println!("  steering lag unavailable: {err}"),
        _ => {}
    }
    println!("  outputs in {}", out.display());
}
