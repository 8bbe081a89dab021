use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use vbi_sim::stats::SWEEP_COLUMNS;
use vbi_sim::{GenSpec, Scenario, SimConfig, generate, run, trace};

#[derive(Parser)]
#[command(name = "vbi-sim", version, about = "Trace-driven VBI memory-system simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Replay one trace under one scenario.
    Run {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Placement policy for heterogeneous scenarios (overrides the config).
        #[arg(long)]
        policy: Option<String>,
        /// Stats file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic trace.
    Gen {
        #[arg(long)]
        spec: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file; a `.gz` suffix compresses it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every trace in a directory under each listed scenario.
    Sweep {
        #[arg(long)]
        traces: PathBuf,
        /// Comma-separated scenario names.
        #[arg(long)]
        scenarios: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl ToString) -> Self {
        Failure {
            code,
            message: message.to_string(),
        }
    }
}

fn load_config(path: Option<&Path>, policy: Option<&str>) -> Result<SimConfig, Failure> {
    let mut cfg = match path {
        Some(p) => SimConfig::load(p).map_err(|e| Failure::new(2, e))?,
        None => SimConfig::default(),
    };
    if let Some(p) = policy {
        cfg.hetero.policy = p.to_string();
        cfg.validate().map_err(|e| Failure::new(2, e))?;
    }
    Ok(cfg)
}

fn read_trace(path: &Path) -> Result<Vec<vbi_sim::TraceEvent>, Failure> {
    trace::read_file(path).map_err(|e| Failure::new(2, format!("{}: {e}", path.display())))
}

fn scenario(name: &str) -> Result<Scenario, Failure> {
    name.trim().parse().map_err(|e| Failure::new(2, e))
}

fn run_one(events: &[vbi_sim::TraceEvent], sc: Scenario, cfg: &SimConfig) -> Result<vbi_sim::StatsReport, Failure> {
    run(events, sc, cfg).map_err(|e| Failure::new(e.exit_code() as u8, e))
}

fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run {
            trace,
            scenario: name,
            config,
            policy,
            out,
        } => {
            let cfg = load_config(config.as_deref(), policy.as_deref())?;
            let sc = scenario(&name)?;
            let events = read_trace(&trace)?;
            let json = run_one(&events, sc, &cfg)?.to_json();
            match out {
                Some(p) => fs::write(&p, json).map_err(|e| Failure::new(1, format!("{}: {e}", p.display()))),
                None => std::io::stdout()
                    .write_all(json.as_bytes())
                    .map_err(|e| Failure::new(1, e)),
            }
        }
        Command::Gen { spec, seed, out } => {
            let spec: GenSpec = spec.parse().map_err(|e| Failure::new(2, e))?;
            let events = generate(&spec, seed).map_err(|e| Failure::new(2, e))?;
            trace::write_file(&out, &events).map_err(|e| Failure::new(1, format!("{}: {e}", out.display())))
        }
        Command::Sweep {
            traces,
            scenarios,
            config,
            out,
        } => {
            let cfg = load_config(config.as_deref(), None)?;
            let list = scenarios
                .split(',')
                .filter(|s| !s.trim().is_empty())
                .map(scenario)
                .collect::<Result<Vec<_>, _>>()?;
            let mut files: Vec<PathBuf> = fs::read_dir(&traces)
                .map_err(|e| Failure::new(2, format!("{}: {e}", traces.display())))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file())
                .collect();
            files.sort();
            let mut w = csv::Writer::from_path(&out).map_err(|e| Failure::new(1, e))?;
            let mut header = vec!["trace", "scenario", "policy"];
            header.extend(SWEEP_COLUMNS);
            w.write_record(&header).map_err(|e| Failure::new(1, e))?;
            for f in files {
                let events = read_trace(&f)?;
                let name = f.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
                for &sc in &list {
                    let report = run_one(&events, sc, &cfg)?;
                    let mut row = vec![name.clone(), sc.name().to_string(), report.policy.clone().unwrap_or_default()];
                    row.extend(report.sweep_row());
                    w.write_record(&row).map_err(|e| Failure::new(1, e))?;
                }
            }
            w.flush().map_err(|e| Failure::new(1, e))
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("vbi-sim: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
