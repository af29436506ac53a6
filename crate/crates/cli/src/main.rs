use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use eov_sim::config::ExperimentConfig;
use eov_sim::harness::calibrate::{calibrate, CalibrateSpec};
use eov_sim::harness::report::{embedded_spec, write_report};
use eov_sim::harness::run::{run_config, write_run};
use eov_sim::harness::sweep::{sweep, BaseRef, Execution, SweepSpec};
use eov_sim::harness::{apply_overrides, presets, read_file, HarnessError};
use eov_sim::metrics::RunReport;

/// Execute-order-validate pipeline simulator.
#[derive(Parser, Debug)]
#[command(name = "eovsim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one simulation and write report.json and journeys.csv.
    Run(RunArgs),
    /// Run every cell of a sweep and write cells.csv plus per-cell output.
    Sweep(SweepArgs),
    /// Turn a cells.csv into per-series .dat files.
    Report(ReportArgs),
    /// Bisect one knob so the topology saturates near a target rate.
    Calibrate(CalibrateArgs),
    /// List presets, or print one.
    Preset { name: Option<String> },
}

#[derive(Args, Debug)]
struct Overrides {
    /// Override the seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the submission phase length, in seconds.
    #[arg(long)]
    duration: Option<f64>,
    /// Set a config field, e.g. `--set topology.orderers=6`.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    set: Vec<String>,
}

impl Overrides {
    fn pairs(&self) -> Result<Vec<(String, Value)>, HarnessError> {
        let mut out = Vec::new();
        for s in &self.set {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| HarnessError::Spec(format!("`{s}` is not PATH=VALUE")))?;
            let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
            out.push((k.to_string(), value));
        }
        if let Some(seed) = self.seed {
            out.push(("run.seed".into(), seed.into()));
        }
        if let Some(d) = self.duration {
            if d.is_nan() || d <= 0.0 {
                return Err(HarnessError::Spec("--duration must be positive".into()));
            }
            out.push(("run.duration_us".into(), ((d * 1e6).round() as u64).into()));
        }
        Ok(out)
    }

    fn apply(&self, cfg: &ExperimentConfig) -> Result<ExperimentConfig, HarnessError> {
        let pairs = self.pairs()?;
        apply_overrides(cfg, pairs.iter().map(|(k, v)| (k.as_str(), v)))
    }
}

#[derive(Args, Debug)]
struct Source {
    /// JSON file to read.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Embedded preset name.
    #[arg(long)]
    preset: Option<String>,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    source: Source,
    #[command(flatten)]
    overrides: Overrides,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// Sweep spec file (`--config`) or a figure preset (`--preset`).
    #[command(flatten)]
    source: Source,
    #[command(flatten)]
    overrides: Overrides,
    #[arg(long)]
    repeats: Option<u32>,
    /// Run cells one after another.
    #[arg(long)]
    sequential: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// cells.csv written by `sweep`.
    #[arg(long)]
    cells: PathBuf,
    /// Figure preset whose plot layout to use; defaults to the one stored
    /// in the cells file.
    #[arg(long)]
    figure: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct CalibrateArgs {
    #[command(flatten)]
    source: Source,
    #[command(flatten)]
    overrides: Overrides,
    #[arg(long, default_value = "network.per_byte_ns")]
    param: String,
    #[arg(long, default_value_t = 0.0)]
    lo: f64,
    #[arg(long, default_value_t = 400.0)]
    hi: f64,
    #[arg(long, default_value_t = 325.0)]
    target_tps: f64,
    #[arg(long, default_value_t = 0.95)]
    efficiency: f64,
    #[arg(long, default_value_t = 10)]
    iterations: u32,
    /// Allow fractional knob values.
    #[arg(long)]
    fractional: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config_error() { 1 } else { 2 })
        }
    }
}

fn load_config(src: &Source) -> Result<ExperimentConfig, HarnessError> {
    match (&src.config, &src.preset) {
        (Some(path), _) => Ok(ExperimentConfig::from_json(&read_file(path)?)?),
        (None, Some(name)) => presets::config(name),
        (None, None) => Err(HarnessError::Spec("pass --config or --preset".into())),
    }
}

fn load_sweep(src: &Source) -> Result<SweepSpec, HarnessError> {
    match (&src.config, &src.preset) {
        (Some(path), _) => SweepSpec::from_json(&read_file(path)?),
        (None, Some(name)) => presets::sweep(name),
        (None, None) => Err(HarnessError::Spec("pass --config or --preset".into())),
    }
}

fn summary(r: &RunReport) -> String {
    let f = |v: Option<f64>| v.map_or("undefined".to_string(), |x| format!("{x:.4}"));
    format!(
        "offered {:.1} tps, throughput {:.2} tps, latency avg {} s p95 {} s, r {} (final {}), \
         submitted {} committed {} invalid {} dropped_endorse {} dropped_broadcast {} in_flight {}{}",
        r.offered_tps,
        r.throughput_tps,
        f(r.latency.avg_s),
        f(r.latency.p95_s),
        f(r.r_window),
        f(r.r_final),
        r.status.submitted,
        r.status.committed,
        r.status.invalid_committed,
        r.status.dropped_endorsement,
        r.status.dropped_broadcast,
        r.status.in_flight,
        if r.trace.as_ref().is_some_and(|t| t.truncated) {
            ", TRUNCATED"
        } else {
            ""
        },
    )
}

fn execute(cmd: Command) -> Result<(), HarnessError> {
    match cmd {
        Command::Run(a) => {
            let cfg = a.overrides.apply(&load_config(&a.source)?)?;
            let out = run_config(&cfg)?;
            write_run(&a.out, &out)?;
            println!("{}", summary(&out.report));
        }
        Command::Sweep(a) => {
            let mut spec = load_sweep(&a.source)?;
            let pairs = a.overrides.pairs()?;
            if !pairs.is_empty() {
                let base = spec.base.resolve()?;
                let cfg = apply_overrides(&base, pairs.iter().map(|(k, v)| (k.as_str(), v)))?;
                spec.base = BaseRef::Inline(Box::new(cfg));
            }
            if let Some(r) = a.repeats {
                spec.repeats = r;
            }
            let exec = if a.sequential {
                Execution::Sequential
            } else {
                Execution::default()
            };
            let results = sweep(&spec, exec, Some(&a.out))?;
            let failed = results.iter().filter(|r| r.outcome.is_err()).count();
            println!(
                "{} cells, {} failed, written to {}",
                results.len(),
                failed,
                a.out.join("cells.csv").display()
            );
            for r in results.iter().filter(|r| r.outcome.is_err()) {
                eprintln!("cell {}: {}", r.cell.index, r.outcome.as_ref().unwrap_err());
            }
        }
        Command::Report(a) => {
            let text = read_file(&a.cells)?;
            let (name, plot) = match &a.figure {
                Some(fig) => {
                    let spec = presets::sweep(fig)?;
                    (fig.clone(), spec.plot)
                }
                None => {
                    let spec = embedded_spec(&text)
                        .ok_or_else(|| HarnessError::Spec("cells file has no sweep header; pass --figure".into()))?;
                    let name = if spec.name.is_empty() {
                        "sweep".to_string()
                    } else {
                        spec.name.clone()
                    };
                    (name, spec.plot)
                }
            };
            let plot = plot.ok_or_else(|| HarnessError::Spec(format!("no plot layout for `{name}`")))?;
            for p in write_report(&text, &name, &plot, &a.out)? {
                println!("{}", display(&p));
            }
        }
        Command::Calibrate(a) => {
            let base = a.overrides.apply(&load_config(&a.source)?)?;
            let spec = CalibrateSpec {
                param: a.param,
                lo: a.lo,
                hi: a.hi,
                target_tps: a.target_tps,
                efficiency: a.efficiency,
                iterations: a.iterations,
                integer: !a.fractional,
            };
            let result = calibrate(&base, &spec)?;
            for p in &result.probes {
                eprintln!(
                    "{} = {} -> {:.2} tps ({:.3})",
                    spec.param, p.value, p.throughput_tps, p.efficiency
                );
            }
            println!("{}", serde_json::to_string_pretty(&result).expect("serializes"));
        }
        Command::Preset { name: None } => {
            for n in presets::names() {
                println!("{n}");
            }
        }
        Command::Preset { name: Some(n) } => print!("{}", presets::text(&n)?),
    }
    Ok(())
}

fn display(p: &Path) -> String {
    p.display().to_string()
}
