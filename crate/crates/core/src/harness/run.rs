//! A single simulation run and its output files.

use std::io::Write;
use std::path::Path;

use serde_json::json;

use super::{create_dir, io_err, write_file, HarnessError};
use crate::config::ExperimentConfig;
use crate::driver::TxnJourney;
use crate::metrics::RunReport;
use crate::pipeline::Simulation;

pub const REPORT_FILE: &str = "report.json";
pub const JOURNEYS_FILE: &str = "journeys.csv";

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub report: RunReport,
    pub journeys: Vec<TxnJourney>,
}

pub fn run_config(cfg: &ExperimentConfig) -> Result<RunOutput, HarnessError> {
    let mut sim = Simulation::new(cfg)?;
    sim.run();
    Ok(RunOutput {
        report: RunReport::of(&sim),
        journeys: sim.journeys(),
    })
}

/// Writes `report.json` and `journeys.csv` into `dir`.
pub fn write_run(dir: &Path, out: &RunOutput) -> Result<(), HarnessError> {
    create_dir(dir)?;
    let mut report = out.report.to_json_pretty();
    report.push('\n');
    write_file(&dir.join(REPORT_FILE), &report)?;
    let path = dir.join(JOURNEYS_FILE);
    let file = std::fs::File::create(&path).map_err(io_err(&path))?;
    let mut w = std::io::BufWriter::new(file);
    write_journeys(&mut w, &out.report.config, &out.journeys)?;
    w.flush().map_err(io_err(&path))
}

/// Journey CSV preceded by a `#` line holding the resolved config and seed.
pub fn write_journeys<W: Write>(
    w: &mut W,
    cfg: &ExperimentConfig,
    journeys: &[TxnJourney],
) -> Result<(), HarnessError> {
    let echo = json!({ "seed": cfg.run.seed, "config": cfg });
    writeln!(w, "# {echo}").map_err(csv::Error::from)?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "txn_id",
        "client",
        "op",
        "submit_us",
        "endorsed_us",
        "bcast_ack_us",
        "commit_us",
        "status",
    ])?;
    let opt = |t: Option<crate::sim::SimTime>| t.map(|t| t.as_micros().to_string()).unwrap_or_default();
    for j in journeys {
        out.write_record([
            j.txn_id.to_string(),
            j.client.0.to_string(),
            j.op.name().to_string(),
            j.submit.as_micros().to_string(),
            opt(j.endorsed),
            opt(j.bcast_ack),
            opt(j.commit),
            j.status.name().to_string(),
        ])?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}
