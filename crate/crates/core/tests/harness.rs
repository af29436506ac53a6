use std::collections::BTreeMap;
use std::fs;

use serde_json::{json, Value};

use eov_sim::config::ExperimentConfig;
use eov_sim::harness::presets;
use eov_sim::harness::report::{build_series, embedded_spec, write_report};
use eov_sim::harness::run::{run_config, write_run, JOURNEYS_FILE, REPORT_FILE};
use eov_sim::harness::sweep::{cell_dir, sweep, Execution, SweepSpec, CELLS_FILE};

fn small_base() -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.run.duration_us = 1_000_000;
    c.run.drain_us = 5_000_000;
    c.run.seed = 40;
    c
}

fn small_sweep() -> SweepSpec {
    SweepSpec::from_json(
        &json!({
            "name": "small",
            "base": small_base(),
            "axes": [
                { "params": ["topology.orderers"], "values": [1, 3] },
                { "params": ["rate.total_tps"], "values": [60.0, 120.0] },
                { "params": ["replication.min_insync"], "values": [2, 9] }
            ],
            "repeats": 2,
            "plot": { "x": "rate.total_tps", "y": ["throughput_tps"], "series": ["topology.orderers"] }
        })
        .to_string(),
    )
    .unwrap()
}

fn header_json(path: &std::path::Path) -> Value {
    let text = fs::read_to_string(path).unwrap();
    let line = text.lines().next().unwrap().strip_prefix("# ").unwrap();
    serde_json::from_str(line).unwrap()
}

#[test]
fn run_artifacts_echo_the_resolved_config() {
    let mut cfg = small_base();
    cfg.topology.orderers = 2;
    cfg.rate.total_tps = Some(90.0);
    cfg.rate.per_client_tps = None;
    let out = run_config(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_run(dir.path(), &out).unwrap();

    let report: Value = serde_json::from_str(&fs::read_to_string(dir.path().join(REPORT_FILE)).unwrap()).unwrap();
    let echoed: ExperimentConfig = serde_json::from_value(report["config"].clone()).unwrap();
    assert_eq!(echoed, cfg);
    assert_eq!(report["echo"]["orderers"], 2);
    assert_eq!(report["echo"]["total_tps"], 90.0);
    assert_eq!(report["echo"]["seed"], 40);

    let head = header_json(&dir.path().join(JOURNEYS_FILE));
    assert_eq!(head["seed"], 40);
    let from_journeys: ExperimentConfig = serde_json::from_value(head["config"].clone()).unwrap();
    assert_eq!(from_journeys, cfg);

    let rows = fs::read_to_string(dir.path().join(JOURNEYS_FILE))
        .unwrap()
        .lines()
        .count();
    assert_eq!(rows, 2 + out.journeys.len());
    // 22.5 tps per client over one second: offsets 0, 44.4 ms, ... 977.8 ms.
    assert_eq!(out.journeys.len(), 4 * 23);
}

#[test]
fn sweep_cells_are_independent_of_execution_order() {
    let spec = small_sweep();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let seq = sweep(&spec, Execution::Sequential, Some(a.path())).unwrap();
    let par = sweep(&spec, Execution::Parallel, Some(b.path())).unwrap();
    assert_eq!(seq.len(), 16);
    assert_eq!(
        fs::read(a.path().join(CELLS_FILE)).unwrap(),
        fs::read(b.path().join(CELLS_FILE)).unwrap()
    );

    for (s, p) in seq.iter().zip(&par) {
        assert_eq!(s.cell.index, p.cell.index);
        match (&s.outcome, &s.cell.config) {
            (Ok(report), Ok(cfg)) => {
                // A cell is a plain run of its config.
                let alone = run_config(cfg).unwrap();
                assert_eq!(report.to_json_pretty(), alone.report.to_json_pretty());
                for f in [REPORT_FILE, JOURNEYS_FILE] {
                    assert_eq!(
                        fs::read(cell_dir(a.path(), s.cell.index).join(f)).unwrap(),
                        fs::read(cell_dir(b.path(), s.cell.index).join(f)).unwrap()
                    );
                }
            }
            (Err(e), Err(_)) => assert!(e.contains("min_insync"), "{e}"),
            other => panic!("cell {}: {:?}", s.cell.index, other.0),
        }
    }
    // min_insync 9 exceeds the replication factor: half the cells are
    // recorded as errors instead of aborting the sweep.
    assert_eq!(seq.iter().filter(|r| r.outcome.is_err()).count(), 8);
}

#[test]
fn cells_file_feeds_the_report() {
    let spec = small_sweep();
    let dir = tempfile::tempdir().unwrap();
    let results = sweep(&spec, Execution::default(), Some(dir.path())).unwrap();
    let text = fs::read_to_string(dir.path().join(CELLS_FILE)).unwrap();

    let back = embedded_spec(&text).unwrap();
    assert_eq!(back, spec);
    let head: Value = serde_json::from_str(text.lines().next().unwrap().strip_prefix("# ").unwrap()).unwrap();
    let base: ExperimentConfig = serde_json::from_value(head["base_config"].clone()).unwrap();
    assert_eq!(base, small_base());

    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let headers = rdr.headers().unwrap().clone();
    assert_eq!(&headers[3], "topology.orderers");
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), results.len());

    // Expected series: mean over repeats of ok rows, by (orderers, rate).
    let status = headers.iter().position(|h| h == "status").unwrap();
    let thr = headers.iter().position(|h| h == "throughput_tps").unwrap();
    let mut expect: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for r in rows.iter().filter(|r| &r[status] == "ok") {
        expect
            .entry((r[3].to_string(), r[4].to_string()))
            .or_default()
            .push(r[thr].parse().unwrap());
    }

    let plot = spec.plot.clone().unwrap();
    let series = build_series(&text, &plot).unwrap();
    assert_eq!(series.len(), 2);
    for s in &series {
        let orderers = &s.key[0].1;
        assert_eq!(s.points.len(), 2);
        assert!(s.points[0].x < s.points[1].x);
        for p in &s.points {
            let ys = &expect[&(orderers.clone(), format!("{:.1}", p.x))];
            assert_eq!(p.n, ys.len());
            assert!((p.mean - ys.iter().sum::<f64>() / ys.len() as f64).abs() < 1e-9);
        }
    }

    let out = dir.path().join("report");
    let files = write_report(&text, "small", &plot, &out).unwrap();
    assert_eq!(files.len(), 2);
    for f in files {
        let body = fs::read_to_string(&f).unwrap();
        assert!(body.starts_with("# figure small metric throughput_tps"));
        assert_eq!(body.lines().filter(|l| !l.starts_with('#')).count(), 2);
    }
}

/// cells.csv for a preset's grid with made-up metric values.
fn synthetic_cells(name: &str) -> (SweepSpec, String) {
    let spec = presets::sweep(name).unwrap();
    let cells = spec.expand().unwrap();
    let mut s = String::new();
    let mut header = vec!["cell".to_string(), "repeat".into(), "seed".into()];
    header.extend(spec.params());
    header.extend(["status", "throughput_tps", "avg_latency_s", "p95_s", "dropped_endorse"].map(String::from));
    s.push_str(&header.join(","));
    s.push('\n');
    for c in &cells {
        let mut row = vec![c.index.to_string(), c.repeat.to_string(), c.seed.to_string()];
        row.extend(c.assignment.iter().map(|(_, v)| v.to_string()));
        row.extend([
            "ok".into(),
            (c.index * 10).to_string(),
            "1.5".into(),
            "2.0".into(),
            "0".into(),
        ]);
        s.push_str(&row.join(","));
        s.push('\n');
    }
    (spec, s)
}

#[test]
fn figure_presets_yield_their_series() {
    let (spec, csv) = synthetic_cells("fig4");
    let series = build_series(&csv, spec.plot.as_ref().unwrap()).unwrap();
    let thr: Vec<_> = series.iter().filter(|s| s.metric == "throughput_tps").collect();
    assert_eq!(thr.len(), 1);
    let xs: Vec<f64> = thr[0].points.iter().map(|p| p.x).collect();
    assert_eq!(xs, [4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0]);

    let (spec, csv) = synthetic_cells("fig9");
    let series = build_series(&csv, spec.plot.as_ref().unwrap()).unwrap();
    let thr: Vec<_> = series.iter().filter(|s| s.metric == "throughput_tps").collect();
    let keys: Vec<&str> = thr.iter().map(|s| s.key[0].1.as_str()).collect();
    assert_eq!(keys, ["1", "15"]);
    assert!(thr.iter().all(|s| s.points.len() == 6));

    for name in presets::SWEEPS.iter().map(|(n, _)| *n) {
        let (spec, csv) = synthetic_cells(name);
        let plot = spec.plot.as_ref().unwrap();
        let series = build_series(&csv, plot).unwrap();
        let points: usize = series.iter().map(|s| s.points.len()).sum();
        assert_eq!(
            points,
            spec.expand().unwrap().len() * plot.y.len() / spec.repeats as usize,
            "{name}"
        );
    }
}
