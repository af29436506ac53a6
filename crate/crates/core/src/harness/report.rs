//! Plot data from a `cells.csv`: one `.dat` file per (metric, series),
//! each row `x mean stderr` with the standard error taken over repeats.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::sweep::SweepSpec;
use super::{create_dir, write_file, HarnessError};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlotSpec {
    /// Column used as the x axis.
    pub x: String,
    /// Metric columns, one file family each.
    pub y: Vec<String>,
    /// Columns whose value combinations split rows into series.
    #[serde(default)]
    pub series: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeriesPoint {
    pub x: f64,
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub metric: String,
    /// `(column, value)` pairs identifying the series.
    pub key: Vec<(String, String)>,
    pub points: Vec<SeriesPoint>,
}

impl Series {
    pub fn file_name(&self, figure: &str) -> String {
        let mut name = format!("{figure}_{}", self.metric);
        for (col, val) in &self.key {
            let short = col.rsplit('.').next().unwrap_or(col);
            let _ = write!(name, "_{short}-{val}");
        }
        name.retain(|c| c.is_ascii_alphanumeric() || "_-.".contains(c));
        name + ".dat"
    }

    pub fn render(&self, figure: &str, x: &str) -> String {
        let mut s = format!("# figure {figure} metric {}", self.metric);
        for (col, val) in &self.key {
            let _ = write!(s, " {col}={val}");
        }
        let _ = writeln!(s, "\n# {x} {} stderr", self.metric);
        for p in &self.points {
            let _ = writeln!(s, "{} {} {}", p.x, p.mean, p.stderr);
        }
        s
    }
}

/// Reads the `#` header of a cells file back into its sweep spec.
pub fn embedded_spec(text: &str) -> Option<SweepSpec> {
    let line = text.lines().next()?.strip_prefix("# ")?;
    let v: serde_json::Value = serde_json::from_str(line).ok()?;
    serde_json::from_value(v.get("sweep")?.clone()).ok()
}

/// x order key -> (x, samples)
type XSamples = BTreeMap<u64, (f64, Vec<f64>)>;

/// Groups successful rows of `cells_csv` into series.
pub fn build_series(cells_csv: &str, plot: &PlotSpec) -> Result<Vec<Series>, HarnessError> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(cells_csv.as_bytes());
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| HarnessError::MissingColumn(name.to_string()))
    };
    let x_col = col(&plot.x)?;
    let y_cols = plot.y.iter().map(|y| col(y)).collect::<Result<Vec<_>, _>>()?;
    let s_cols = plot.series.iter().map(|s| col(s)).collect::<Result<Vec<_>, _>>()?;
    let status_col = headers.iter().position(|h| h == "status");

    let mut groups: BTreeMap<usize, BTreeMap<Vec<String>, XSamples>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        if status_col.is_some_and(|i| &rec[i] != "ok") {
            continue;
        }
        let Ok(x) = rec[x_col].parse::<f64>() else {
            continue;
        };
        let key: Vec<String> = s_cols.iter().map(|&i| rec[i].to_string()).collect();
        for (m, &yc) in y_cols.iter().enumerate() {
            if let Ok(y) = rec[yc].parse::<f64>() {
                groups
                    .entry(m)
                    .or_default()
                    .entry(key.clone())
                    .or_default()
                    .entry(order_key(x))
                    .or_insert_with(|| (x, Vec::new()))
                    .1
                    .push(y);
            }
        }
    }
    let mut out = Vec::new();
    for (m, by_key) in groups {
        for (key, by_x) in by_key {
            let points = by_x.into_values().map(|(x, ys)| summarize(x, &ys)).collect();
            out.push(Series {
                metric: plot.y[m].clone(),
                key: plot.series.iter().cloned().zip(key).collect(),
                points,
            });
        }
    }
    Ok(out)
}

/// Monotone map from finite f64 to u64 so x values sort numerically.
fn order_key(x: f64) -> u64 {
    let bits = x.to_bits();
    if x.is_sign_negative() {
        !bits
    } else {
        bits | (1 << 63)
    }
}

fn summarize(x: f64, ys: &[f64]) -> SeriesPoint {
    let n = ys.len();
    let mean = ys.iter().sum::<f64>() / n as f64;
    let stderr = if n > 1 {
        let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    } else {
        0.0
    };
    SeriesPoint { x, mean, stderr, n }
}

/// Writes all series for `figure` into `out_dir`; returns the file paths.
pub fn write_report(
    cells_csv: &str,
    figure: &str,
    plot: &PlotSpec,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, HarnessError> {
    let series = build_series(cells_csv, plot)?;
    create_dir(out_dir)?;
    let mut paths = Vec::new();
    for s in &series {
        let path = out_dir.join(s.file_name(figure));
        write_file(&path, &s.render(figure, &plot.x))?;
        paths.push(path);
    }
    Ok(paths)
}
