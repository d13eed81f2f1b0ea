//! Run artifacts: `metrics.jsonl`, `selected/cycle_NNN.csv` and `config.toml`.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{LoopConfig, Strategy};
use crate::engine::CycleReport;
use crate::{Error, Result};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CONFIG_FILE: &str = "config.toml";
pub const SELECTED_DIR: &str = "selected";

/// One line of `metrics.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub cycle: usize,
    pub n_labeled: usize,
    pub accuracy: f64,
    pub mean_in_total: Option<f64>,
    pub select_ms: f64,
    pub strategy: Strategy,
    pub seed: u64,
}

impl From<&CycleReport> for MetricRecord {
    fn from(r: &CycleReport) -> Self {
        Self {
            cycle: r.cycle,
            n_labeled: r.n_labeled,
            accuracy: r.accuracy,
            mean_in_total: r.mean_in_total,
            select_ms: r.select_ms,
            strategy: r.strategy,
            seed: r.seed,
        }
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub fn selected_file(out_dir: &Path, cycle: usize) -> PathBuf {
    out_dir.join(SELECTED_DIR).join(format!("cycle_{cycle:03}.csv"))
}

/// Appends reports to an output directory one cycle at a time.
pub struct ReportWriter {
    out_dir: PathBuf,
    metrics: fs::File,
}

impl ReportWriter {
    /// Creates the directory layout, truncates old metrics and writes the
    /// resolved config snapshot.
    pub fn create(out_dir: &Path, config: &LoopConfig) -> Result<Self> {
        create_dir(&out_dir.join(SELECTED_DIR))?;
        let cfg_path = out_dir.join(CONFIG_FILE);
        fs::write(&cfg_path, config.resolved().to_toml_string()).map_err(|e| Error::io(&cfg_path, e))?;
        let metrics_path = out_dir.join(METRICS_FILE);
        let metrics = fs::File::create(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
        Ok(Self {
            out_dir: out_dir.to_path_buf(),
            metrics,
        })
    }

    pub fn write(&mut self, report: &CycleReport) -> Result<()> {
        let line = serde_json::to_string(&MetricRecord::from(report)).expect("metric record serializes");
        writeln!(self.metrics, "{line}").map_err(|e| Error::io(self.out_dir.join(METRICS_FILE), e))?;

        let path = selected_file(&self.out_dir, report.cycle);
        let mut w = csv::Writer::from_path(&path).map_err(|e| Error::io(&path, e.into()))?;
        let to_io = |e: csv::Error| Error::io(&path, e.into());
        w.write_record(["id"]).map_err(to_io)?;
        for id in &report.selected {
            w.write_record([id.to_string()]).map_err(to_io)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))
    }
}

pub fn write_reports(reports: &[CycleReport], out_dir: &Path, config: &LoopConfig) -> Result<()> {
    let mut w = ReportWriter::create(out_dir, config)?;
    reports.iter().try_for_each(|r| w.write(r))
}

pub fn read_metrics(dir: &Path) -> Result<Vec<MetricRecord>> {
    let path = dir.join(METRICS_FILE);
    let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.clone(),
            line: i as u64 + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Run directories under `root`: `root` itself if it holds metrics, otherwise
/// its immediate subdirectories that do, sorted by name.
pub fn find_runs(root: &Path) -> Result<Vec<PathBuf>> {
    if root.join(METRICS_FILE).is_file() {
        return Ok(vec![root.to_path_buf()]);
    }
    let entries = fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut runs = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(root, e))?.path();
        if path.join(METRICS_FILE).is_file() {
            runs.push(path);
        }
    }
    runs.sort();
    if runs.is_empty() {
        return Err(Error::io(
            root,
            std::io::Error::new(std::io::ErrorKind::NotFound, format!("no {METRICS_FILE} found")),
        ));
    }
    Ok(runs)
}

fn run_name(root: &Path, run: &Path) -> String {
    run.strip_prefix(root)
        .ok()
        .and_then(|p| p.to_str())
        .filter(|s| !s.is_empty())
        .unwrap_or(".")
        .to_string()
}

/// Learning-curve table per run followed by a final-accuracy comparison.
pub fn summarize(root: &Path) -> Result<String> {
    let mut out = String::new();
    let mut finals = Vec::new();
    for run in find_runs(root)? {
        let name = run_name(root, &run);
        let records = read_metrics(&run)?;
        let _ = writeln!(out, "== {name}");
        let _ = writeln!(out, "{:>5} {:>9} {:>9} {:>13} {:>11}", "cycle", "labeled", "accuracy", "mean_in_total", "select_ms");
        for r in &records {
            let mean = r.mean_in_total.map_or("-".to_string(), |v| format!("{v:.4}"));
            let _ = writeln!(
                out,
                "{:>5} {:>9} {:>9.4} {:>13} {:>11.1}",
                r.cycle, r.n_labeled, r.accuracy, mean, r.select_ms
            );
        }
        out.push('\n');
        if let Some(last) = records.last() {
            let auc = records.iter().map(|r| r.accuracy).sum::<f64>() / records.len() as f64;
            finals.push((name, last.strategy, last.accuracy, auc));
        }
    }
    let _ = writeln!(out, "== summary");
    let _ = writeln!(out, "{:<16} {:<9} {:>9} {:>9}", "run", "strategy", "final", "mean");
    for (name, strategy, last, auc) in &finals {
        let _ = writeln!(out, "{name:<16} {:<9} {last:>9.4} {auc:>9.4}", strategy.as_str());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::SampleId;

    fn report(cycle: usize) -> CycleReport {
        CycleReport {
            cycle,
            n_labeled: 4 + 2 * cycle,
            accuracy: 0.5 + 0.1 * cycle as f64,
            mean_in_total: Some(0.3),
            max_in_total: Some(0.9),
            select_ms: 1.5,
            selected: vec![SampleId(cycle as u64 * 2), SampleId(cycle as u64 * 2 + 1)],
            strategy: Strategy::Ideal,
            seed: 3,
        }
    }

    #[test]
    fn writes_and_reads_back() {
        let dir = tempfile::tempdir().unwrap();
        let reports: Vec<_> = (0..3).map(report).collect();
        write_reports(&reports, dir.path(), &LoopConfig::default()).unwrap();
        let back = read_metrics(dir.path()).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back[2], MetricRecord::from(&reports[2]));
        let ids = fs::read_to_string(selected_file(dir.path(), 1)).unwrap();
        assert_eq!(ids, "id\n2\n3\n");
        let cfg = LoopConfig::from_file(&dir.path().join(CONFIG_FILE)).unwrap();
        assert_eq!(cfg, LoopConfig::default().resolved());
        let text = summarize(dir.path()).unwrap();
        assert!(text.contains("summary"));
    }

    #[test]
    fn metric_keys() {
        let v: serde_json::Value = serde_json::to_value(MetricRecord::from(&report(0))).unwrap();
        let mut keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        keys.sort();
        assert_eq!(keys, ["accuracy", "cycle", "mean_in_total", "n_labeled", "seed", "select_ms", "strategy"]);
    }
}
