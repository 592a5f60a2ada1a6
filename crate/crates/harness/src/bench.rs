//! Repeated runs of several methods aggregated into a benchmark table.

use std::path::{Path, PathBuf};

use neutra_core::scalar::format_f64;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Method};
use crate::output::{self, ErrorRecord};
use crate::pipeline::{run_and_record, EvidenceRecord, MetricsRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchCell {
    pub method: Method,
    pub rep: usize,
    pub seed: u64,
    pub dir: PathBuf,
    pub metrics: Option<MetricsRecord>,
    pub evidence: Option<EvidenceRecord>,
    pub error: Option<ErrorRecord>,
}

/// Mean and sample standard deviation; the deviation is absent below two values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub mean: Option<f64>,
    pub std: Option<f64>,
}

impl Spread {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        if xs.is_empty() {
            return Self { mean: None, std: None };
        }
        let mean = xs.iter().sum::<f64>() / n;
        let std = (xs.len() >= 2).then(|| (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
        Self { mean: Some(mean), std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub method: Method,
    pub reps: usize,
    pub failures: usize,
    pub ess: Spread,
    pub wall_time_per_ess: Spread,
    pub evals_per_ess: Spread,
    pub divergences_per_ess: Spread,
    pub log_z: Spread,
    /// Largest pairwise |Δlog Z| in units of the combined reported error.
    pub max_evidence_tension: Option<f64>,
}

impl TableRow {
    pub fn evidence_consistent(&self) -> Option<bool> {
        self.max_evidence_tension.map(|t| t < 3.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<TableRow>,
    pub cells: Vec<BenchCell>,
}

/// `reps` runs per method with seeds `base.seed + rep`, each in
/// `root/<method>/rep<rep>`. Failed runs are recorded and the table is still
/// produced.
pub fn run_bench(base: &ExperimentConfig, methods: &[Method], reps: usize, root: &Path) -> anyhow::Result<BenchReport> {
    if reps == 0 {
        return Err(crate::config::UsageError("bench needs at least one repetition".into()).into());
    }
    let mut cells = Vec::new();
    for &method in methods {
        for rep in 0..reps {
            let mut cfg = base.clone();
            cfg.method = method;
            cfg.seed = base.seed + rep as u64;
            cfg.output_dir = Some(root.join(method.as_str()).join(format!("rep{rep}")));
            let (dir, result) = run_and_record("bench", &cfg, root);
            let cell = match result {
                Ok(o) => BenchCell {
                    method,
                    rep,
                    seed: cfg.seed,
                    dir,
                    metrics: o.metrics,
                    evidence: o.evidence,
                    error: None,
                },
                Err(e) => BenchCell {
                    method,
                    rep,
                    seed: cfg.seed,
                    dir,
                    metrics: None,
                    evidence: None,
                    error: Some(ErrorRecord::from_error(&e)),
                },
            };
            cells.push(cell);
        }
    }
    let rows = methods.iter().map(|&m| aggregate(m, &cells)).collect();
    let report = BenchReport { rows, cells };
    write_report(root, &report)?;
    Ok(report)
}

fn aggregate(method: Method, cells: &[BenchCell]) -> TableRow {
    let mine: Vec<&BenchCell> = cells.iter().filter(|c| c.method == method).collect();
    let metrics: Vec<&MetricsRecord> = mine.iter().filter_map(|c| c.metrics.as_ref()).collect();
    let pick = |f: &dyn Fn(&MetricsRecord) -> Option<f64>| Spread::of(&metrics.iter().filter_map(|m| f(m)).collect::<Vec<_>>());
    let evidence: Vec<&EvidenceRecord> = mine.iter().filter_map(|c| c.evidence.as_ref()).collect();
    let mut tension: Option<f64> = None;
    for (i, a) in evidence.iter().enumerate() {
        for b in &evidence[i + 1..] {
            let t = (a.log_z - b.log_z).abs() / a.log_z_err.hypot(b.log_z_err);
            tension = Some(tension.map_or(t, |m| m.max(t)));
        }
    }
    TableRow {
        method,
        reps: mine.len(),
        failures: mine.iter().filter(|c| c.error.is_some()).count(),
        ess: pick(&|m| Some(m.metrics.ess)),
        wall_time_per_ess: pick(&|m| Some(m.metrics.wall_time_per_ess)),
        evals_per_ess: pick(&|m| Some(m.metrics.evals_per_ess)),
        divergences_per_ess: pick(&|m| m.metrics.divergences_per_ess),
        log_z: Spread::of(&evidence.iter().map(|e| e.log_z).collect::<Vec<_>>()),
        max_evidence_tension: tension,
    }
}

fn field(x: Option<f64>) -> String {
    x.map(format_f64).unwrap_or_default()
}

pub fn table_csv(rows: &[TableRow]) -> anyhow::Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "method",
        "reps",
        "failures",
        "ess_mean",
        "ess_std",
        "wall_time_per_ess_mean",
        "wall_time_per_ess_std",
        "evals_per_ess_mean",
        "evals_per_ess_std",
        "divergences_per_ess_mean",
        "divergences_per_ess_std",
        "log_z_mean",
        "log_z_std",
        "evidence_consistent",
    ])?;
    for r in rows {
        w.write_record([
            r.method.as_str().to_string(),
            r.reps.to_string(),
            r.failures.to_string(),
            field(r.ess.mean),
            field(r.ess.std),
            field(r.wall_time_per_ess.mean),
            field(r.wall_time_per_ess.std),
            field(r.evals_per_ess.mean),
            field(r.evals_per_ess.std),
            field(r.divergences_per_ess.mean),
            field(r.divergences_per_ess.std),
            field(r.log_z.mean),
            field(r.log_z.std),
            r.evidence_consistent().map(|b| b.to_string()).unwrap_or_default(),
        ])?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

fn write_report(root: &Path, report: &BenchReport) -> anyhow::Result<()> {
    std::fs::create_dir_all(root)?;
    std::fs::write(root.join("table.csv"), table_csv(&report.rows)?)?;
    let mut w = csv::Writer::from_path(root.join("runs.csv"))?;
    w.write_record(["method", "rep", "seed", "ess", "evals_per_ess", "n_divergences", "log_z", "log_z_err", "error"])?;
    for c in &report.cells {
        let m = c.metrics.as_ref().map(|m| &m.metrics);
        w.write_record([
            c.method.as_str().to_string(),
            c.rep.to_string(),
            c.seed.to_string(),
            field(m.map(|m| m.ess)),
            field(m.map(|m| m.evals_per_ess)),
            m.and_then(|m| m.n_divergences).map(|d| d.to_string()).unwrap_or_default(),
            field(c.evidence.as_ref().map(|e| e.log_z)),
            field(c.evidence.as_ref().map(|e| e.log_z_err)),
            c.error.as_ref().map(|e| e.message.clone()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    output::write_json(&root.join("bench.json"), report)
}
