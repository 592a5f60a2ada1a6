//! File formats: samples CSV, JSON records with round-trip numbers, manifest.

use std::io::{self, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context};
use neutra_core::scalar::format_f64;
use serde::ser::Serialize;
use serde::Deserialize;
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::config::ExperimentConfig;

pub const SAMPLES_FILE: &str = "samples.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const EVIDENCE_FILE: &str = "evidence.json";
pub const FLOW_FILE: &str = "flow.bnaf";
pub const TRACE_FILE: &str = "training_trace.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const WEIGHT_COLUMN: &str = "weight";

/// Pretty JSON whose floats are written with 17 significant digits.
struct SciFormatter<'a>(PrettyFormatter<'a>);

impl Formatter for SciFormatter<'_> {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        w.write_all(format_f64(value).as_bytes())
    }
    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, value as f64)
    }
    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

pub fn to_json_string<T: Serialize>(value: &T) -> anyhow::Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, SciFormatter(PrettyFormatter::new()));
    value.serialize(&mut ser)?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    std::fs::write(path, to_json_string(value)?).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Draws in model coordinates, with normalized weights for nested sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleTable {
    pub names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub weights: Option<Vec<f64>>,
}

impl SampleTable {
    pub fn weights_or_uniform(&self) -> Vec<f64> {
        match &self.weights {
            Some(w) => w.clone(),
            None => vec![1.0 / self.rows.len() as f64; self.rows.len()],
        }
    }

    pub fn write_csv(&self, path: &Path) -> anyhow::Result<()> {
        let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
        let mut header = self.names.clone();
        if self.weights.is_some() {
            header.push(WEIGHT_COLUMN.into());
        }
        w.write_record(&header)?;
        for (i, row) in self.rows.iter().enumerate() {
            let mut rec: Vec<String> = row.iter().map(|x| format_f64(*x)).collect();
            if let Some(ws) = &self.weights {
                rec.push(format_f64(ws[i]));
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> anyhow::Result<Self> {
        let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
        let mut names: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        let weighted = names.last().is_some_and(|n| n == WEIGHT_COLUMN);
        if weighted {
            names.pop();
        }
        if names.is_empty() {
            bail!("{}: no parameter columns", path.display());
        }
        let mut rows = Vec::new();
        let mut weights = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let mut vals = rec
                .iter()
                .map(|f| f.trim().parse::<f64>())
                .collect::<Result<Vec<f64>, _>>()
                .with_context(|| format!("{}: row {}", path.display(), line + 1))?;
            if weighted {
                weights.push(vals.pop().expect("weight column present"));
            }
            rows.push(vals);
        }
        Ok(Self {
            names,
            rows,
            weights: weighted.then_some(weights),
        })
    }
}

pub fn write_trace_csv(path: &Path, elbo_per_epoch: &[f64]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "elbo"])?;
    for (i, e) in elbo_per_epoch.iter().enumerate() {
        w.write_record([i.to_string(), format_f64(*e)])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, Deserialize)]
pub struct ErrorRecord {
    pub kind: String,
    pub message: String,
}

impl ErrorRecord {
    pub fn from_error(e: &anyhow::Error) -> Self {
        use neutra_core::Error as E;
        let kind = match e.downcast_ref::<E>() {
            Some(E::DimensionMismatch { .. }) => "dimension_mismatch",
            Some(E::InvalidArgument(_)) => "invalid_argument",
            Some(E::CubeBoundary { .. }) => "cube_boundary",
            Some(E::SamplerFailure(_)) => "sampler_failure",
            Some(E::AdaptationFailure { .. }) => "adaptation_failure",
            Some(E::TrainingFailure(_)) => "training_failure",
            Some(E::UndefinedEss(_)) => "undefined_ess",
            Some(E::Bracketing(_)) => "bracketing",
            Some(E::FlowFormat(_)) => "flow_format",
            None if e.downcast_ref::<crate::config::UsageError>().is_some() => "usage",
            None => "other",
        };
        Self {
            kind: kind.into(),
            message: format!("{e:#}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config: ExperimentConfig,
    pub code_version: String,
    pub started_unix_s: f64,
    pub finished_unix_s: f64,
    pub status: String,
    pub error: Option<ErrorRecord>,
    pub files: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, config: &ExperimentConfig) -> Self {
        Self {
            command: command.into(),
            config: config.clone(),
            code_version: env!("CARGO_PKG_VERSION").into(),
            started_unix_s: unix_now(),
            finished_unix_s: f64::NAN,
            status: "running".into(),
            error: None,
            files: Vec::new(),
        }
    }

    pub fn finish(&mut self, error: Option<&anyhow::Error>) {
        self.finished_unix_s = unix_now();
        match error {
            None => self.status = "ok".into(),
            Some(e) => {
                self.status = "error".into();
                self.error = Some(ErrorRecord::from_error(e));
            }
        }
    }
}

pub fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}
