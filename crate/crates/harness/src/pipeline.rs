//! Run one configured experiment and persist its artifacts.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context};
use neutra_core::diagnostics::{assemble_metrics, ns_ess, nuts_ess, RunMetrics, SamplerRun};
use neutra_core::flow::{read_weights, train_neutra, write_weights, FlowConfig, NeutraDensity, TrainConfig, TrainingTrace};
use neutra_core::ground_truth::{log_evidence_oracle, marginal_contour, marginal_interval, QuadratureGrid};
use neutra_core::model::{NsiModel, OnCube, PosteriorModel, Unconstrained};
use neutra_core::nested::{run_ns, NsConfig, NsRunResult};
use neutra_core::nuts::{run_nuts, NutsConfig, NutsRunResult};
use neutra_core::scalar::format_f64;
use neutra_core::{Bnaf, GaussianFit};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Method, ModelKind};
use crate::output::{self, Manifest, SampleTable};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceRecord {
    pub method: String,
    pub log_z: f64,
    pub log_z_err: f64,
    pub information: Option<f64>,
    pub n_live: Option<usize>,
    pub n_iterations: Option<usize>,
}

/// Sampling-phase metrics plus timing that the table does not show.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    #[serde(flatten)]
    pub metrics: RunMetrics,
    pub time_per_eval_s: f64,
    pub train_time_s: Option<f64>,
    pub final_mean_elbo: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainedFlow {
    pub flow: Bnaf,
    /// Absent when the flow was loaded from a file.
    pub trace: Option<TrainingTrace>,
    pub train_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalInterval {
    pub parameter: String,
    pub mass: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContourCheck {
    pub mass: f64,
    pub level: f64,
    pub enclosed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSummary {
    pub log_z: f64,
    pub points_per_dim: usize,
    pub lo: f64,
    pub hi: f64,
    pub converged: bool,
    pub knee: Option<usize>,
    pub intervals: Vec<MarginalInterval>,
    pub contour_checks: Vec<ContourCheck>,
    pub contour_diagnostics: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct OracleArtifacts {
    pub summary: OracleSummary,
    pub trace_csv: String,
    pub contour_csv: String,
    pub levels_csv: String,
}

#[derive(Debug, Clone, Default)]
pub struct RunOutcome {
    pub samples: Option<SampleTable>,
    pub metrics: Option<MetricsRecord>,
    pub evidence: Option<EvidenceRecord>,
    pub flow: Option<TrainedFlow>,
    pub ns: Option<NsRunResult>,
    pub nuts: Option<NutsRunResult>,
    pub oracle: Option<OracleArtifacts>,
}

pub fn load_gaussian_fit(cfg: &ExperimentConfig) -> anyhow::Result<GaussianFit> {
    if let Some(path) = &cfg.dataset {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        return Ok(GaussianFit::from_csv(&text)?);
    }
    if let Some(seed) = cfg.data_seed {
        return Ok(GaussianFit::synthetic(cfg.groups, cfg.obs_per_group, seed)?);
    }
    Ok(GaussianFit::reference())
}

pub fn nsi_model(cfg: &ExperimentConfig) -> NsiModel {
    NsiModel::new(cfg.nsi_observation, cfg.surrogate.clone())
}

pub fn ns_config(cfg: &ExperimentConfig) -> NsConfig {
    NsConfig {
        n_live: cfg.n_live,
        frac_remain: cfg.frac_remain,
        seed: cfg.seed,
        ..NsConfig::default()
    }
}

pub fn nuts_config(cfg: &ExperimentConfig) -> NutsConfig {
    NutsConfig {
        n_chains: cfg.chains,
        n_warmup: cfg.warmup,
        n_samples: cfg.samples,
        target_accept: cfg.target_accept.unwrap_or(NutsConfig::default().target_accept),
        step_size: cfg.step_size,
        max_depth: cfg.max_depth,
        seed: cfg.seed,
        ..NutsConfig::default()
    }
}

pub fn flow_config(cfg: &ExperimentConfig) -> FlowConfig {
    FlowConfig::new(cfg.flow_stacks, cfg.flow_hidden.clone())
}

pub fn train_config(cfg: &ExperimentConfig) -> TrainConfig {
    TrainConfig {
        epochs: cfg.epochs,
        batch: cfg.batch,
        learning_rate: cfg.learning_rate,
        final_learning_rate: cfg.final_learning_rate,
        init_scale: cfg.init_scale,
        seed: cfg.seed,
        ..TrainConfig::default()
    }
}

pub fn read_flow(path: &Path) -> anyhow::Result<Bnaf> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(read_weights(BufReader::new(f))?)
}

pub fn write_flow(path: &Path, flow: &Bnaf) -> anyhow::Result<()> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write_weights(flow, BufWriter::new(f))?;
    Ok(())
}

/// Load `flow_weights` if set, otherwise train on the model's unconstrained density.
pub fn obtain_flow<M: PosteriorModel>(model: &M, cfg: &ExperimentConfig) -> anyhow::Result<TrainedFlow> {
    if let Some(path) = &cfg.flow_weights {
        let flow = read_flow(path)?;
        if flow.dim() != model.dim() {
            bail!("flow in {} has dimension {}, model needs {}", path.display(), flow.dim(), model.dim());
        }
        return Ok(TrainedFlow {
            flow,
            trace: None,
            train_time_s: 0.0,
        });
    }
    let start = Instant::now();
    let (flow, trace) = train_neutra(&Unconstrained(model), flow_config(cfg), &train_config(cfg))?;
    Ok(TrainedFlow {
        flow,
        trace: Some(trace),
        train_time_s: start.elapsed().as_secs_f64(),
    })
}

pub fn train_only(cfg: &ExperimentConfig) -> anyhow::Result<TrainedFlow> {
    match cfg.model {
        ModelKind::GaussianFit => obtain_flow(&load_gaussian_fit(cfg)?, cfg),
        ModelKind::Nsi => obtain_flow(&nsi_model(cfg), cfg),
    }
}

pub fn execute(cfg: &ExperimentConfig) -> anyhow::Result<RunOutcome> {
    execute_with_flow(cfg, None)
}

/// As [`execute`], reusing `flow` for NeuTra methods when given.
pub fn execute_with_flow(cfg: &ExperimentConfig, flow: Option<TrainedFlow>) -> anyhow::Result<RunOutcome> {
    cfg.validate()?;
    match (cfg.model, cfg.method) {
        (ModelKind::GaussianFit, Method::GroundTruth) => {
            let model = load_gaussian_fit(cfg)?;
            Ok(RunOutcome {
                oracle: Some(oracle(&model, cfg)?),
                ..RunOutcome::default()
            })
        }
        (ModelKind::GaussianFit, _) => run_sampler(&load_gaussian_fit(cfg)?, cfg, flow),
        (ModelKind::Nsi, Method::GroundTruth) => bail!("ground truth exists only for gaussian_fit"),
        (ModelKind::Nsi, _) => run_sampler(&nsi_model(cfg), cfg, flow),
    }
}

fn run_sampler<M: PosteriorModel>(model: &M, cfg: &ExperimentConfig, flow: Option<TrainedFlow>) -> anyhow::Result<RunOutcome> {
    let names = model.parameter_names();
    let flow = match (cfg.method.uses_flow(), flow) {
        (false, _) => None,
        (true, Some(f)) => Some(f),
        (true, None) => Some(obtain_flow(model, cfg)?),
    };
    let target = Unconstrained(model);
    let mut out = RunOutcome::default();
    let start = Instant::now();
    let sampler = match cfg.method {
        Method::Ns => SamplerOutput::Ns(run_ns(&OnCube(model), &ns_config(cfg))?),
        Method::NeutraNs => {
            let f = flow.as_ref().expect("flow obtained above");
            let neutra = NeutraDensity::new(&f.flow, target);
            SamplerOutput::Ns(run_ns(&neutra.on_cube(cfg.latent_scale), &ns_config(cfg))?)
        }
        Method::Nuts => SamplerOutput::Nuts(run_nuts(&target, &nuts_config(cfg))?),
        Method::NeutraNuts => {
            let f = flow.as_ref().expect("flow obtained above");
            SamplerOutput::Nuts(run_nuts(&NeutraDensity::new(&f.flow, target), &nuts_config(cfg))?)
        }
        Method::GroundTruth => unreachable!("handled by execute"),
    };
    let wall = start.elapsed().as_secs_f64();
    let method = cfg.method.as_str();
    let (metrics, n_evals) = match &sampler {
        SamplerOutput::Ns(r) => (assemble_metrics(method, SamplerRun::Ns(r), wall, ns_ess(r)?)?, r.n_likelihood_evals),
        SamplerOutput::Nuts(r) => (assemble_metrics(method, SamplerRun::Nuts(r), wall, nuts_ess(r)?)?, r.n_gradient_evals),
    };
    out.metrics = Some(MetricsRecord {
        metrics,
        time_per_eval_s: wall / n_evals.max(1) as f64,
        train_time_s: flow.as_ref().map(|f| f.train_time_s),
        final_mean_elbo: flow.as_ref().and_then(|f| f.trace.as_ref()).map(|t| t.final_mean_elbo),
    });
    match sampler {
        SamplerOutput::Ns(r) => {
            out.samples = Some(SampleTable {
                names,
                rows: r.samples.clone(),
                weights: Some(r.weights.clone()),
            });
            out.evidence = Some(EvidenceRecord {
                method: method.into(),
                log_z: r.log_z,
                log_z_err: r.log_z_err,
                information: Some(r.information),
                n_live: Some(cfg.n_live),
                n_iterations: Some(r.n_iterations),
            });
            out.ns = Some(r);
        }
        SamplerOutput::Nuts(r) => {
            out.samples = Some(SampleTable {
                names,
                rows: r.chains.concat(),
                weights: None,
            });
            out.nuts = Some(r);
        }
    }
    out.flow = flow;
    Ok(out)
}

enum SamplerOutput {
    Ns(NsRunResult),
    Nuts(NutsRunResult),
}

/// Oracle evidence with its convergence trace, 68%/95% marginal intervals,
/// and the (μ₁, C₁) contour field with a mass self-check.
pub fn oracle(model: &GaussianFit, cfg: &ExperimentConfig) -> anyhow::Result<OracleArtifacts> {
    let grid = QuadratureGrid::new(cfg.oracle_lo, cfg.oracle_hi, cfg.oracle_points)?;
    let result = log_evidence_oracle(model, &grid);
    let names = model.parameter_names();
    let mut intervals = Vec::new();
    for (j, name) in names.iter().enumerate() {
        for mass in [0.68, 0.95] {
            let (lo, hi) = marginal_interval(model, j, mass)?;
            intervals.push(MarginalInterval {
                parameter: name.clone(),
                mass,
                lo,
                hi,
            });
        }
    }
    let field = marginal_contour(model, 0, model.k_groups(), cfg.contour_points, &[0.68, 0.95])?;
    let contour_checks = field
        .levels
        .iter()
        .map(|&(mass, level)| ContourCheck {
            mass,
            level,
            enclosed: field.mass_above(level),
        })
        .collect();
    Ok(OracleArtifacts {
        summary: OracleSummary {
            log_z: result.log_z,
            points_per_dim: grid.points_per_dim,
            lo: grid.lo,
            hi: grid.hi,
            converged: result.converged,
            knee: result.knee,
            intervals,
            contour_checks,
            contour_diagnostics: field.diagnostics.clone(),
        },
        trace_csv: result.trace_csv(),
        contour_csv: field.csv(),
        levels_csv: field.levels_csv(),
    })
}

/// Write every artifact of `outcome` into `dir`; returns the file names.
pub fn write_outcome(dir: &Path, outcome: &RunOutcome) -> anyhow::Result<Vec<String>> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut files = Vec::new();
    let mut record = |name: &str| files.push(name.to_string());
    if let Some(s) = &outcome.samples {
        s.write_csv(&dir.join(output::SAMPLES_FILE))?;
        record(output::SAMPLES_FILE);
    }
    if let Some(m) = &outcome.metrics {
        output::write_json(&dir.join(output::METRICS_FILE), m)?;
        record(output::METRICS_FILE);
    }
    if let Some(f) = &outcome.flow {
        write_flow(&dir.join(output::FLOW_FILE), &f.flow)?;
        record(output::FLOW_FILE);
        if let Some(t) = &f.trace {
            output::write_trace_csv(&dir.join(output::TRACE_FILE), &t.elbo_per_epoch)?;
            record(output::TRACE_FILE);
        }
    }
    if let Some(o) = &outcome.oracle {
        let s = &o.summary;
        let ev = EvidenceRecord {
            method: "ground-truth".into(),
            log_z: s.log_z,
            log_z_err: 0.0,
            information: None,
            n_live: None,
            n_iterations: None,
        };
        output::write_json(&dir.join(output::EVIDENCE_FILE), &ev)?;
        record(output::EVIDENCE_FILE);
        output::write_json(&dir.join("oracle.json"), s)?;
        record("oracle.json");
        for (name, text) in [
            ("trace.csv", &o.trace_csv),
            ("contour.csv", &o.contour_csv),
            ("contour_levels.csv", &o.levels_csv),
        ] {
            std::fs::write(dir.join(name), text)?;
            record(name);
        }
        let mut iv = String::from("parameter,mass,lo,hi\n");
        for i in &s.intervals {
            iv.push_str(&format!("{},{},{},{}\n", i.parameter, format_f64(i.mass), format_f64(i.lo), format_f64(i.hi)));
        }
        std::fs::write(dir.join("intervals.csv"), iv)?;
        record("intervals.csv");
    } else if let Some(e) = &outcome.evidence {
        output::write_json(&dir.join(output::EVIDENCE_FILE), e)?;
        record(output::EVIDENCE_FILE);
    }
    Ok(files)
}

/// Execute, write artifacts and a manifest into the run directory. The
/// manifest is written on failure too, carrying the error record.
pub fn run_and_record(command: &str, cfg: &ExperimentConfig, root: &Path) -> (PathBuf, anyhow::Result<RunOutcome>) {
    let dir = cfg.run_dir(root);
    let mut manifest = Manifest::new(command, cfg);
    let result = execute(cfg).and_then(|o| {
        manifest.files = write_outcome(&dir, &o)?;
        Ok(o)
    });
    finish_manifest(&dir, &mut manifest, result.as_ref().err());
    (dir, result)
}

pub(crate) fn finish_manifest(dir: &Path, manifest: &mut Manifest, error: Option<&anyhow::Error>) {
    manifest.finish(error);
    manifest.files.push(output::MANIFEST_FILE.into());
    if std::fs::create_dir_all(dir).is_ok() {
        let _ = output::write_json(&dir.join(output::MANIFEST_FILE), manifest);
    }
}
