//! Command-line interface.

use std::path::{Path, PathBuf};

use anyhow::bail;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::bench::{run_bench, table_csv};
use crate::config::{output_root, ExperimentConfig, Method, ModelKind, OUTPUT_ROOT_ENV};
use crate::corner::{corner, load_artifact, write_bundle};
use crate::output::{self, Manifest};
use crate::pipeline::{self, finish_manifest, run_and_record};

#[derive(Debug, Parser)]
#[command(name = "neutra", version, about = "Nested sampling and NUTS with neural-transport reparameterization")]
pub struct Cli {
    /// Directory that holds run directories unless --output-dir is given.
    #[arg(long, global = true, env = OUTPUT_ROOT_ENV)]
    pub output_root: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one sampler and write samples, metrics, evidence and a manifest.
    Run(Overrides),
    /// Repeat each method and aggregate a cost-per-ESS table.
    Bench(BenchArgs),
    /// Evidence oracle trace, marginal intervals and contour field.
    GroundTruth(Overrides),
    /// Plot data from one or more run directories or samples files.
    Corner(CornerArgs),
    /// Train a flow and write its weights and ELBO trace.
    TrainFlow(Overrides),
}

/// Settings that override the config file. Field names match config keys.
#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct Overrides {
    /// JSON config file or a previous run's manifest.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelKind>,
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<Method>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data_seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub groups: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub obs_per_group: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_live: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frac_remain: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chains: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warmup: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[arg(long, conflicts_with = "step_size")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_accept: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step_size: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_depth: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flow_stacks: Option<usize>,
    /// Comma-separated hidden block widths, e.g. 4,4.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flow_hidden: Option<Vec<usize>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_learning_rate: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub init_scale: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub latent_scale: Option<f64>,
    /// Reuse a trained flow instead of training.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flow_weights: Option<PathBuf>,
    #[arg(long, alias = "points-per-dim")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_points: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_lo: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_hi: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub contour_points: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl Overrides {
    pub fn resolve(&self) -> anyhow::Result<ExperimentConfig> {
        ExperimentConfig::from_file_and_flags(self.config.as_deref(), serde_json::to_value(self)?)
    }
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub overrides: Overrides,
    /// Repetitions per method; 4 for gaussian_fit and 6 for nsi by default.
    #[arg(long)]
    pub reps: Option<usize>,
    /// Comma-separated methods; all four samplers by default.
    #[arg(long, value_enum, value_delimiter = ',')]
    pub methods: Option<Vec<Method>>,
}

#[derive(Debug, Clone, Args)]
pub struct CornerArgs {
    /// Run directories or samples CSV files.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long, default_value_t = 40)]
    pub bins: usize,
    #[arg(long, default_value_t = 30)]
    pub bins_2d: usize,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let root = output_root(cli.output_root.as_deref());
    match cli.command {
        Command::Run(o) => cmd_run(&o.resolve()?, &root, "run"),
        Command::GroundTruth(mut o) => {
            o.method = Some(Method::GroundTruth);
            cmd_run(&o.resolve()?, &root, "ground-truth")
        }
        Command::Bench(b) => cmd_bench(&b, &root),
        Command::Corner(c) => cmd_corner(&c, &root),
        Command::TrainFlow(mut o) => {
            if o.method.is_none() {
                o.method = Some(Method::NeutraNuts);
            }
            cmd_train_flow(&o.resolve()?, &root)
        }
    }
}

fn cmd_run(cfg: &ExperimentConfig, root: &Path, command: &str) -> anyhow::Result<()> {
    let (dir, result) = run_and_record(command, cfg, root);
    let outcome = result?;
    println!("{}", dir.display());
    if let Some(e) = &outcome.evidence {
        println!("log_z = {:.6} ± {:.6}", e.log_z, e.log_z_err);
    }
    if let Some(o) = &outcome.oracle {
        let s = &o.summary;
        println!("log_z = {:.6} (converged: {}, knee: {:?})", s.log_z, s.converged, s.knee);
    }
    if let Some(m) = &outcome.metrics {
        println!("ess = {:.1}, evals/ess = {:.3}", m.metrics.ess, m.metrics.evals_per_ess);
        if let Some(d) = m.metrics.n_divergences {
            println!("divergences = {d}");
        }
    }
    Ok(())
}

fn cmd_bench(args: &BenchArgs, root: &Path) -> anyhow::Result<()> {
    let base = args.overrides.resolve()?;
    let reps = args.reps.unwrap_or(match base.model {
        ModelKind::GaussianFit => 4,
        ModelKind::Nsi => 6,
    });
    let methods = args.methods.clone().unwrap_or_else(|| Method::SAMPLERS.to_vec());
    if methods.contains(&Method::GroundTruth) {
        bail!(crate::config::UsageError("bench runs samplers only".into()));
    }
    let dir = base.output_dir.clone().unwrap_or_else(|| root.join(format!("bench_{}", base.model.as_str())));
    let report = run_bench(&base, &methods, reps, &dir)?;
    print!("{}", table_csv(&report.rows)?);
    Ok(())
}

fn cmd_corner(args: &CornerArgs, root: &Path) -> anyhow::Result<()> {
    let mut inputs = args.inputs.iter().map(|p| load_artifact(p)).collect::<anyhow::Result<Vec<_>>>()?;
    let labels: Vec<String> = inputs.iter().map(|x| x.label.clone()).collect();
    for (i, inp) in inputs.iter_mut().enumerate() {
        if labels.iter().filter(|l| **l == inp.label).count() > 1 {
            inp.label = format!("{}_{i}", inp.label);
        }
    }
    let bundle = corner(&inputs, args.bins, args.bins_2d)?;
    let dir = args.output_dir.clone().unwrap_or_else(|| root.join("corner"));
    write_bundle(&dir, &bundle)?;
    println!("{}", dir.display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct TrainingSummary {
    final_mean_elbo: f64,
    epochs: usize,
    batch: usize,
    n_params: usize,
    train_time_s: f64,
}

fn cmd_train_flow(cfg: &ExperimentConfig, root: &Path) -> anyhow::Result<()> {
    let dir = cfg
        .output_dir
        .clone()
        .unwrap_or_else(|| root.join(format!("{}_flow_seed{}", cfg.model.as_str(), cfg.seed)));
    let mut manifest = Manifest::new("train-flow", cfg);
    let result = (|| -> anyhow::Result<f64> {
        let trained = pipeline::train_only(cfg)?;
        let Some(trace) = &trained.trace else {
            bail!("train-flow needs training; unset flow_weights");
        };
        std::fs::create_dir_all(&dir)?;
        pipeline::write_flow(&dir.join(output::FLOW_FILE), &trained.flow)?;
        output::write_trace_csv(&dir.join(output::TRACE_FILE), &trace.elbo_per_epoch)?;
        let summary = TrainingSummary {
            final_mean_elbo: trace.final_mean_elbo,
            epochs: cfg.epochs,
            batch: cfg.batch,
            n_params: trained.flow.n_params(),
            train_time_s: trained.train_time_s,
        };
        output::write_json(&dir.join("training.json"), &summary)?;
        manifest.files = vec![output::FLOW_FILE.into(), output::TRACE_FILE.into(), "training.json".into()];
        Ok(trace.final_mean_elbo)
    })();
    finish_manifest(&dir, &mut manifest, result.as_ref().err());
    let elbo = result?;
    println!("{}", dir.display());
    println!("final_mean_elbo = {elbo:.6}");
    Ok(())
}
