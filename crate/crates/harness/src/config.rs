//! Experiment configuration: per-model defaults, a JSON file, then flags.

use std::fmt;
use std::path::{Path, PathBuf};

use neutra_core::model::{NsiObservation, SurrogateRate};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_ENV: &str = "NEUTRA_OUTPUT_ROOT";
pub const DEFAULT_OUTPUT_ROOT: &str = "runs";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[value(name = "gaussian_fit")]
    GaussianFit,
    #[value(name = "nsi")]
    Nsi,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::GaussianFit => "gaussian_fit",
            ModelKind::Nsi => "nsi",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Ns,
    NeutraNs,
    Nuts,
    NeutraNuts,
    GroundTruth,
}

impl Method {
    pub const SAMPLERS: [Method; 4] = [Method::Ns, Method::NeutraNs, Method::Nuts, Method::NeutraNuts];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Ns => "ns",
            Method::NeutraNs => "neutra-ns",
            Method::Nuts => "nuts",
            Method::NeutraNuts => "neutra-nuts",
            Method::GroundTruth => "ground-truth",
        }
    }

    pub fn uses_flow(self) -> bool {
        matches!(self, Method::NeutraNs | Method::NeutraNuts)
    }

    pub fn is_nested(self) -> bool {
        matches!(self, Method::Ns | Method::NeutraNs)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A configuration the user got wrong; the CLI exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Fully resolved settings for one run. A manifest stores this verbatim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelKind,
    pub method: Method,
    pub seed: u64,

    /// Gaussian-fit data file; the bundled reference set when absent.
    pub dataset: Option<PathBuf>,
    /// Generate standard-normal data with this seed instead of reading a file.
    pub data_seed: Option<u64>,
    pub groups: usize,
    pub obs_per_group: usize,
    pub nsi_observation: NsiObservation,
    pub surrogate: SurrogateRate,

    pub n_live: usize,
    pub frac_remain: f64,

    pub chains: usize,
    pub warmup: usize,
    pub samples: usize,
    pub target_accept: Option<f64>,
    pub step_size: Option<f64>,
    pub max_depth: usize,

    pub flow_stacks: usize,
    pub flow_hidden: Vec<usize>,
    pub epochs: usize,
    pub batch: usize,
    pub learning_rate: f64,
    pub final_learning_rate: f64,
    pub init_scale: f64,
    /// Scale s of the logistic map z = s·logit(u) for NeuTra–NS.
    pub latent_scale: f64,
    /// Load this flow instead of training one.
    pub flow_weights: Option<PathBuf>,

    pub oracle_points: usize,
    pub oracle_lo: f64,
    pub oracle_hi: f64,
    pub contour_points: usize,

    /// Run directory; `<output root>/<model>_<method>_seed<seed>` when absent.
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn defaults(model: ModelKind, method: Method) -> Self {
        let neutra = method.uses_flow();
        let mut c = Self {
            model,
            method,
            seed: 0,
            dataset: None,
            data_seed: None,
            groups: 3,
            obs_per_group: 2,
            nsi_observation: NsiObservation::default(),
            surrogate: SurrogateRate::default(),
            n_live: if neutra { 2000 } else { 1600 },
            frac_remain: 0.01,
            chains: 4,
            warmup: 3000,
            samples: 5000,
            target_accept: Some(0.8),
            step_size: None,
            max_depth: 10,
            flow_stacks: 2,
            flow_hidden: vec![4, 4],
            epochs: 5000,
            batch: 30,
            learning_rate: 1e-2,
            final_learning_rate: 1e-3,
            init_scale: neutra_core::flow::DEFAULT_INIT_SCALE,
            latent_scale: 3.0,
            flow_weights: None,
            oracle_points: 241,
            oracle_lo: -50.0,
            oracle_hi: 50.0,
            contour_points: 301,
            output_dir: None,
        };
        if model == ModelKind::Nsi {
            c.n_live = if neutra { 800 } else { 1200 };
            c.frac_remain = 0.02;
            c.chains = 20;
            c.warmup = 2000;
            c.target_accept = None;
            c.step_size = Some(if neutra { 0.12 } else { 0.06 });
            c.flow_stacks = 3;
            c.flow_hidden = vec![10, 10];
            c.epochs = 10_000;
        }
        c
    }

    /// Merge `file` then `flags` over the defaults for the selected model and
    /// method. Each layer is a JSON object; a manifest is accepted as a file
    /// and its recorded config is used.
    pub fn resolve(file: Option<Value>, flags: Value) -> anyhow::Result<Self> {
        let file = match file {
            None => Map::new(),
            Some(Value::Object(mut m)) => match m.remove("config") {
                Some(Value::Object(inner)) if m.contains_key("code_version") => inner,
                Some(other) => {
                    m.insert("config".into(), other);
                    m
                }
                None => m,
            },
            Some(_) => return Err(usage("config file must hold a JSON object")),
        };
        let flags = match flags {
            Value::Object(m) => m,
            Value::Null => Map::new(),
            _ => return Err(usage("flag overrides must form a JSON object")),
        };
        let pick = |key: &str| flags.get(key).or_else(|| file.get(key)).cloned();
        let model: ModelKind = match pick("model") {
            Some(v) => serde_json::from_value(v).map_err(|e| usage(format!("model: {e}")))?,
            None => ModelKind::GaussianFit,
        };
        let method: Method = match pick("method") {
            Some(v) => serde_json::from_value(v).map_err(|e| usage(format!("method: {e}")))?,
            None => Method::Ns,
        };
        let Value::Object(mut merged) = serde_json::to_value(Self::defaults(model, method))? else {
            unreachable!("config serializes to an object")
        };
        apply_layer(&mut merged, &file, "config file")?;
        apply_layer(&mut merged, &flags, "command line")?;
        let cfg: Self = serde_json::from_value(Value::Object(merged)).map_err(|e| usage(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file_and_flags(path: Option<&Path>, flags: Value) -> anyhow::Result<Self> {
        let file = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| usage(format!("{}: {e}", p.display())))?;
                Some(serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", p.display())))?)
            }
            None => None,
        };
        Self::resolve(file, flags)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        let check = |ok: bool, msg: &str| if ok { Ok(()) } else { Err(usage(msg)) };
        if self.target_accept.is_some() && self.step_size.is_some() {
            return Err(usage("step_size and target_accept are mutually exclusive"));
        }
        check(self.target_accept.is_some() || self.step_size.is_some(), "one of step_size or target_accept is required")?;
        if let Some(t) = self.target_accept {
            check(t > 0.0 && t < 1.0, "target_accept must lie in (0, 1)")?;
        }
        if let Some(e) = self.step_size {
            check(e > 0.0 && e.is_finite(), "step_size must be positive")?;
        }
        check(self.n_live >= 2, "n_live must be at least 2")?;
        check(self.frac_remain > 0.0 && self.frac_remain < 1.0, "frac_remain must lie in (0, 1)")?;
        check(self.chains >= 1, "chains must be at least 1")?;
        check(self.samples >= 1, "samples must be at least 1")?;
        check(self.max_depth >= 1, "max_depth must be at least 1")?;
        check(self.flow_stacks >= 1, "flow_stacks must be at least 1")?;
        check(!self.flow_hidden.is_empty() && self.flow_hidden.iter().all(|&h| h >= 1), "flow_hidden needs positive widths")?;
        check(self.epochs >= 1, "epochs must be at least 1")?;
        check(self.batch >= 1, "batch must be at least 1")?;
        check(self.learning_rate > 0.0 && self.final_learning_rate > 0.0, "learning rates must be positive")?;
        check(self.init_scale > 0.0, "init_scale must be positive")?;
        check(self.latent_scale > 0.0 && self.latent_scale.is_finite(), "latent_scale must be positive")?;
        check(self.groups >= 1 && self.obs_per_group >= 1, "groups and obs_per_group must be positive")?;
        check(self.oracle_points >= 2, "oracle_points must be at least 2")?;
        check(self.oracle_lo < self.oracle_hi, "oracle_lo must be below oracle_hi")?;
        check(self.contour_points >= 2, "contour_points must be at least 2")?;
        if self.method == Method::GroundTruth {
            check(self.model == ModelKind::GaussianFit, "ground truth exists only for gaussian_fit")?;
        }
        Ok(())
    }

    pub fn run_name(&self) -> String {
        format!("{}_{}_seed{}", self.model.as_str(), self.method.as_str(), self.seed)
    }

    /// Explicit `output_dir`, else a named directory below `root`.
    pub fn run_dir(&self, root: &Path) -> PathBuf {
        self.output_dir.clone().unwrap_or_else(|| root.join(self.run_name()))
    }
}

/// `--output-root`, else the environment variable, else `runs`.
pub fn output_root(flag: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_ROOT))
}

/// Setting one of step_size / target_accept clears the other from lower
/// layers; setting both in one layer is an error.
fn apply_layer(base: &mut Map<String, Value>, layer: &Map<String, Value>, origin: &str) -> anyhow::Result<()> {
    let set = |k: &str| layer.get(k).is_some_and(|v| !v.is_null());
    if set("step_size") && set("target_accept") {
        return Err(usage(format!("{origin}: step_size and target_accept are mutually exclusive")));
    }
    if set("step_size") {
        base.insert("target_accept".into(), Value::Null);
    }
    if set("target_accept") {
        base.insert("step_size".into(), Value::Null);
    }
    for (k, v) in layer {
        if !base.contains_key(k) {
            return Err(usage(format!("{origin}: unknown setting `{k}`")));
        }
        base.insert(k.clone(), v.clone());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn flags_override_file() {
        let cfg = ExperimentConfig::resolve(Some(json!({"n_live": 100, "seed": 3})), json!({"n_live": 200})).unwrap();
        assert_eq!(cfg.n_live, 200);
        assert_eq!(cfg.seed, 3);
    }

    #[test]
    fn nsi_defaults_follow_method() {
        let a = ExperimentConfig::defaults(ModelKind::Nsi, Method::Nuts);
        let b = ExperimentConfig::defaults(ModelKind::Nsi, Method::NeutraNuts);
        assert_eq!((a.step_size, b.step_size), (Some(0.06), Some(0.12)));
        assert_eq!((a.chains, a.warmup, a.samples), (20, 2000, 5000));
    }

    #[test]
    fn step_size_replaces_default_target() {
        let cfg = ExperimentConfig::resolve(None, json!({"method": "nuts", "step_size": 0.1})).unwrap();
        assert_eq!((cfg.step_size, cfg.target_accept), (Some(0.1), None));
    }

    #[test]
    fn both_step_controls_in_one_layer_fail() {
        let err = ExperimentConfig::resolve(Some(json!({"step_size": 0.1, "target_accept": 0.8})), json!({})).unwrap_err();
        assert!(err.downcast_ref::<UsageError>().is_some());
    }

    #[test]
    fn unknown_keys_fail() {
        assert!(ExperimentConfig::resolve(Some(json!({"nlive": 5})), json!({})).is_err());
    }

    #[test]
    fn manifest_config_is_unwrapped() {
        let inner = serde_json::to_value(ExperimentConfig::defaults(ModelKind::GaussianFit, Method::Nuts)).unwrap();
        let manifest = json!({"code_version": "x", "config": inner});
        let cfg = ExperimentConfig::resolve(Some(manifest), json!({})).unwrap();
        assert_eq!(cfg, ExperimentConfig::defaults(ModelKind::GaussianFit, Method::Nuts));
    }
}
