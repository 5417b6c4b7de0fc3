//! Experiment configuration: built-in presets, JSON config files, and flag
//! overrides, merged in that order of increasing precedence.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sigwgan_core::autodiff::AdamConfig;
use sigwgan_core::generator::{GeneratorConfig, OdeStateCoupling};
use sigwgan_core::kalman::LinearSystem;
use sigwgan_core::paths::Partition;
use sigwgan_core::sde::{benchmark_system, SdeSystem};
use sigwgan_core::training::{OptimizerSpec, TrainConfig};
use sigwgan_core::{Error, Result};

/// Preset used when neither `--preset` nor a config file names one.
pub const DEFAULT_PRESET: &str = "eq14-desk";

/// Names accepted by `--preset`.
pub const PRESET_NAMES: [&str; 2] = ["eq14", "eq14-desk"];

/// A fully resolved experiment description. Everything a run depends on is
/// in here; the output directory is deliberately kept outside so that
/// checkpoints written from different directories stay byte-identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Simulated system; "eq14" is the built-in scalar linear benchmark.
    pub system: String,
    /// Final time of the shared knot grid (the grid starts at 0).
    pub t_end: f64,
    /// Number of grid knots, both endpoints included.
    pub knots: usize,
    /// Conditioning time separating observation from generation; must be an
    /// interior grid knot.
    pub s: f64,
    /// Number of training trajectories.
    pub m: usize,
    /// Master seed; every random choice is a substream of it.
    pub seed: u64,
    /// Encoder hidden-state dimension.
    pub encoder_dim: usize,
    /// Hidden width of the two initial-value networks.
    pub init_hidden: usize,
    /// Hidden width of the two vector-field networks.
    pub field_hidden: usize,
    /// Which state the decoder field sees during integration.
    pub coupling: OdeStateCoupling,
    /// Signature truncation depth for features, targets, and the loss.
    pub depth: usize,
    /// Descent epochs; zero writes the initial checkpoint only.
    pub epochs: usize,
    pub batch_size: usize,
    /// Adam learning rate.
    pub lr: f64,
    /// Ridge strength for the feature regression; null picks a scale-aware
    /// default.
    pub ridge: Option<f64>,
    /// Latent draws per training loss evaluation.
    pub mc_samples: usize,
    /// Latent draws behind each evaluation mean path.
    pub eval_mc_samples: usize,
    /// Fraction of trajectories held out from the regression fit.
    pub val_fraction: f64,
    /// Held-out trajectories scored by evaluate; simulated from substreams
    /// m, m+1, ... so they never overlap the training set.
    pub n_test: usize,
    /// How many test trajectories get a plot-ready CSV.
    pub n_plot: usize,
}

/// A resolved run: the experiment plus where its artifacts go.
#[derive(Debug, Clone, PartialEq)]
pub struct Run {
    pub config: RunConfig,
    pub out: PathBuf,
}

/// Flag-style overrides, all optional. [`resolve`] layers these on top of
/// the config file, which in turn sits on top of the preset.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub config: Option<PathBuf>,
    pub preset: Option<String>,
    pub seed: Option<u64>,
    pub m: Option<usize>,
    pub epochs: Option<usize>,
    pub s: Option<f64>,
    pub t_end: Option<f64>,
    pub depth: Option<usize>,
    pub mc_samples: Option<usize>,
    pub out: Option<PathBuf>,
    /// "frozen" or "current".
    pub coupling: Option<String>,
}

fn preset_value(name: &str) -> Result<Value> {
    let mut value = json!({
        "system": "eq14",
        "t_end": 1.0,
        "knots": 101,
        "s": 0.5,
        "seed": 7,
        "encoder_dim": 10,
        "init_hidden": 20,
        "field_hidden": 128,
        "coupling": "current_state",
        "depth": 4,
        "batch_size": 128,
        "lr": 1e-3,
        "ridge": null,
        "mc_samples": 32,
        "eval_mc_samples": 200,
        "val_fraction": 0.1,
        "n_test": 500,
        "n_plot": 8,
    });
    let scale = match name {
        "eq14" => json!({ "m": 20000, "epochs": 50 }),
        "eq14-desk" => json!({ "m": 2000, "epochs": 25 }),
        other => {
            return Err(Error::Invalid(format!(
                "unknown preset {other:?}; available: {}",
                PRESET_NAMES.join(", ")
            )))
        }
    };
    merge(&mut value, scale);
    Ok(value)
}

/// Recursively folds `overlay` into `base`: objects merge key-wise, anything
/// else replaces the base value (including null, so a config file can reset
/// `ridge` to the automatic default).
fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(base_map), Value::Object(overlay_map)) => {
            for (key, value) in overlay_map {
                match base_map.get_mut(&key) {
                    Some(slot) => merge(slot, value),
                    None => {
                        base_map.insert(key, value);
                    }
                }
            }
        }
        (slot, value) => *slot = value,
    }
}

impl Overrides {
    /// The subset of fields that target [`RunConfig`], as a JSON overlay.
    fn config_overlay(&self) -> Result<Value> {
        let mut map = serde_json::Map::new();
        if let Some(seed) = self.seed {
            map.insert("seed".into(), json!(seed));
        }
        if let Some(m) = self.m {
            map.insert("m".into(), json!(m));
        }
        if let Some(epochs) = self.epochs {
            map.insert("epochs".into(), json!(epochs));
        }
        if let Some(s) = self.s {
            map.insert("s".into(), json!(s));
        }
        if let Some(t_end) = self.t_end {
            map.insert("t_end".into(), json!(t_end));
        }
        if let Some(depth) = self.depth {
            map.insert("depth".into(), json!(depth));
        }
        if let Some(mc) = self.mc_samples {
            map.insert("mc_samples".into(), json!(mc));
        }
        if let Some(coupling) = &self.coupling {
            let variant = match coupling.as_str() {
                "frozen" => "frozen_initial_state",
                "current" => "current_state",
                other => {
                    return Err(Error::Invalid(format!(
                        "coupling must be \"frozen\" or \"current\", got {other:?}"
                    )))
                }
            };
            map.insert("coupling".into(), json!(variant));
        }
        Ok(Value::Object(map))
    }
}

/// Builds the effective run from preset defaults, an optional config file,
/// and flag overrides, with later layers winning field by field.
pub fn resolve(overrides: &Overrides) -> Result<Run> {
    let preset = overrides.preset.as_deref().unwrap_or(DEFAULT_PRESET);
    let mut value = preset_value(preset)?;
    let mut out = PathBuf::from("runs").join(preset);

    if let Some(path) = &overrides.config {
        let file = File::open(path)
            .map_err(|e| Error::Invalid(format!("config file {}: {e}", path.display())))?;
        let mut file_value: Value = serde_json::from_reader(BufReader::new(file))?;
        let object = file_value.as_object_mut().ok_or_else(|| {
            Error::Format(format!("config file {} is not a JSON object", path.display()))
        })?;
        if let Some(dir) = object.remove("out") {
            let dir = dir.as_str().ok_or_else(|| {
                Error::Format("config field \"out\" must be a string path".into())
            })?;
            out = PathBuf::from(dir);
        }
        merge(&mut value, file_value);
    }

    merge(&mut value, overrides.config_overlay()?);
    if let Some(dir) = &overrides.out {
        out = dir.clone();
    }

    let config: RunConfig =
        serde_json::from_value(value).map_err(|e| Error::Format(format!("config: {e}")))?;
    config.validate()?;
    Ok(Run { config, out })
}

/// Reads a resolved config back from a checkpoint or a plain JSON file.
pub fn read_config(path: &Path) -> Result<RunConfig> {
    let file = File::open(path)?;
    let config: RunConfig = serde_json::from_reader(BufReader::new(file))?;
    config.validate()?;
    Ok(config)
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.sde_system()?;
        let partition = self.partition()?;
        let idx = partition.index_of(self.s).ok_or_else(|| {
            Error::Invalid(format!(
                "s = {} does not lie on the {}-knot grid over [0, {}]",
                self.s, self.knots, self.t_end
            ))
        })?;
        if idx == 0 || idx + 1 >= partition.len() {
            return Err(Error::Invalid(format!(
                "s = {} must be an interior knot, not an endpoint",
                self.s
            )));
        }
        if self.m < 1 {
            return Err(Error::Invalid("m must be at least 1".into()));
        }
        if self.encoder_dim < 1 || self.init_hidden < 1 || self.field_hidden < 1 {
            return Err(Error::Invalid("network dimensions must be positive".into()));
        }
        if self.depth < 1 {
            return Err(Error::Invalid("depth must be at least 1".into()));
        }
        if self.batch_size < 1 || self.mc_samples < 1 || self.eval_mc_samples < 1 {
            return Err(Error::Invalid(
                "batch_size, mc_samples, and eval_mc_samples must be positive".into(),
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Invalid(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Invalid(format!(
                "val_fraction must lie in (0, 1), got {}",
                self.val_fraction
            )));
        }
        if self.n_test < 1 {
            return Err(Error::Invalid("n_test must be at least 1".into()));
        }
        if self.n_plot > self.n_test {
            return Err(Error::Invalid(format!(
                "n_plot = {} exceeds n_test = {}",
                self.n_plot, self.n_test
            )));
        }
        Ok(())
    }

    pub fn partition(&self) -> Result<Partition> {
        Partition::equidistant(0.0, self.t_end, self.knots)
    }

    pub fn sde_system(&self) -> Result<SdeSystem> {
        match self.system.as_str() {
            "eq14" => Ok(benchmark_system()),
            other => Err(Error::Invalid(format!(
                "unknown system {other:?}; built-in: \"eq14\""
            ))),
        }
    }

    /// The closed-form filter for this system, used as the evaluation
    /// reference. Only the built-in linear benchmark has one.
    pub fn kalman_oracle(&self) -> Result<LinearSystem> {
        match self.system.as_str() {
            "eq14" => Ok(LinearSystem::benchmark(self.partition()?.resolution())),
            other => Err(Error::Invalid(format!(
                "no closed-form filter for system {other:?}"
            ))),
        }
    }

    pub fn generator_config(&self) -> Result<GeneratorConfig> {
        let system = self.sde_system()?;
        Ok(GeneratorConfig {
            obs_dim: system.dim_y,
            state_dim: self.encoder_dim,
            sample_dim: system.dim_x,
            latent_dim: system.dim_x,
            s: self.s,
            partition: self.partition()?,
            enc_init_hidden: vec![self.init_hidden],
            enc_field_hidden: vec![self.field_hidden],
            dec_init_hidden: vec![self.init_hidden],
            dec_field_hidden: vec![self.field_hidden],
            coupling: self.coupling,
        })
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            depth: self.depth,
            s: self.s,
            epochs: self.epochs,
            batch_size: self.batch_size,
            mc_samples: self.mc_samples,
            val_fraction: self.val_fraction,
            ridge: self.ridge,
            optimizer: OptimizerSpec::Adam(AdamConfig { lr: self.lr, ..AdamConfig::default() }),
        }
    }
}
