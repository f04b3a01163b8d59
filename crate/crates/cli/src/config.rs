//! Pipeline configuration: defaults, TOML/JSON files, dotted overrides and
//! the resolved snapshot written next to every output.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clothrecon_core::body_model::TemplateConfig;
use clothrecon_core::datagen::{derive_seed, DatagenConfig};
use clothrecon_core::implicit_net::{AdamConfig, MlpSpec};
use clothrecon_core::metrics::MetricConfig;
use clothrecon_core::refine::RefineConfig;
use clothrecon_core::surface::GridMode;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

/// Keys whose default values are taken from the published method rather
/// than chosen for this implementation.
pub const PUBLISHED_KEYS: &[&str] = &[
    "datagen.raster",
    "datagen.yaw_step_deg",
    "reconstruct.resolution",
    "refine.iterations",
    "refine.lambda_n",
    "refine.lambda_s",
    "train.adam.lr",
    "train.net.skip_layers",
    "train.net.widths",
];

/// Snapshot table recording where each value came from.
pub const PROVENANCE_TABLE: &str = "provenance";

#[derive(Debug, thiserror::Error)]
#[error("configuration error: {0}")]
pub struct ConfigError(pub String);

fn config_err(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub dataset: PathBuf,
    pub weights: PathBuf,
    pub output: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            dataset: "data".into(),
            weights: "out/weights.bin".into(),
            output: "out".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    pub net: MlpSpec,
    pub adam: AdamConfig,
    pub steps: u64,
    pub batch_size: usize,
    pub log_every: u64,
    /// Validation interval in steps; 0 turns validation and early stopping off.
    pub eval_every: u64,
    pub patience: usize,
    pub min_delta: f64,
    /// Near-surface and uniform training points per view.
    pub surface_points: usize,
    pub uniform_points: usize,
    /// Near-surface jitter as a fraction of body height.
    pub sigma: f64,
    /// Evenly spaced views used per scan.
    pub views_per_scan: usize,
    /// Clamp on the signed-distance feature as a fraction of body height.
    pub sdf_clamp: Option<f64>,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            net: MlpSpec::default(),
            adam: AdamConfig::default(),
            steps: 2000,
            batch_size: 512,
            log_every: 100,
            eval_every: 200,
            patience: 5,
            min_delta: 1e-5,
            surface_points: 4000,
            uniform_points: 4000,
            sigma: 0.05,
            views_per_scan: 4,
            sdf_clamp: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReconstructSection {
    pub resolution: usize,
    pub mode: GridMode,
}

impl Default for ReconstructSection {
    fn default() -> Self {
        Self {
            resolution: 256,
            mode: GridMode::Octree,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineSection {
    #[serde(flatten)]
    pub optimizer: RefineConfig,
    /// Pose noise applied to the ground-truth parameters before refining.
    pub noise_theta: f64,
    pub noise_beta: f64,
    /// Render size for the refinement loss.
    pub raster: usize,
    pub rounds: usize,
}

impl Default for RefineSection {
    fn default() -> Self {
        Self {
            optimizer: RefineConfig::default(),
            noise_theta: 0.1,
            noise_beta: 0.0,
            raster: 128,
            rounds: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluateSection {
    #[serde(flatten)]
    pub metrics: MetricConfig,
    pub views_per_scan: usize,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        Self {
            metrics: MetricConfig::default(),
            views_per_scan: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[derive(Default)]
pub struct PipelineConfig {
    /// Master seed; every stage derives its own stream from it.
    pub seed: u64,
    pub paths: Paths,
    pub template: TemplateConfig,
    pub datagen: DatagenConfig,
    pub train: TrainSection,
    pub reconstruct: ReconstructSection,
    pub refine: RefineSection,
    pub evaluate: EvaluateSection,
}


/// Seed streams per pipeline stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    TrainPoints = 1,
    NetInit = 2,
    Minibatch = 3,
    Refine = 4,
    Evaluate = 5,
}

impl PipelineConfig {
    pub fn stream_seed(&self, stream: Stream) -> u64 {
        derive_seed(self.seed, stream as u64)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let core = |r: clothrecon_core::Result<()>| r.map_err(|e| config_err(e.to_string()));
        if self.seed > i64::MAX as u64 {
            return Err(config_err(format!("seed {} exceeds {}", self.seed, i64::MAX)));
        }
        core(self.datagen.validate())?;
        core(self.train.net.validate())?;
        core(self.refine.optimizer.validate())?;
        let t = &self.train;
        if t.steps == 0 || t.batch_size == 0 || t.log_every == 0 {
            return Err(config_err("train.steps, train.batch_size and train.log_every must be positive"));
        }
        if t.surface_points + t.uniform_points == 0 || t.views_per_scan == 0 {
            return Err(config_err("training needs points and at least one view per scan"));
        }
        if !(t.sigma >= 0.0) || !(t.adam.lr > 0.0) {
            return Err(config_err("train.sigma must be >= 0 and train.adam.lr > 0"));
        }
        if t.net.input_dim() != clothrecon_core::features::FEATURE_DIM {
            return Err(config_err(format!(
                "train.net.widths must start with {}",
                clothrecon_core::features::FEATURE_DIM
            )));
        }
        let r = &self.reconstruct;
        if r.resolution == 0 || (r.mode == GridMode::Octree && !r.resolution.is_power_of_two()) {
            return Err(config_err(format!(
                "reconstruct.resolution {} must be a positive power of two in octree mode",
                r.resolution
            )));
        }
        if self.refine.raster == 0 || self.refine.rounds == 0 {
            return Err(config_err("refine.raster and refine.rounds must be positive"));
        }
        if !(self.refine.noise_theta >= 0.0 && self.refine.noise_beta >= 0.0) {
            return Err(config_err("refinement noise must be >= 0"));
        }
        if self.evaluate.views_per_scan == 0 || self.evaluate.metrics.n_samples == 0 {
            return Err(config_err("evaluate.views_per_scan and evaluate.n_samples must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    /// Default taken from the published method.
    Published,
    /// Default chosen by this implementation.
    Default,
    File,
    Override,
    /// Command-line flag such as `--seed`.
    Flag,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub config: PipelineConfig,
    /// Origin of every leaf value, by dotted key.
    pub provenance: BTreeMap<String, Source>,
}

/// Reads a TOML or JSON config (by extension; anything but `.json` is
/// TOML). A provenance table from an earlier snapshot is ignored.
pub fn read_config_file(path: &Path) -> Result<Table, ConfigError> {
    let text = fs::read_to_string(path).map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
    let mut table: Table = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        let json: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        match Value::try_from(json) {
            Ok(Value::Table(t)) => t,
            Ok(_) => return Err(config_err(format!("{}: top level must be an object", path.display()))),
            Err(e) => return Err(config_err(format!("{}: {e}", path.display()))),
        }
    } else {
        toml::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))?
    };
    table.remove(PROVENANCE_TABLE);
    Ok(table)
}

/// Splits `a.b.c=value`; the value is parsed as a TOML literal and falls
/// back to a plain string.
pub fn parse_override(raw: &str) -> Result<(String, Value), ConfigError> {
    let (key, value) = raw
        .split_once('=')
        .ok_or_else(|| config_err(format!("override `{raw}` is not key=value")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(config_err(format!("override `{raw}` has an empty key segment")));
    }
    let value = value.trim();
    let parsed = toml::from_str::<Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(value.to_string()));
    Ok((key.to_string(), parsed))
}

fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn set_path(table: &mut Table, key: &str, value: Value) -> Result<(), ConfigError> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("split yields one part");
    let mut cur = table;
    for p in parts {
        let entry = cur.entry(p).or_insert_with(|| Value::Table(Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| config_err(format!("`{key}`: `{p}` is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

fn get_path<'a>(table: &'a Table, key: &str) -> Option<&'a Value> {
    let mut parts = key.split('.');
    let mut cur = table.get(parts.next()?)?;
    for p in parts {
        cur = cur.as_table()?.get(p)?;
    }
    Some(cur)
}

fn leaf_keys(table: &Table, prefix: &str, out: &mut Vec<String>) {
    for (k, v) in table {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match v {
            Value::Table(t) => leaf_keys(t, &key, out),
            _ => out.push(key),
        }
    }
}

fn to_table(cfg: &PipelineConfig) -> Result<Table, ConfigError> {
    match Value::try_from(cfg) {
        Ok(Value::Table(t)) => Ok(t),
        Ok(_) => unreachable!("config serializes to a table"),
        Err(e) => Err(config_err(format!("cannot serialize configuration: {e}"))),
    }
}

/// Defaults, then the file, then overrides, then `--seed`. Keys that do not
/// name a configuration field are rejected.
pub fn resolve(file: Option<&Path>, seed: Option<u64>, overrides: &[String]) -> Result<Resolved, ConfigError> {
    let mut merged = to_table(&PipelineConfig::default())?;
    let mut file_keys = Vec::new();
    if let Some(path) = file {
        let user = read_config_file(path)?;
        leaf_keys(&user, "", &mut file_keys);
        merge(&mut merged, user);
    }
    let mut override_keys = Vec::new();
    for raw in overrides {
        let (key, value) = parse_override(raw)?;
        set_path(&mut merged, &key, value)?;
        override_keys.push(key);
    }
    if let Some(s) = seed {
        let s = i64::try_from(s).map_err(|_| config_err(format!("seed {s} exceeds {}", i64::MAX)))?;
        merged.insert("seed".into(), Value::Integer(s));
    }
    let mut config: PipelineConfig = Value::Table(merged)
        .try_into()
        .map_err(|e| config_err(format!("{e}")))?;
    config.datagen.seed = config.seed;
    config.validate()?;

    let resolved = to_table(&config)?;
    for key in file_keys.iter().chain(&override_keys) {
        if get_path(&resolved, key).is_none() {
            return Err(config_err(format!("unknown configuration key `{key}`")));
        }
    }
    let mut all = Vec::new();
    leaf_keys(&resolved, "", &mut all);
    let provenance = all
        .into_iter()
        .map(|key| {
            let source = if key == "seed" && seed.is_some() {
                Source::Flag
            } else if key == "datagen.seed" {
                // mirrors the master seed
                if seed.is_some() {
                    Source::Flag
                } else if override_keys.iter().any(|k| k == "seed") {
                    Source::Override
                } else if file_keys.iter().any(|k| k == "seed") {
                    Source::File
                } else {
                    Source::Default
                }
            } else if override_keys.contains(&key) {
                Source::Override
            } else if file_keys.contains(&key) {
                Source::File
            } else if PUBLISHED_KEYS.contains(&key.as_str()) {
                Source::Published
            } else {
                Source::Default
            };
            (key, source)
        })
        .collect();
    Ok(Resolved { config, provenance })
}

impl Resolved {
    /// TOML snapshot: the full configuration plus a provenance table. It can
    /// be fed back through `--config` to replay a run.
    pub fn to_toml(&self) -> Result<String, ConfigError> {
        let mut table = to_table(&self.config)?;
        let prov: Table = self
            .provenance
            .iter()
            .map(|(k, s)| {
                let name = match s {
                    Source::Published => "published",
                    Source::Default => "default",
                    Source::File => "file",
                    Source::Override => "override",
                    Source::Flag => "flag",
                };
                (k.clone(), Value::String(name.into()))
            })
            .collect();
        table.insert(PROVENANCE_TABLE.into(), Value::Table(prov));
        toml::to_string_pretty(&table).map_err(|e| config_err(format!("cannot write snapshot: {e}")))
    }

    pub fn write(&self, path: &Path) -> anyhow::Result<()> {
        use anyhow::Context;
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        fs::write(path, self.to_toml()?).with_context(|| format!("writing {}", path.display()))
    }
}
