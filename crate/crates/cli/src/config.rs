//! Run configuration: JSON file, `--set` overrides, `ID3_SEED`.

use std::path::{Path, PathBuf};

use idpdiff::datagen::DatasetConfig;
use idpdiff::diffusion::{Architecture, DiffusionSchedule, LossConfig, OptimConfig, TrainConfig};
use idpdiff::eval::ComparisonConfig;
use idpdiff::sampler::SamplerConfig;
use idpdiff::toyworld::ToyWorld;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

pub const SEED_ENV: &str = "ID3_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldSection {
    pub n: usize,
    pub d: usize,
    pub m_a: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for WorldSection {
    fn default() -> Self {
        WorldSection { n: 2, d: 2, m_a: 4, noise_sigma: 0.05, seed: 39 }
    }
}

impl WorldSection {
    pub fn build(&self) -> Result<ToyWorld, CliError> {
        ToyWorld::build(self.n, self.d, self.m_a, self.noise_sigma, self.seed).map_err(|e| CliError::Config(format!("world: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    #[serde(rename = "T")]
    pub steps: usize,
    pub alpha_min: f64,
    pub alpha_max: f64,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        ScheduleSection { steps: 50, alpha_min: 0.8, alpha_max: 0.99 }
    }
}

impl ScheduleSection {
    pub fn build(&self) -> Result<DiffusionSchedule, CliError> {
        DiffusionSchedule::build(self.steps, self.alpha_min, self.alpha_max).map_err(|e| CliError::Config(format!("schedule: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub seed: u64,
    pub w_attr: f64,
    pub hidden: [usize; 2],
    /// Scale of the output layer at initialization.
    pub init_scale: f64,
    pub init_seed: u64,
    pub eval_size: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let o = OptimConfig::default();
        TrainSection {
            steps: 3000,
            batch: o.batch,
            lr: o.lr,
            betas: o.betas,
            eps: o.eps,
            seed: 0,
            w_attr: 0.0,
            hidden: [64, 64],
            init_scale: 0.1,
            init_seed: 1,
            eval_size: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub checkpoint: PathBuf,
    pub dataset: PathBuf,
    pub reports: PathBuf,
}

impl Default for PathsSection {
    fn default() -> Self {
        PathsSection {
            checkpoint: PathBuf::from("out/model.ckpt"),
            dataset: PathBuf::from("out/dataset.csv"),
            reports: PathBuf::from("out/reports"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub world: WorldSection,
    pub schedule: ScheduleSection,
    pub train: TrainSection,
    pub sampler: SamplerConfig,
    pub datagen: DatasetConfig,
    /// Paired guidance comparison run by `eval --compare-guidance`.
    pub compare: ComparisonConfig,
    pub paths: PathsSection,
}

impl RunConfig {
    pub fn architecture(&self) -> Architecture {
        Architecture::new(self.world.n, self.world.d, self.world.m_a, self.train.hidden)
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            optim: OptimConfig { steps: t.steps, batch: t.batch, lr: t.lr, betas: t.betas, eps: t.eps, seed: t.seed },
            loss: LossConfig { w_attr: t.w_attr, ..LossConfig::default() },
            attr_ranges: self.datagen.attr_ranges,
            eval_size: t.eval_size,
        }
    }

    /// Re-runs every owning module's checks.
    pub fn validate(&self) -> Result<(), CliError> {
        let cfg = |section: &str, e: &dyn std::fmt::Display| CliError::Config(format!("{section}: {e}"));
        self.world.build()?;
        self.schedule.build()?;
        self.architecture().validate().map_err(|e| cfg("train", &e))?;
        let t = self.train_config();
        t.optim.validate().map_err(|e| cfg("train", &e))?;
        t.loss.validate().map_err(|e| cfg("train", &e))?;
        if !(self.train.init_scale.is_finite() && self.train.init_scale >= 0.0) {
            return Err(cfg("train", &format!("init_scale must be finite and >= 0, got {}", self.train.init_scale)));
        }
        if self.train.eval_size == 0 {
            return Err(cfg("train", &"eval_size must be positive"));
        }
        self.sampler.validate().map_err(|e| cfg("sampler", &e))?;
        self.datagen.validate().map_err(|e| cfg("datagen", &e))?;
        let c = &self.compare;
        if c.samples == 0 || c.bootstrap_resamples == 0 {
            return Err(cfg("compare", &"samples and bootstrap_resamples must be positive"));
        }
        if !c.original_weight.is_finite() || c.adjusted_weight.is_some_and(|w| !w.is_finite()) {
            return Err(cfg("compare", &"guidance weights must be finite"));
        }
        c.attr_ranges.validate().map_err(|e| cfg("compare", &e))?;
        Ok(())
    }

    fn set_all_seeds(&mut self, seed: u64) {
        self.world.seed = seed;
        self.train.seed = seed;
        self.train.init_seed = seed;
        self.sampler.seed = seed;
        self.datagen.master_seed = seed;
        self.datagen.tammes.seed = seed;
        self.compare.seed = seed;
    }
}

fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Applies one `section.key=value` override; the value is JSON when it parses, else a string.
fn apply_override(root: &mut Value, spec: &str) -> Result<(), CliError> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("--set expects section.key=value, got {spec:?}")))?;
    let keys: Vec<&str> = path.split('.').collect();
    if keys.len() < 2 || keys.iter().any(|k| k.is_empty()) {
        return Err(CliError::Config(format!("--set key {path:?} must look like section.key")));
    }
    let mut node = root;
    for key in &keys[..keys.len() - 1] {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| CliError::Config(format!("--set {path}: {key} is not inside an object")))?;
        node = obj.entry(key.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    let obj = node.as_object_mut().ok_or_else(|| CliError::Config(format!("--set {path}: parent is not an object")))?;
    obj.insert(keys[keys.len() - 1].to_string(), parse_value(raw));
    Ok(())
}

fn deserialize(value: Value, origin: &str) -> Result<RunConfig, CliError> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        CliError::Config(format!("{origin}: at `{path}`: {}", e.into_inner()))
    })
}

/// Built-in defaults, then the file, then `--set` overrides, then `ID3_SEED`.
pub fn load(file: Option<&Path>, overrides: &[String], seed_env: Option<&str>) -> Result<RunConfig, CliError> {
    let mut value = match file {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
            let parsed: Value = serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: line {}: {e}", path.display(), e.line())))?;
            // Surfaces unknown keys with their path before overrides are applied.
            deserialize(parsed.clone(), &path.display().to_string())?;
            parsed
        }
        None => Value::Object(Default::default()),
    };
    if !value.is_object() {
        return Err(CliError::Config("config root must be a JSON object".into()));
    }
    for spec in overrides {
        apply_override(&mut value, spec)?;
    }
    let mut config = deserialize(value, "config")?;
    if let Some(raw) = seed_env {
        let seed: u64 = raw
            .trim()
            .parse()
            .map_err(|_| CliError::Config(format!("{SEED_ENV}={raw:?} is not an unsigned integer")))?;
        log::warn!("{SEED_ENV}={seed} overrides every seed in the configuration");
        config.set_all_seeds(seed);
    }
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(text: &str) -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        std::fs::write(&path, text).unwrap();
        (dir, path)
    }

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = load(None, &[], None).unwrap();
        assert_eq!(c, RunConfig::default());
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&json).unwrap(), c);
    }

    #[test]
    fn unknown_key_reports_its_path() {
        let (_d, p) = write(r#"{"train": {"lrr": 0.1}}"#);
        let err = load(Some(&p), &[], None).unwrap_err().to_string();
        assert!(err.contains("train.lrr") || err.contains("`train`"), "{err}");
        assert!(err.contains("lrr"), "{err}");
        let err = load(None, &["sampler.gama=0.1".into()], None).unwrap_err().to_string();
        assert!(err.contains("gama"), "{err}");
    }

    #[test]
    fn precedence_is_flags_over_file_over_defaults() {
        let (_d, p) = write(r#"{"train": {"lr": 0.01, "steps": 10}, "datagen": {"N": 3}}"#);
        let c = load(Some(&p), &["train.lr=0.5".into(), "datagen.attr_ranges.age=[10, 20]".into()], None).unwrap();
        assert_eq!(c.train.lr, 0.5);
        assert_eq!(c.train.steps, 10);
        assert_eq!(c.train.batch, TrainSection::default().batch);
        assert_eq!(c.datagen.identities, 3);
        assert_eq!(c.datagen.attr_ranges.age, (10.0, 20.0));
        assert_eq!(c.paths, PathsSection::default());
    }

    #[test]
    fn seed_env_overrides_every_seed() {
        let c = load(None, &["sampler.seed=5".into()], Some("77")).unwrap();
        assert_eq!(
            [c.world.seed, c.train.seed, c.train.init_seed, c.sampler.seed, c.datagen.master_seed, c.datagen.tammes.seed, c.compare.seed],
            [77; 7]
        );
        assert!(matches!(load(None, &[], Some("x")), Err(CliError::Config(_))));
    }

    #[test]
    fn module_constraints_are_rechecked() {
        for bad in ["train.lr=NaN", "train.lr=-1", "schedule.alpha_min=1.5", "datagen.lb=0.9", "world.d=0", "sampler.gamma=0", "train.batch=0"] {
            assert!(matches!(load(None, &[bad.into()], None), Err(CliError::Config(_))), "{bad}");
        }
        for bad in ["nokey", "train=1", ".x=1"] {
            assert!(load(None, &[bad.into()], None).is_err(), "{bad}");
        }
    }

    #[test]
    fn missing_file_names_the_path() {
        let err = load(Some(Path::new("/nonexistent/run.json")), &[], None).unwrap_err().to_string();
        assert!(err.contains("/nonexistent/run.json"), "{err}");
    }
}
