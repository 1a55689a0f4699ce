//! Run configuration: defaults, JSON loading, dot-path overrides and
//! validation.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::field::Architecture;
use crate::scenes::{builtin, AnalyticScene, CameraRig};

/// Training views and their resolution for generated datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Load this dataset directory instead of generating one.
    pub path: Option<PathBuf>,
    pub train_views: usize,
    pub test_views: usize,
    pub width: usize,
    pub height: usize,
    pub n_dense: usize,
    /// Camera rig; the scene's default rig when absent.
    pub rig: Option<CameraRig>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            path: None,
            train_views: 4,
            test_views: 2,
            width: 48,
            height: 48,
            n_dense: 1024,
            rig: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_rays: usize,
    pub nodes: usize,
    /// Latent samples `K` per step.
    pub samples: usize,
    /// Entropy draws `M` per step.
    pub entropy_samples: usize,
    pub entropy_weight: f64,
    pub depth_weight: f64,
    pub bandwidth: f64,
    /// Learning rate at step 0, decayed exponentially to `lr_final`.
    pub lr: f64,
    pub lr_final: f64,
    pub checkpoint_every: usize,
    pub stratified: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_rays: 512,
            nodes: 128,
            samples: 32,
            entropy_samples: 128,
            entropy_weight: 0.01,
            depth_weight: 1e-2,
            bandwidth: 0.05,
            lr: 5e-4,
            lr_final: 5e-5,
            checkpoint_every: 1000,
            stratified: true,
        }
    }
}

impl TrainConfig {
    /// Learning rate before update `step` of `total`.
    pub fn lr_at(&self, step: usize, total: usize) -> f64 {
        if total == 0 {
            return self.lr;
        }
        let frac = step as f64 / total as f64;
        self.lr * (self.lr_final / self.lr).powf(frac)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderConfig {
    pub samples: usize,
    pub nodes: usize,
    /// Rays per graph.
    pub chunk: usize,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            samples: 32,
            nodes: 128,
            chunk: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Built-in scene name or path to a scene JSON file.
    pub scene: String,
    pub seed: u64,
    pub steps: usize,
    pub out_dir: PathBuf,
    pub data: DataConfig,
    pub model: Architecture,
    pub train: TrainConfig,
    pub render: RenderConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scene: "two-sphere".into(),
            seed: 0,
            steps: 10_000,
            out_dir: PathBuf::from("runs/default"),
            data: DataConfig::default(),
            model: Architecture::default(),
            train: TrainConfig::default(),
            render: RenderConfig::default(),
        }
    }
}

/// Full-scale training length, recorded next to the desk-scale step count.
pub const FULL_SCALE_STEPS: &str = "100000-200000";

/// Name of the effective config written into the output directory.
pub const EFFECTIVE_CONFIG: &str = "config.json";

fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(vec![e.to_string()]))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(p) => Error::Config(
                p.into_iter()
                    .map(|m| format!("{}: {m}", path.display()))
                    .collect(),
            ),
            other => other,
        })
    }

    /// Apply `key=value` overrides, where `key` is a dot path such as
    /// `train.batch_rays` and `value` is JSON (bare words are strings).
    /// Every bad override is reported.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut root = serde_json::to_value(self).expect("config serializes");
        let mut problems = Vec::new();
        for raw in overrides {
            let raw = raw.as_ref();
            let Some((key, value)) = raw.split_once('=') else {
                problems.push(format!("override `{raw}` is not key=value"));
                continue;
            };
            let pointer = format!("/{}", key.trim().replace('.', "/"));
            match root.pointer_mut(&pointer) {
                Some(slot) => *slot = parse_value(value.trim()),
                None => problems.push(format!("unknown config key `{}`", key.trim())),
            }
        }
        if !problems.is_empty() {
            return Err(Error::Config(problems));
        }
        serde_json::from_value(root)
            .map_err(|e| Error::Config(vec![format!("after overrides: {e}")]))
    }

    /// Resolve the scene description.
    pub fn scene(&self) -> Result<AnalyticScene> {
        if let Some(s) = builtin(&self.scene) {
            return Ok(s);
        }
        let path = Path::new(&self.scene);
        if path.exists() {
            return AnalyticScene::load(path);
        }
        Err(Error::Config(vec![format!(
            "scene `{}` is neither a built-in (two-sphere, occlusion) nor an existing file",
            self.scene
        )]))
    }

    pub fn rig(&self) -> CameraRig {
        self.data
            .rig
            .clone()
            .unwrap_or_else(|| CameraRig::for_builtin(&self.scene))
    }

    /// Check every field, reporting all problems at once.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let counts = [
            ("data.train_views", self.data.train_views),
            ("data.test_views", self.data.test_views),
            ("data.width", self.data.width),
            ("data.height", self.data.height),
            ("train.batch_rays", self.train.batch_rays),
            ("train.samples", self.train.samples),
            ("train.entropy_samples", self.train.entropy_samples),
            ("train.checkpoint_every", self.train.checkpoint_every),
            ("render.samples", self.render.samples),
            ("render.chunk", self.render.chunk),
        ];
        for (name, v) in counts {
            if v == 0 {
                problems.push(format!("{name} must be >= 1"));
            }
        }
        for (name, v) in [
            ("train.nodes", self.train.nodes),
            ("render.nodes", self.render.nodes),
        ] {
            if v < 2 {
                problems.push(format!("{name} must be >= 2"));
            }
        }
        if self.data.n_dense < 1024 {
            problems.push("data.n_dense must be >= 1024".into());
        }
        for (name, v) in [
            ("train.entropy_weight", self.train.entropy_weight),
            ("train.depth_weight", self.train.depth_weight),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                problems.push(format!("{name} must be finite and >= 0"));
            }
        }
        for (name, v) in [
            ("train.bandwidth", self.train.bandwidth),
            ("train.lr", self.train.lr),
            ("train.lr_final", self.train.lr_final),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                problems.push(format!("{name} must be finite and > 0"));
            }
        }
        if let Err(Error::Config(p)) = self.model.validate() {
            problems.extend(p.into_iter().map(|m| format!("model: {m}")));
        }
        match self.scene() {
            Err(Error::Config(p)) => problems.extend(p),
            Err(e) => problems.push(e.to_string()),
            Ok(_) => {}
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}
