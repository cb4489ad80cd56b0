//! Run configuration: one JSON document with a schema version.

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diffusion::{make_schedule, NoiseSchedule, FULL_CORRUPTION};
use crate::error::{Error, Result};
use crate::spline::{GridSpec, KnotGrid};

pub const SCHEMA_VERSION: u32 = 1;

/// Which of the two mechanisms a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    #[default]
    Full,
    /// Spline blocks replaced by parameter-matched MLP blocks.
    NoAsd,
    /// Depth conditioning never applied.
    NoPda,
    Baseline,
}

impl Variant {
    pub fn uses_asd(self) -> bool {
        matches!(self, Variant::Full | Variant::NoPda)
    }

    pub fn uses_pda(self) -> bool {
        matches!(self, Variant::Full | Variant::NoAsd)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoAsd => "no-asd",
            Variant::NoPda => "no-pda",
            Variant::Baseline => "baseline",
        }
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Variant::Full),
            "no-asd" => Ok(Variant::NoAsd),
            "no-pda" => Ok(Variant::NoPda),
            "baseline" => Ok(Variant::Baseline),
            other => Err(Error::Config(format!("unknown variant {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub patch: usize,
    pub channels: usize,
    pub blocks: usize,
    pub time_dim: usize,
    pub style_dim: usize,
    pub depth_hidden: usize,
    pub grid: GridSpec,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            frames: 8,
            height: 16,
            width: 16,
            patch: 4,
            channels: 32,
            blocks: 3,
            time_dim: 64,
            style_dim: 16,
            depth_hidden: 8,
            grid: GridSpec::default(),
        }
    }
}

impl ModelConfig {
    pub fn clip_shape(&self) -> [usize; 4] {
        [self.frames, 1, self.height, self.width]
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("frames", self.frames),
            ("height", self.height),
            ("width", self.width),
            ("patch", self.patch),
            ("channels", self.channels),
            ("blocks", self.blocks),
            ("time_dim", self.time_dim),
            ("style_dim", self.style_dim),
            ("depth_hidden", self.depth_hidden),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("model.{name} must be positive")));
        }
        if !self.time_dim.is_multiple_of(2) {
            return Err(Error::Config("model.time_dim must be even".into()));
        }
        if !self.height.is_multiple_of(self.patch) || !self.width.is_multiple_of(self.patch) {
            return Err(Error::Config(format!(
                "patch {} does not tile {}x{}",
                self.patch, self.height, self.width
            )));
        }
        // the depth encoder halves twice; its map must line up with the tokens
        let half = |n: usize| (n + 2 - 3) / 2 + 1;
        let (dh, dw) = (half(half(self.height)), half(half(self.width)));
        if (dh, dw) != (self.height / self.patch, self.width / self.patch) {
            return Err(Error::Config(format!(
                "depth embedding {dh}x{dw} does not match the {}x{} token grid",
                self.height / self.patch,
                self.width / self.patch
            )));
        }
        KnotGrid::try_from(self.grid)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiffusionConfig {
    pub steps: usize,
    pub beta_lo: f64,
    pub beta_hi: f64,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        DiffusionConfig {
            steps: 100,
            beta_lo: 1e-3,
            beta_hi: 0.1,
        }
    }
}

impl DiffusionConfig {
    pub fn schedule(&self) -> Result<NoiseSchedule> {
        make_schedule(self.steps, self.beta_lo, self.beta_hi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub ema_decay: f64,
    pub batch_size: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr: 1e-4,
            weight_decay: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            ema_decay: 0.999,
            batch_size: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StagesConfig {
    pub warmup_steps: u64,
    pub injection_steps: u64,
    pub eval_cadence: u64,
    /// Timesteps drawn per held-out clip when estimating the eval loss.
    pub eval_timesteps: usize,
    pub early_stop_rel: f64,
    pub early_stop_patience: usize,
    pub train_depth_encoder: bool,
}

impl Default for StagesConfig {
    fn default() -> Self {
        StagesConfig {
            warmup_steps: 4000,
            injection_steps: 2000,
            eval_cadence: 200,
            eval_timesteps: 4,
            early_stop_rel: 0.01,
            early_stop_patience: 5,
            train_depth_encoder: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub schema_version: u32,
    pub seed: u64,
    #[serde(default)]
    pub data_dir: Option<String>,
    #[serde(default)]
    pub variant: Variant,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub diffusion: DiffusionConfig,
    #[serde(default)]
    pub optim: OptimConfig,
    #[serde(default)]
    pub stages: StagesConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            schema_version: SCHEMA_VERSION,
            seed: 1,
            data_dir: None,
            variant: Variant::Full,
            model: ModelConfig::default(),
            diffusion: DiffusionConfig::default(),
            optim: OptimConfig::default(),
            stages: StagesConfig::default(),
        }
    }
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Config = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Hex SHA-256 of the compact JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.model.validate()?;
        let sched = self.diffusion.schedule()?;
        let last = sched.alpha_bar(sched.steps());
        if last >= FULL_CORRUPTION {
            return Err(Error::Config(format!(
                "schedule leaves alpha_bar_T = {last:.4}, need < {FULL_CORRUPTION}"
            )));
        }
        let o = &self.optim;
        if !(o.lr >= 0.0 && o.lr.is_finite()) || !(o.weight_decay >= 0.0) {
            return Err(Error::Config("lr and weight_decay must be finite and >= 0".into()));
        }
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || !(o.adam_eps > 0.0) {
            return Err(Error::Config("adam betas must lie in [0, 1) and eps > 0".into()));
        }
        if !(0.0..=1.0).contains(&o.ema_decay) {
            return Err(Error::Config("ema_decay must lie in [0, 1]".into()));
        }
        if o.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        let s = &self.stages;
        if s.eval_cadence == 0 || s.eval_timesteps == 0 || s.early_stop_patience == 0 {
            return Err(Error::Config(
                "eval_cadence, eval_timesteps and early_stop_patience must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&s.early_stop_rel) {
            return Err(Error::Config("early_stop_rel must lie in [0, 1)".into()));
        }
        Ok(())
    }
}
