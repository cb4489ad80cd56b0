//! Stage orchestration: building a trainer for warm-up, injection or resume,
//! driving the step loop with evaluation and early stopping, and capturing
//! checkpoints.

use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::denoiser::{Condition, Denoiser};
use super::train::{early_stop_check, eval_loss, train_step, EvalRecord, Example, TrainState};
use crate::config::Config;
use crate::diffusion::{LatentCodec, NoiseSchedule};
use crate::error::{Error, Result};
use crate::numerics::Rng;
use crate::pda::{Stage, StageConfig};
use crate::synthdata::Clip;

const INJECTION_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;
const EVAL_STREAM: u64 = 0x5851_f42d_4c95_7f2d;

/// One line of the metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub step: u64,
    pub stage: Stage,
    pub loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_loss: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Completed,
    EarlyStopped,
    /// Stopped at the caller's step limit before the stage budget.
    Paused,
}

pub fn stage_config(config: &Config, stage: Stage) -> StageConfig {
    StageConfig {
        stage,
        warmup_steps: config.stages.warmup_steps,
        injection_steps: config.stages.injection_steps,
        train_depth_encoder: config.stages.train_depth_encoder,
    }
}

/// Encodes clips into latent examples; conditions attach depth and the first
/// frame as style reference.
pub fn build_examples(codec: &LatentCodec, clips: &[Clip], conditioned: bool) -> Result<Vec<Example>> {
    clips
        .iter()
        .map(|c| {
            Ok(Example {
                z0: codec.encode(&c.video)?,
                cond: conditioned.then(|| Condition {
                    depth: c.depth.clone(),
                    style_frame: Some(c.first_frame()),
                }),
            })
        })
        .collect()
}

pub struct Trainer {
    config: Config,
    model: Denoiser,
    sched: NoiseSchedule,
    codec: LatentCodec,
    state: TrainState,
    train: Vec<Example>,
    eval: Vec<Example>,
    trainable: Vec<bool>,
}

impl Trainer {
    fn assemble(
        config: &Config,
        model: Denoiser,
        codec: LatentCodec,
        state: TrainState,
        train: &[Clip],
        eval: &[Clip],
    ) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::InsufficientData("no training clips".into()));
        }
        let shape = model.clip_shape();
        for c in train.iter().chain(eval) {
            c.video.expect_shape(&shape, "training clip")?;
        }
        let sched = config.diffusion.schedule()?;
        let conditioned = state.stage == Stage::Injection && config.variant.uses_pda();
        let sc = stage_config(config, state.stage);
        let trainable = model.layout().element_mask(|n| sc.is_trainable(n));
        Ok(Trainer {
            train: build_examples(&codec, train, conditioned)?,
            eval: build_examples(&codec, eval, conditioned)?,
            config: config.clone(),
            model,
            sched,
            codec,
            state,
            trainable,
        })
    }

    /// Fresh unconditional warm-up from seeded initial parameters.
    pub fn warmup(config: &Config, train: &[Clip], eval: &[Clip]) -> Result<Self> {
        config.validate()?;
        let model = Denoiser::from_config(config)?;
        let codec = LatentCodec::fit(train.iter().map(|c| &c.video))?;
        let mut rng = Rng::new(config.seed);
        let params = model.init_params(&mut rng);
        let state = TrainState::new(Stage::Warmup, params, rng);
        Self::assemble(config, model, codec, state, train, eval)
    }

    /// Starts injection from the EMA parameters of a warm-up checkpoint.
    /// Tensors are matched by name; any the warm-up model lacks keep their
    /// seeded initial values.
    pub fn injection(config: &Config, train: &[Clip], eval: &[Clip], warm: &Checkpoint) -> Result<Self> {
        config.validate()?;
        if warm.header.stage != Stage::Warmup {
            return Err(Error::StagePrerequisite(format!(
                "injection needs a warm-up checkpoint, got a {} checkpoint",
                warm.header.stage
            )));
        }
        let wc = &warm.header.config;
        if wc.model != config.model || wc.variant.uses_asd() != config.variant.uses_asd() {
            return Err(Error::Config(
                "warm-up checkpoint was trained with a different architecture".into(),
            ));
        }
        let ema = warm
            .ema
            .as_ref()
            .ok_or_else(|| Error::MissingState("warm-up EMA shadow".into()))?;
        let model = Denoiser::from_config(config)?;
        let mut params = model.init_params(&mut Rng::new(config.seed));
        for e in &warm.header.tensors {
            if let Some(dst) = model.layout().get(&e.name) {
                if dst.shape != e.shape {
                    return Err(Error::Config(format!("tensor {} changed shape", e.name)));
                }
                params[dst.range()].copy_from_slice(&ema[e.offset..e.offset + dst.len]);
            }
        }
        let rng = Rng::new(config.seed ^ INJECTION_STREAM);
        let state = TrainState::new(Stage::Injection, params, rng);
        Self::assemble(config, model, warm.codec.clone(), state, train, eval)
    }

    /// Continues a stage exactly where the checkpoint left it.
    pub fn resume(config: &Config, train: &[Clip], eval: &[Clip], ckpt: &Checkpoint) -> Result<Self> {
        config.validate()?;
        if ckpt.header.config_hash != config.hash() {
            return Err(Error::Config(
                "checkpoint was written under a different configuration".into(),
            ));
        }
        let model = Denoiser::from_config(config)?;
        if ckpt.params.len() != model.num_params() {
            return Err(Error::Format("checkpoint does not match the model layout".into()));
        }
        let state = ckpt.train_state()?;
        Self::assemble(config, model, ckpt.codec.clone(), state, train, eval)
    }

    /// Dispatches on the requested stage and the input checkpoint, if any.
    pub fn open(
        config: &Config,
        stage: Stage,
        train: &[Clip],
        eval: &[Clip],
        ckpt_in: Option<&Checkpoint>,
    ) -> Result<Self> {
        match (stage, ckpt_in) {
            (Stage::Warmup, None) => Self::warmup(config, train, eval),
            (Stage::Injection, None) => Err(Error::StagePrerequisite(
                "injection requires a warm-up checkpoint".into(),
            )),
            (s, Some(c)) if c.header.stage == s => Self::resume(config, train, eval, c),
            (Stage::Injection, Some(c)) => Self::injection(config, train, eval, c),
            (Stage::Warmup, Some(c)) => Err(Error::InvalidStage(format!(
                "cannot continue warm-up from a {} checkpoint",
                c.header.stage
            ))),
        }
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn model(&self) -> &Denoiser {
        &self.model
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.sched
    }

    pub fn codec(&self) -> &LatentCodec {
        &self.codec
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn trainable(&self) -> &[bool] {
        &self.trainable
    }

    pub fn train_examples(&self) -> &[Example] {
        &self.train
    }

    pub fn eval_examples(&self) -> &[Example] {
        &self.eval
    }

    pub fn budget(&self) -> u64 {
        stage_config(&self.config, self.state.stage).budget()
    }

    /// One optimizer step on a batch drawn with replacement.
    pub fn step(&mut self) -> Result<f64> {
        let n = self.train.len();
        let batch: Vec<Example> = (0..self.config.optim.batch_size)
            .map(|_| self.train[self.state.rng.uniform_int(0, n - 1)].clone())
            .collect();
        train_step(
            &self.model,
            &self.sched,
            &mut self.state,
            &batch,
            &self.config.optim,
            &self.trainable,
        )
    }

    /// Held-out loss of the EMA parameters (falls back to the training set
    /// when there is no held-out split).
    pub fn evaluate(&self) -> Result<f64> {
        let set = if self.eval.is_empty() { &self.train } else { &self.eval };
        eval_loss(
            &self.model,
            &self.sched,
            self.state.ema_or_missing()?,
            set,
            self.config.stages.eval_timesteps,
            self.config.seed ^ EVAL_STREAM,
        )
    }

    /// Runs until the stage budget, early stop, or `stop_at` steps.
    pub fn run(
        &mut self,
        stop_at: Option<u64>,
        mut on_record: impl FnMut(&Trainer, &MetricRecord) -> Result<()>,
    ) -> Result<Outcome> {
        let budget = self.budget();
        let limit = stop_at.map_or(budget, |s| s.min(budget));
        let cadence = self.config.stages.eval_cadence;
        while self.state.step < limit && !self.state.early_stopped {
            let loss = self.step()?;
            let step = self.state.step;
            let mut rec = MetricRecord {
                step,
                stage: self.state.stage,
                loss,
                eval_loss: None,
            };
            if step.is_multiple_of(cadence) || step == budget {
                let l = self.evaluate()?;
                rec.eval_loss = Some(l);
                self.state.evals.push(EvalRecord { step, loss: l });
                let losses: Vec<f64> = self.state.evals.iter().map(|e| e.loss).collect();
                self.state.early_stopped = early_stop_check(
                    &losses,
                    self.config.stages.early_stop_rel,
                    self.config.stages.early_stop_patience,
                );
                if self.state.early_stopped {
                    log::info!("early stop at step {step}");
                }
            }
            on_record(self, &rec)?;
        }
        Ok(if self.state.early_stopped {
            Outcome::EarlyStopped
        } else if self.state.step >= budget {
            Outcome::Completed
        } else {
            Outcome::Paused
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::capture(&self.config, self.model.layout(), &self.state, &self.codec)
    }

    pub fn into_parts(self) -> (Denoiser, TrainState, LatentCodec) {
        (self.model, self.state, self.codec)
    }
}
