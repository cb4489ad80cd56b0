//! Command implementations behind the `splinediff` binary. Each `cmd_*`
//! function is what one subcommand does; the lower-level helpers are shared
//! with the ablation driver and the acceptance harness.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use splinediff::config::{Config, Variant};
use splinediff::error::Error;
use splinediff::gradcheck::{run_all, GradcheckOptions, SuiteReport};
use splinediff::metrics::{evaluate, MetricsReport};
use splinediff::model::{sample_video, Checkpoint, Condition, Denoiser, DirLock, Outcome, Trainer};
use splinediff::numerics::{read_dpt, write_dpt, Rng, Tensor};
use splinediff::pda::Stage;
use splinediff::synthdata::{load_corpus, make_corpus, read_video_dir, Clip, Corpus, MANIFEST_FILE};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const SAMPLES_MANIFEST: &str = "samples.json";

/// Scalar config fields that may be set from the command line.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub variant: Option<Variant>,
    pub data_dir: Option<PathBuf>,
    pub lr: Option<f64>,
    pub batch_size: Option<usize>,
    pub warmup_steps: Option<u64>,
    pub injection_steps: Option<u64>,
    pub eval_cadence: Option<u64>,
}

pub fn load_config(path: Option<&Path>, o: &Overrides) -> anyhow::Result<Config> {
    let mut cfg = match path {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(v) = o.seed {
        cfg.seed = v;
    }
    if let Some(v) = o.variant {
        cfg.variant = v;
    }
    if let Some(v) = &o.data_dir {
        cfg.data_dir = Some(v.to_string_lossy().into_owned());
    }
    if let Some(v) = o.lr {
        cfg.optim.lr = v;
    }
    if let Some(v) = o.batch_size {
        cfg.optim.batch_size = v;
    }
    if let Some(v) = o.warmup_steps {
        cfg.stages.warmup_steps = v;
    }
    if let Some(v) = o.injection_steps {
        cfg.stages.injection_steps = v;
    }
    if let Some(v) = o.eval_cadence {
        cfg.stages.eval_cadence = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn cmd_gen_data(config: &Config, n: usize, out: &Path) -> anyhow::Result<PathBuf> {
    make_corpus(n, config.seed, out)?;
    Ok(out.join(MANIFEST_FILE))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub stage: Stage,
    pub step: u64,
    pub outcome: String,
    pub final_loss: Option<f64>,
    pub final_eval_loss: Option<f64>,
    pub checkpoint: Option<PathBuf>,
}

/// Checkpoint file of a stage inside a run directory.
pub fn stage_checkpoint(dir: &Path, stage: Stage) -> PathBuf {
    dir.join(format!("{stage}.dpck"))
}

/// Builds the right trainer and runs it until the budget, an early stop, or
/// `stop_at`. With `out_dir`, the metrics stream is appended there and the
/// stage checkpoint is rewritten at every evaluation and at the end.
pub fn train_stage(
    config: &Config,
    stage: Stage,
    train: &[Clip],
    eval: &[Clip],
    ckpt_in: Option<&Checkpoint>,
    out_dir: Option<&Path>,
    stop_at: Option<u64>,
) -> anyhow::Result<(Trainer, TrainReport)> {
    let mut trainer = Trainer::open(config, stage, train, eval, ckpt_in)?;
    let mut metrics = match out_dir {
        Some(d) => {
            let f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(d.join(METRICS_FILE))
                .with_context(|| format!("opening metrics stream in {}", d.display()))?;
            Some(BufWriter::new(f))
        }
        None => None,
    };
    let ckpt_path = out_dir.map(|d| stage_checkpoint(d, stage));
    let mut last = None;
    let mut last_eval = trainer.state().evals.last().map(|e| e.loss);
    let outcome = trainer.run(stop_at, |tr, rec| {
        last = Some(rec.loss);
        if let Some(w) = metrics.as_mut() {
            let line = serde_json::to_string(rec)?;
            writeln!(w, "{line}").map_err(|e| Error::io(METRICS_FILE, e))?;
        }
        if let Some(l) = rec.eval_loss {
            last_eval = Some(l);
            log::info!("{} step {} loss {:.4} eval {:.4}", rec.stage, rec.step, rec.loss, l);
            if let Some(w) = metrics.as_mut() {
                w.flush().map_err(|e| Error::io(METRICS_FILE, e))?;
            }
            if let Some(p) = &ckpt_path {
                tr.checkpoint().save(p)?;
            }
        }
        Ok(())
    })?;
    if let Some(w) = metrics.as_mut() {
        w.flush().context("flushing metrics stream")?;
    }
    if let Some(p) = &ckpt_path {
        trainer.checkpoint().save(p)?;
    }
    let report = TrainReport {
        stage,
        step: trainer.state().step,
        outcome: match outcome {
            Outcome::Completed => "completed",
            Outcome::EarlyStopped => "early-stopped",
            Outcome::Paused => "paused",
        }
        .into(),
        final_loss: last,
        final_eval_loss: last_eval,
        checkpoint: ckpt_path,
    };
    Ok((trainer, report))
}

fn data_dir(config: &Config, data: Option<&Path>) -> anyhow::Result<PathBuf> {
    match (data, &config.data_dir) {
        (Some(d), _) => Ok(d.to_path_buf()),
        (None, Some(d)) => Ok(PathBuf::from(d)),
        (None, None) => bail!("no data directory given (flag or config data_dir)"),
    }
}

/// One training invocation that owns `out_dir` for its duration.
pub fn cmd_train(
    config: &Config,
    stage: Stage,
    data: Option<&Path>,
    ckpt_in: Option<&Path>,
    out_dir: &Path,
    stop_at: Option<u64>,
) -> anyhow::Result<TrainReport> {
    let corpus = load_corpus(data_dir(config, data)?)?;
    let _lock = DirLock::acquire(out_dir)?;
    let ckpt = ckpt_in.map(Checkpoint::load).transpose()?;
    let (_, report) = train_stage(
        config,
        stage,
        &corpus.train,
        &corpus.eval,
        ckpt.as_ref(),
        Some(out_dir),
        stop_at,
    )?;
    Ok(report)
}

/// Draws one sample per condition; sample `i` always uses generator seed
/// `seed + i`, so different checkpoints see the same noise.
pub fn sample_set(ckpt: &Checkpoint, conds: &[Option<Condition>], seed: u64) -> anyhow::Result<Vec<Tensor>> {
    let config = &ckpt.header.config;
    let model = Denoiser::from_config(config)?;
    let sched = config.diffusion.schedule()?;
    let conditional = conds.iter().any(Option::is_some);
    if conditional {
        if ckpt.header.stage != Stage::Injection {
            return Err(Error::StagePrerequisite(
                "conditional sampling needs an injection-stage checkpoint".into(),
            )
            .into());
        }
        if !config.variant.uses_pda() {
            return Err(Error::StagePrerequisite(format!(
                "variant {} has no conditioning path",
                config.variant.name()
            ))
            .into());
        }
    }
    conds
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let mut rng = Rng::new(seed.wrapping_add(i as u64));
            Ok(sample_video(&model, ckpt.ema.as_deref(), &sched, &ckpt.codec, c.as_ref(), &mut rng)?)
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplesManifest {
    pub checkpoint: String,
    pub seed: u64,
    pub conditional: bool,
    pub files: Vec<String>,
}

/// `style` may be a single `[1, H, W]` frame or a clip whose first frame is used.
fn load_style(path: &Path) -> anyhow::Result<Tensor> {
    let t = read_dpt(path)?;
    match *t.shape() {
        [1, h, w] => Ok(t.reshape(&[1, h, w])?),
        [_, 1, h, w] => Ok(Tensor::new(vec![1, h, w], t.data()[..h * w].to_vec())?),
        ref s => Err(Error::InvalidShape(format!("style reference of shape {s:?}")).into()),
    }
}

pub fn cmd_sample(
    ckpt_path: &Path,
    depth: Option<&Path>,
    style: Option<&Path>,
    n: usize,
    seed: u64,
    out: &Path,
) -> anyhow::Result<Vec<PathBuf>> {
    let ckpt = Checkpoint::load(ckpt_path)?;
    let cond = match depth {
        None => None,
        Some(p) => {
            let d = read_dpt(p)?;
            let shape = Denoiser::from_config(&ckpt.header.config)?.clip_shape();
            d.expect_shape(&shape, "depth sequence")?;
            Some(Condition {
                depth: d,
                style_frame: style.map(load_style).transpose()?,
            })
        }
    };
    let samples = sample_set(&ckpt, &vec![cond.clone(); n], seed)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut files = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        let name = format!("sample_{i}.dpt");
        write_dpt(out.join(&name), s)?;
        files.push(name);
    }
    let manifest = SamplesManifest {
        checkpoint: ckpt_path.to_string_lossy().into_owned(),
        seed,
        conditional: cond.is_some(),
        files: files.clone(),
    };
    fs::write(out.join(SAMPLES_MANIFEST), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(files.iter().map(|f| out.join(f)).collect())
}

/// Every `*.depth.dpt` in a directory, sorted by name.
pub fn read_depth_dir(dir: &Path) -> anyhow::Result<Vec<Tensor>> {
    let mut names: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_string_lossy().ends_with(".depth.dpt"))
        .collect();
    names.sort();
    Ok(names.iter().map(read_dpt).collect::<Result<_, _>>()?)
}

pub fn cmd_eval(
    real: &Path,
    generated: &Path,
    depth: Option<&Path>,
    projection_seed: u64,
    out: Option<&Path>,
) -> anyhow::Result<MetricsReport> {
    let real = read_video_dir(real)?;
    let generated = read_video_dir(generated)?;
    let depths = depth.map(read_depth_dir).transpose()?;
    let report = evaluate(&real, &generated, depths.as_deref(), projection_seed)?;
    if let Some(p) = out {
        fs::write(p, serde_json::to_string_pretty(&report)? + "\n")
            .with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(report)
}

/// Runs every finite-difference suite; the flag is false if any failed.
pub fn cmd_gradcheck(seed: u64, corrupt: bool) -> anyhow::Result<(Vec<SuiteReport>, bool)> {
    let reports = run_all(GradcheckOptions { seed, corrupt })?;
    let ok = reports.iter().all(|r| r.passed);
    Ok((reports, ok))
}

/// Ablation arms in the order the comparison is read.
pub const ARMS: [(&str, Variant); 3] = [
    ("baseline", Variant::Baseline),
    ("+PDA", Variant::NoAsd),
    ("+PDA+ASD", Variant::Full),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub seed: u64,
    pub arm: String,
    pub variant: Variant,
    pub frechet: f64,
    pub depth_fidelity_mean: Option<f64>,
    pub temporal_coherence: f64,
    pub final_eval_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
    pub n_samples: usize,
    pub warmup_steps: u64,
    pub injection_steps: u64,
    /// Seeds where frechet(+PDA+ASD) <= frechet(+PDA) <= frechet(baseline).
    pub ordered_seeds: Vec<u64>,
}

impl AblationTable {
    pub fn frechet(&self, seed: u64, arm: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.seed == seed && r.arm == arm)
            .map(|r| r.frechet)
    }
}

/// Conditions built from held-out clips: depth plus first frame.
pub fn held_out_conditions(clips: &[Clip]) -> Vec<Condition> {
    clips
        .iter()
        .map(|c| Condition {
            depth: c.depth.clone(),
            style_frame: Some(c.first_frame()),
        })
        .collect()
}

/// Trains the three arms per seed under one budget and scores samples drawn
/// on the first `n_samples` held-out depth sequences against the held-out
/// videos. Both spline-free arms start injection from the same warm-up.
pub fn ablate(
    config: &Config,
    corpus: &Corpus,
    seeds: &[u64],
    n_samples: usize,
    out_dir: Option<&Path>,
) -> anyhow::Result<AblationTable> {
    if corpus.eval.len() < n_samples.max(2) {
        bail!("ablation needs at least {} held-out clips", n_samples.max(2));
    }
    let conds = held_out_conditions(&corpus.eval[..n_samples]);
    let depths: Vec<Tensor> = conds.iter().map(|c| c.depth.clone()).collect();
    let real: Vec<Tensor> = corpus.eval.iter().map(|c| c.video.clone()).collect();
    let mut rows = Vec::new();
    for &seed in seeds {
        let dir = out_dir.map(|d| d.join(format!("seed{seed}")));
        let run_dir = |name: &str| -> anyhow::Result<Option<PathBuf>> {
            let Some(d) = &dir else { return Ok(None) };
            let p = d.join(name);
            fs::create_dir_all(&p).with_context(|| format!("creating {}", p.display()))?;
            Ok(Some(p))
        };
        let mut warm = Vec::new();
        for (name, variant) in [("warmup-mlp", Variant::NoAsd), ("warmup-asd", Variant::Full)] {
            let cfg = Config { seed, variant, ..config.clone() };
            let d = run_dir(name)?;
            let (tr, _) = train_stage(&cfg, Stage::Warmup, &corpus.train, &corpus.eval, None, d.as_deref(), None)?;
            warm.push(tr.checkpoint());
        }
        for (arm, variant) in ARMS {
            let cfg = Config { seed, variant, ..config.clone() };
            let start = &warm[usize::from(variant.uses_asd())];
            let d = run_dir(variant.name())?;
            let (tr, report) = train_stage(
                &cfg,
                Stage::Injection,
                &corpus.train,
                &corpus.eval,
                Some(start),
                d.as_deref(),
                None,
            )?;
            let arm_conds: Vec<Option<Condition>> = conds
                .iter()
                .map(|c| variant.uses_pda().then(|| c.clone()))
                .collect();
            let samples = sample_set(&tr.checkpoint(), &arm_conds, seed)?;
            let m = evaluate(&real, &samples, Some(&depths), splinediff::metrics::DEFAULT_PROJECTION_SEED)?;
            log::info!("seed {seed} {arm}: frechet {:.4}", m.frechet);
            rows.push(AblationRow {
                seed,
                arm: arm.into(),
                variant,
                frechet: m.frechet,
                depth_fidelity_mean: m.depth_fidelity_mean,
                temporal_coherence: m.temporal_coherence,
                final_eval_loss: report.final_eval_loss,
            });
        }
    }
    let mut table = AblationTable {
        rows,
        n_samples,
        warmup_steps: config.stages.warmup_steps,
        injection_steps: config.stages.injection_steps,
        ordered_seeds: Vec::new(),
    };
    table.ordered_seeds = seeds
        .iter()
        .copied()
        .filter(|&s| {
            let f = |arm| table.frechet(s, arm).unwrap_or(f64::NAN);
            f("+PDA+ASD") <= f("+PDA") && f("+PDA") <= f("baseline")
        })
        .collect();
    if let Some(d) = out_dir {
        let p = d.join("ablation.json");
        let mut w = BufWriter::new(File::create(&p).with_context(|| format!("creating {}", p.display()))?);
        writeln!(w, "{}", serde_json::to_string_pretty(&table)?)?;
    }
    Ok(table)
}

pub fn cmd_ablate(config: &Config, data: Option<&Path>, seeds: &[u64], n_samples: usize, out: &Path) -> anyhow::Result<AblationTable> {
    let corpus = load_corpus(data_dir(config, data)?)?;
    let _lock = DirLock::acquire(out)?;
    ablate(config, &corpus, seeds, n_samples, Some(out))
}
