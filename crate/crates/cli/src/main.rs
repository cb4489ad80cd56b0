use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use splinediff::config::Variant;
use splinediff::metrics::DEFAULT_PROJECTION_SEED;
use splinediff::pda::Stage;
use splinediff_cli::*;

#[derive(Parser)]
#[command(name = "splinediff", version, about = "Depth-conditioned video diffusion with spline blocks")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// JSON config file; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    warmup_steps: Option<u64>,
    #[arg(long)]
    injection_steps: Option<u64>,
    #[arg(long)]
    eval_cadence: Option<u64>,
}

impl ConfigArgs {
    fn load(&self, data: Option<&PathBuf>) -> anyhow::Result<splinediff::config::Config> {
        let o = Overrides {
            seed: self.seed,
            variant: self.variant,
            data_dir: data.cloned(),
            lr: self.lr,
            batch_size: self.batch_size,
            warmup_steps: self.warmup_steps,
            injection_steps: self.injection_steps,
            eval_cadence: self.eval_cadence,
        };
        load_config(self.config.as_deref(), &o)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a synthetic tube-flythrough corpus.
    GenData {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value_t = 256)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run (or resume) one training stage.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        stage: Stage,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Warm-up checkpoint for injection, or a checkpoint of the same stage to resume.
        #[arg(long)]
        ckpt_in: Option<PathBuf>,
        /// Run directory: checkpoint, metrics stream and lock file.
        #[arg(long)]
        out: PathBuf,
        /// Pause once the stage step counter reaches this value.
        #[arg(long)]
        max_steps: Option<u64>,
    },
    /// Draw samples from a checkpoint's EMA parameters.
    Sample {
        #[arg(long)]
        ckpt: PathBuf,
        /// Depth sequence (DPT1, [F,1,H,W]); omit for unconditional samples.
        #[arg(long)]
        depth: Option<PathBuf>,
        /// Style reference: a [1,H,W] frame or a clip whose first frame is used.
        #[arg(long)]
        style: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare a generated clip directory against a real one.
    Eval {
        #[arg(long)]
        real: PathBuf,
        #[arg(long)]
        gen: PathBuf,
        /// Directory of *.depth.dpt files paired with the generated clips.
        #[arg(long)]
        depth: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_PROJECTION_SEED)]
        projection_seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference checks of every analytic gradient.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Negative control: perturb one analytic derivative per suite.
        #[arg(long, hide = true)]
        corrupt_gradient: bool,
    },
    /// Train and score baseline, +PDA and +PDA+ASD under one budget.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_values_t = [1u64, 2, 3])]
        seeds: Vec<u64>,
        #[arg(long, default_value_t = 16)]
        n_samples: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.cmd {
        Cmd::GenData { cfg, n, out } => {
            let path = cmd_gen_data(&cfg.load(None)?, n, &out)?;
            println!("{}", path.display());
        }
        Cmd::Train {
            cfg,
            stage,
            data,
            ckpt_in,
            out,
            max_steps,
        } => {
            let config = cfg.load(data.as_ref())?;
            let report = cmd_train(&config, stage, data.as_deref(), ckpt_in.as_deref(), &out, max_steps)?;
            println!("{}", serde_json::to_string(&report)?);
        }
        Cmd::Sample {
            ckpt,
            depth,
            style,
            n,
            seed,
            out,
        } => {
            for p in cmd_sample(&ckpt, depth.as_deref(), style.as_deref(), n, seed, &out)? {
                println!("{}", p.display());
            }
        }
        Cmd::Eval {
            real,
            gen,
            depth,
            projection_seed,
            out,
        } => {
            let report = cmd_eval(&real, &gen, depth.as_deref(), projection_seed, out.as_deref())?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Cmd::Gradcheck {
            seed,
            corrupt_gradient,
        } => {
            let (reports, ok) = cmd_gradcheck(seed, corrupt_gradient)?;
            for r in &reports {
                println!(
                    "{:<16} probes {:>3}  max rel err {:.3e}  tol {:.0e}  {}",
                    r.name,
                    r.probes,
                    r.max_rel_err,
                    r.tolerance,
                    if r.passed { "PASS" } else { "FAIL" }
                );
            }
            return Ok(ok);
        }
        Cmd::Ablate {
            cfg,
            data,
            seeds,
            n_samples,
            out,
        } => {
            let config = cfg.load(data.as_ref())?;
            let table = cmd_ablate(&config, data.as_deref(), &seeds, n_samples, &out)?;
            for r in &table.rows {
                println!(
                    "seed {:>3}  {:<9} frechet {:>10.4}  fidelity {:>7}",
                    r.seed,
                    r.arm,
                    r.frechet,
                    r.depth_fidelity_mean.map_or("-".into(), |f| format!("{f:.3}"))
                );
            }
            println!("ordering holds for seeds {:?}", table.ordered_seeds);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
