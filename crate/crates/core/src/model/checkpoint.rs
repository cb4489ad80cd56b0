//! `DPCK` checkpoints: magic `DPCK`, u32 LE format version, u32 LE header
//! length, a UTF-8 JSON header, then one DPT1 tensor per payload section in
//! header order.

use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::train::{EvalRecord, TrainState};
use crate::config::Config;
use crate::diffusion::LatentCodec;
use crate::error::{Error, Result};
use crate::numerics::{decode_dpt, encode_dpt, Cursor, Rng, RngState, Tensor};
use crate::params::ParamLayout;
use crate::pda::Stage;

pub const CKPT_MAGIC: &[u8; 4] = b"DPCK";
pub const CKPT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub stage: Stage,
    pub step: u64,
    pub config_hash: String,
    pub config: Config,
    pub rng: RngState,
    pub evals: Vec<EvalRecord>,
    pub early_stopped: bool,
    /// Named views into each flat parameter-shaped section.
    pub tensors: Vec<TensorEntry>,
    pub sections: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: Vec<f64>,
    pub adam_m: Vec<f64>,
    pub adam_v: Vec<f64>,
    pub ema: Option<Vec<f64>>,
    pub codec: LatentCodec,
}

fn flat(v: &[f64]) -> Tensor {
    Tensor::new(vec![v.len()], v.to_vec()).expect("finite parameter vector")
}

impl Checkpoint {
    pub fn capture(
        config: &Config,
        layout: &ParamLayout,
        state: &TrainState,
        codec: &LatentCodec,
    ) -> Self {
        let mut sections = vec!["params".to_string(), "adam_m".into(), "adam_v".into()];
        if state.ema.is_some() {
            sections.push("ema".into());
        }
        sections.push("codec.mean".into());
        sections.push("codec.scale".into());
        Checkpoint {
            header: CheckpointHeader {
                stage: state.stage,
                step: state.step,
                config_hash: config.hash(),
                config: config.clone(),
                rng: state.rng.state(),
                evals: state.evals.clone(),
                early_stopped: state.early_stopped,
                tensors: layout
                    .entries()
                    .iter()
                    .map(|e| TensorEntry {
                        name: e.name.clone(),
                        shape: e.shape.clone(),
                        offset: e.offset,
                    })
                    .collect(),
                sections,
            },
            params: state.params.clone(),
            adam_m: state.adam_m.clone(),
            adam_v: state.adam_v.clone(),
            ema: state.ema.clone(),
            codec: codec.clone(),
        }
    }

    pub fn train_state(&self) -> Result<TrainState> {
        Ok(TrainState {
            stage: self.header.stage,
            step: self.header.step,
            params: self.params.clone(),
            adam_m: self.adam_m.clone(),
            adam_v: self.adam_v.clone(),
            ema: self.ema.clone(),
            rng: Rng::from_state(&self.header.rng)?,
            evals: self.header.evals.clone(),
            early_stopped: self.header.early_stopped,
        })
    }

    /// Looks up one named tensor in a parameter-shaped section.
    pub fn tensor(&self, section: &[f64], name: &str) -> Option<Tensor> {
        let e = self.header.tensors.iter().find(|e| e.name == name)?;
        let n: usize = e.shape.iter().product();
        Tensor::new(e.shape.clone(), section[e.offset..e.offset + n].to_vec()).ok()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        let mut out = Vec::with_capacity(12 + header.len() + 16 * self.params.len());
        out.extend_from_slice(CKPT_MAGIC);
        out.extend_from_slice(&CKPT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for s in &self.header.sections {
            let t = match s.as_str() {
                "params" => flat(&self.params),
                "adam_m" => flat(&self.adam_m),
                "adam_v" => flat(&self.adam_v),
                "ema" => flat(self.ema.as_deref().expect("ema section implies shadow")),
                "codec.mean" => self.codec.mean().clone(),
                "codec.scale" => self.codec.scale().clone(),
                other => unreachable!("unknown section {other}"),
            };
            encode_dpt(&t, &mut out);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(4)? != CKPT_MAGIC {
            return Err(Error::Format("bad DPCK magic".into()));
        }
        let version = cur.u32()?;
        if version != CKPT_VERSION {
            return Err(Error::Format(format!(
                "checkpoint format version {version} is not supported (expected {CKPT_VERSION})"
            )));
        }
        let hlen = cur.u32()? as usize;
        let header: CheckpointHeader = serde_json::from_slice(cur.take(hlen)?)
            .map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
        let total: usize = header
            .tensors
            .iter()
            .map(|e| e.offset + e.shape.iter().product::<usize>())
            .max()
            .unwrap_or(0);
        let mut params = None;
        let mut adam_m = None;
        let mut adam_v = None;
        let mut ema = None;
        let mut mean = None;
        let mut scale = None;
        for s in &header.sections {
            let (t, used) = decode_dpt(&bytes[cur.pos..])?;
            cur.pos += used;
            let slot = match s.as_str() {
                "params" => &mut params,
                "adam_m" => &mut adam_m,
                "adam_v" => &mut adam_v,
                "ema" => &mut ema,
                "codec.mean" => &mut mean,
                "codec.scale" => &mut scale,
                other => return Err(Error::Format(format!("unknown checkpoint section {other:?}"))),
            };
            *slot = Some(t);
        }
        if cur.pos != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after checkpoint payload",
                bytes.len() - cur.pos
            )));
        }
        let need = |t: Option<Tensor>, what: &str| -> Result<Vec<f64>> {
            let t = t.ok_or_else(|| Error::Format(format!("checkpoint lacks section {what}")))?;
            if t.numel() != total {
                return Err(Error::Format(format!(
                    "section {what} holds {} values, directory needs {total}",
                    t.numel()
                )));
            }
            Ok(t.into_data())
        };
        let params = need(params, "params")?;
        let adam_m = need(adam_m, "adam_m")?;
        let adam_v = need(adam_v, "adam_v")?;
        let ema = ema.map(|t| need(Some(t), "ema")).transpose()?;
        let codec = LatentCodec::new(
            mean.ok_or_else(|| Error::Format("checkpoint lacks codec.mean".into()))?,
            scale.ok_or_else(|| Error::Format("checkpoint lacks codec.scale".into()))?,
        )?;
        Ok(Checkpoint {
            header,
            params,
            adam_m,
            adam_v,
            ema,
            codec,
        })
    }

    /// Writes through a temporary file and renames, so readers never see a
    /// partial checkpoint.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("dpck.tmp");
        fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Exclusive ownership of a checkpoint directory for one process.
#[derive(Debug)]
pub struct DirLock {
    path: PathBuf,
}

pub const LOCK_FILE: &str = ".splinediff.lock";

impl DirLock {
    pub fn acquire(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(DirLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::InvalidState(
                format!("{} is locked by another process", dir.display()),
            )),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
