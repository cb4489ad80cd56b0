//! Procedural "tube flythrough" clips: a camera moving down a lumen whose
//! appearance is a fixed function of depth, so conditioning fidelity is
//! measurable.
//!
//! Depth convention: 1 = lumen center (far), 0 = near wall.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{read_dpt, write_dpt, Rng, Tensor};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TubeParams {
    /// Path amplitude in pixels.
    pub amplitude: f64,
    /// Angular speed in radians per frame.
    pub omega: f64,
    pub phase: f64,
    /// Lumen radius in pixels.
    pub radius: f64,
    pub shading: f64,
    pub texture: f64,
    pub noise: f64,
    pub seed: u64,
}

impl TubeParams {
    pub fn validate(&self) -> Result<()> {
        let vals = [
            self.amplitude,
            self.omega,
            self.phase,
            self.radius,
            self.shading,
            self.texture,
            self.noise,
        ];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("tube parameters must be finite".into()));
        }
        if self.radius <= 0.0 {
            return Err(Error::InvalidParams(format!("radius {} must be > 0", self.radius)));
        }
        if self.noise < 0.0 {
            return Err(Error::InvalidParams(format!("noise std {} must be >= 0", self.noise)));
        }
        Ok(())
    }

    /// Draws from the corpus ranges.
    pub fn sample(rng: &mut Rng) -> Self {
        TubeParams {
            amplitude: rng.uniform_range(0.0, 4.0),
            omega: rng.uniform_range(0.1, 0.8),
            phase: rng.uniform_range(0.0, 2.0 * PI),
            radius: rng.uniform_range(5.0, 10.0),
            shading: rng.uniform_range(1.0, 2.0),
            texture: rng.uniform_range(0.0, 0.15),
            noise: rng.uniform_range(0.0, 0.05),
            seed: rng.next_u64(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipGeometry {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
}

impl Default for ClipGeometry {
    fn default() -> Self {
        ClipGeometry {
            frames: 8,
            height: 16,
            width: 16,
        }
    }
}

impl ClipGeometry {
    pub fn shape(&self) -> [usize; 4] {
        [self.frames, 1, self.height, self.width]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub id: usize,
    /// `[F, 1, H, W]` intensities in `[0, 1]`.
    pub video: Tensor,
    /// `[F, 1, H, W]` depth in `[0, 1]`.
    pub depth: Tensor,
    pub params: Option<TubeParams>,
}

impl Clip {
    /// First frame as `[1, H, W]`.
    pub fn first_frame(&self) -> Tensor {
        let s = self.video.shape();
        let n = s[2] * s[3];
        Tensor::new(vec![1, s[2], s[3]], self.video.data()[..n].to_vec())
            .expect("frame slice matches its shape")
    }
}

/// Appearance as a function of depth, before noise and clamping.
pub fn shade(depth: f64, shading: f64, texture: f64) -> f64 {
    (1.0 - depth).powf(shading) + texture * (6.0 * PI * depth).sin()
}

pub fn generate_clip(params: &TubeParams) -> Result<Clip> {
    generate_clip_with(params, ClipGeometry::default(), 0)
}

pub fn generate_clip_with(params: &TubeParams, geom: ClipGeometry, id: usize) -> Result<Clip> {
    params.validate()?;
    let (f, h, w) = (geom.frames, geom.height, geom.width);
    if f == 0 || h == 0 || w == 0 {
        return Err(Error::InvalidShape(format!("empty clip geometry {geom:?}")));
    }
    let (cy0, cx0) = (h as f64 / 2.0, w as f64 / 2.0);
    let mut rng = Rng::new(params.seed);
    let mut depth = Vec::with_capacity(f * h * w);
    let mut video = Vec::with_capacity(f * h * w);
    for t in 0..f {
        let ang = params.omega * t as f64 + params.phase;
        let cx = cx0 + params.amplitude * ang.sin();
        let cy = cy0 + params.amplitude * ang.cos();
        for y in 0..h {
            for x in 0..w {
                let dist = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
                let d = 1.0 - (dist / params.radius).clamp(0.0, 1.0);
                let eta = rng.gaussian();
                let v = shade(d, params.shading, params.texture) + params.noise * eta;
                depth.push(d);
                video.push(v.clamp(0.0, 1.0));
            }
        }
    }
    let shape = geom.shape().to_vec();
    Ok(Clip {
        id,
        video: Tensor::new(shape.clone(), video)?,
        depth: Tensor::new(shape, depth)?,
        params: Some(*params),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: usize,
    pub video: String,
    pub depth: String,
    pub split: Split,
    pub params: TubeParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub base_seed: u64,
    pub geometry: ClipGeometry,
    pub clips: Vec<ManifestEntry>,
}

/// `round-half-up(0.8 · n)`.
pub fn train_count(n: usize) -> usize {
    (8 * n + 5) / 10
}

pub fn make_corpus(n: usize, base_seed: u64, out_dir: impl AsRef<Path>) -> Result<Manifest> {
    make_corpus_with(n, base_seed, ClipGeometry::default(), out_dir)
}

pub fn make_corpus_with(
    n: usize,
    base_seed: u64,
    geom: ClipGeometry,
    out_dir: impl AsRef<Path>,
) -> Result<Manifest> {
    if n == 0 {
        return Err(Error::InvalidInput("corpus needs at least one clip".into()));
    }
    let dir = out_dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut rng = Rng::new(base_seed);
    let n_train = train_count(n);
    let mut clips = Vec::with_capacity(n);
    for i in 0..n {
        let params = TubeParams::sample(&mut rng);
        let clip = generate_clip_with(&params, geom, i)?;
        let video = format!("clip_{i}.video.dpt");
        let depth = format!("clip_{i}.depth.dpt");
        write_dpt(dir.join(&video), &clip.video)?;
        write_dpt(dir.join(&depth), &clip.depth)?;
        clips.push(ManifestEntry {
            id: i,
            video,
            depth,
            split: if i < n_train { Split::Train } else { Split::Eval },
            params,
        });
    }
    let manifest = Manifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        base_seed,
        geometry: geom,
        clips,
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Reads and validates a video/depth pair.
pub fn read_clip(video_path: impl AsRef<Path>, depth_path: impl AsRef<Path>) -> Result<Clip> {
    let video = read_dpt(video_path)?;
    let depth = read_dpt(depth_path)?;
    clip_from_tensors(0, video, depth)
}

pub fn clip_from_tensors(id: usize, video: Tensor, depth: Tensor) -> Result<Clip> {
    match video.shape() {
        &[f, 1, h, w] if f > 0 && h > 0 && w > 0 => {}
        s => {
            return Err(Error::Format(format!(
                "clip tensors must be [F, 1, H, W], got {s:?}"
            )))
        }
    }
    if depth.shape() != video.shape() {
        return Err(Error::Format(format!(
            "video {:?} and depth {:?} shapes differ",
            video.shape(),
            depth.shape()
        )));
    }
    if let Some(&bad) = depth.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::InvalidDepth(bad));
    }
    if let Some(&bad) = video.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::InvalidInput(format!("video value {bad} outside [0, 1]")));
    }
    Ok(Clip {
        id,
        video,
        depth,
        params: None,
    })
}

/// A corpus read back from disk, split per its manifest.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub manifest: Manifest,
    pub train: Vec<Clip>,
    pub eval: Vec<Clip>,
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<Manifest> {
    let path: PathBuf = dir.as_ref().join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.schema_version != MANIFEST_SCHEMA_VERSION {
        return Err(Error::Format(format!(
            "manifest schema_version {} is not supported",
            manifest.schema_version
        )));
    }
    Ok(manifest)
}

pub fn load_corpus(dir: impl AsRef<Path>) -> Result<Corpus> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir)?;
    let mut train = Vec::new();
    let mut eval = Vec::new();
    for e in &manifest.clips {
        let mut clip = read_clip(dir.join(&e.video), dir.join(&e.depth))?;
        clip.id = e.id;
        clip.params = Some(e.params);
        match e.split {
            Split::Train => train.push(clip),
            Split::Eval => eval.push(clip),
        }
    }
    Ok(Corpus {
        manifest,
        train,
        eval,
    })
}

/// Reads every `*.dpt` clip in a directory (sorted by name) as video-only data.
pub fn read_video_dir(dir: impl AsRef<Path>) -> Result<Vec<Tensor>> {
    let dir = dir.as_ref();
    let mut names: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|x| x == "dpt")
                && !p.to_string_lossy().ends_with(".depth.dpt")
        })
        .collect();
    names.sort();
    names.iter().map(read_dpt).collect()
}
