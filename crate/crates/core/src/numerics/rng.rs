use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

/// Seeded, counter-based random source.
///
/// Backed by ChaCha8, whose output is a pure function of (key, stream,
/// position), so the full state can be captured in a checkpoint and the
/// stream is identical on every platform.
#[derive(Debug, Clone)]
pub struct Rng {
    key: u64,
    inner: ChaCha8Rng,
}

/// Serializable snapshot of an [`Rng`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub key: u64,
    pub stream: u64,
    /// Word position, stored as a decimal string since it is 128-bit.
    pub word_pos: String,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            key: seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Derives an independent child generator, advancing `self` by one word pair.
    pub fn fork(&mut self) -> Rng {
        Rng::new(self.inner.next_u64())
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `lo..=hi`.
    pub fn uniform_int(&mut self, lo: usize, hi: usize) -> usize {
        debug_assert!(lo <= hi);
        let span = (hi - lo + 1) as u64;
        // rejection sampling keeps the draw unbiased
        let zone = u64::MAX - (u64::MAX % span);
        loop {
            let v = self.inner.next_u64();
            if v < zone {
                return lo + (v % span) as usize;
            }
        }
    }

    /// Two independent standard normals via Box–Muller.
    pub fn gaussian_pair(&mut self) -> (f64, f64) {
        let u1 = 1.0 - self.uniform(); // (0, 1]
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        (r * theta.cos(), r * theta.sin())
    }

    pub fn gaussian(&mut self) -> f64 {
        self.gaussian_pair().0
    }

    pub fn fill_gaussian(&mut self, out: &mut [f64]) {
        let mut chunks = out.chunks_exact_mut(2);
        for pair in &mut chunks {
            let (a, b) = self.gaussian_pair();
            pair[0] = a;
            pair[1] = b;
        }
        if let [last] = chunks.into_remainder() {
            *last = self.gaussian_pair().0;
        }
    }

    pub fn state(&self) -> RngState {
        RngState {
            key: self.key,
            stream: self.inner.get_stream(),
            word_pos: self.inner.get_word_pos().to_string(),
        }
    }

    pub fn from_state(state: &RngState) -> Result<Self> {
        let pos: u128 = state
            .word_pos
            .parse()
            .map_err(|_| Error::Format(format!("bad rng word position {:?}", state.word_pos)))?;
        let mut inner = ChaCha8Rng::seed_from_u64(state.key);
        inner.set_stream(state.stream);
        inner.set_word_pos(pos);
        Ok(Rng {
            key: state.key,
            inner,
        })
    }
}

/// I.i.d. standard-normal tensor. Consumes `2 * ceil(numel / 2)` uniforms.
pub fn gaussian_sample(rng: &mut Rng, shape: &[usize]) -> Result<Tensor> {
    let n: usize = shape.iter().product();
    if shape.is_empty() || n == 0 {
        return Err(Error::InvalidShape(format!(
            "gaussian_sample needs a non-empty shape, got {shape:?}"
        )));
    }
    let mut data = vec![0.0; n];
    rng.fill_gaussian(&mut data);
    Tensor::new(shape.to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_values() {
        let a = gaussian_sample(&mut Rng::new(7), &[4]).unwrap();
        let b = gaussian_sample(&mut Rng::new(7), &[4]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_shape_is_rejected() {
        assert!(matches!(
            gaussian_sample(&mut Rng::new(1), &[]),
            Err(Error::InvalidShape(_))
        ));
        assert!(matches!(
            gaussian_sample(&mut Rng::new(1), &[3, 0]),
            Err(Error::InvalidShape(_))
        ));
    }

    #[test]
    fn sample_mean_within_clt_band() {
        // sd of the mean is 10^{-5/2}; allow 3 sd
        let bound = 3.0 * 10f64.powf(-2.5);
        for seed in [7, 8] {
            let t = gaussian_sample(&mut Rng::new(seed), &[100_000]).unwrap();
            assert!(t.mean().abs() < bound, "seed {seed}: mean {}", t.mean());
            let var = t.data().iter().map(|v| v * v).sum::<f64>() / 1e5;
            assert!((var - 1.0).abs() < 0.02);
        }
    }

    #[test]
    fn state_round_trip_resumes_stream() {
        let mut rng = Rng::new(42);
        for _ in 0..13 {
            rng.next_u64();
        }
        let snap = rng.state();
        let expect: Vec<u64> = (0..5).map(|_| rng.next_u64()).collect();
        let mut restored = Rng::from_state(&snap).unwrap();
        let got: Vec<u64> = (0..5).map(|_| restored.next_u64()).collect();
        assert_eq!(expect, got);
    }

    #[test]
    fn fork_is_deterministic_and_distinct() {
        let mut a = Rng::new(3);
        let mut b = Rng::new(3);
        let mut fa = a.fork();
        let mut fb = b.fork();
        assert_eq!(fa.next_u64(), fb.next_u64());
        assert_ne!(a.next_u64(), fa.next_u64());
    }

    #[test]
    fn uniform_int_covers_range() {
        let mut rng = Rng::new(5);
        let mut seen = [false; 4];
        for _ in 0..200 {
            let v = rng.uniform_int(1, 4);
            assert!((1..=4).contains(&v));
            seen[v - 1] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }
}
