//! `DPT1` tensor files: magic `DPT1`, u32 LE rank, rank × u32 LE extents,
//! then the payload as row-major f32 LE.

use std::fs;
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};

pub const DPT_MAGIC: &[u8; 4] = b"DPT1";

pub fn encode_dpt(t: &Tensor, out: &mut Vec<u8>) {
    out.extend_from_slice(DPT_MAGIC);
    out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
    for &e in t.shape() {
        out.extend_from_slice(&(e as u32).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

pub fn dpt_bytes(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * t.ndim() + 4 * t.numel());
    encode_dpt(t, &mut out);
    out
}

/// Decodes one tensor from the front of `bytes`, returning it and the number
/// of bytes consumed.
pub fn decode_dpt(bytes: &[u8]) -> Result<(Tensor, usize)> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4)? != DPT_MAGIC {
        return Err(Error::Format("bad DPT1 magic".into()));
    }
    let ndim = cur.u32()? as usize;
    if ndim == 0 || ndim > 16 {
        return Err(Error::Format(format!("implausible DPT1 rank {ndim}")));
    }
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        shape.push(cur.u32()? as usize);
    }
    let n = shape
        .iter()
        .try_fold(1usize, |acc, &e| acc.checked_mul(e))
        .ok_or_else(|| Error::Format("DPT1 extent overflow".into()))?;
    let payload = cur.take(n.checked_mul(4).ok_or_else(|| Error::Format("DPT1 size overflow".into()))?)?;
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let t = Tensor::new(shape, data).map_err(|e| Error::Format(format!("DPT1 payload: {e}")))?;
    Ok((t, cur.pos))
}

pub fn write_dpt(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, dpt_bytes(t)).map_err(|e| Error::io(path, e))
}

pub fn read_dpt(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (t, used) = decode_dpt(&bytes)?;
    if used != bytes.len() {
        return Err(Error::Format(format!(
            "{}: {} trailing bytes",
            path.display(),
            bytes.len() - used
        )));
    }
    Ok(t)
}

pub(crate) struct Cursor<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
}

impl<'a> Cursor<'a> {
    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("unexpected end of data".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout_is_exact() {
        let t = Tensor::new(vec![1, 2], vec![1.0, -2.5]).unwrap();
        let b = dpt_bytes(&t);
        let mut want = b"DPT1".to_vec();
        want.extend_from_slice(&2u32.to_le_bytes());
        want.extend_from_slice(&1u32.to_le_bytes());
        want.extend_from_slice(&2u32.to_le_bytes());
        want.extend_from_slice(&1.0f32.to_le_bytes());
        want.extend_from_slice(&(-2.5f32).to_le_bytes());
        assert_eq!(b, want);
    }

    #[test]
    fn truncated_is_format_error() {
        let t = Tensor::full(&[3, 3], 0.5);
        let b = dpt_bytes(&t);
        for cut in [0, 3, 7, 12, b.len() - 1] {
            assert!(matches!(decode_dpt(&b[..cut]), Err(Error::Format(_))), "cut {cut}");
        }
    }

    #[test]
    fn bad_magic() {
        let mut b = dpt_bytes(&Tensor::scalar(1.0));
        b[3] = b'2';
        assert!(matches!(decode_dpt(&b), Err(Error::Format(_))));
    }

    proptest! {
        #[test]
        fn round_trip_of_f32_values(shape in prop::collection::vec(1usize..5, 1..4), seed in any::<u64>()) {
            let mut rng = crate::numerics::Rng::new(seed);
            let mut t = Tensor::from_fn(&shape, |_| rng.gaussian() * 10.0);
            t.quantize_f32();
            let (back, used) = decode_dpt(&dpt_bytes(&t)).unwrap();
            prop_assert_eq!(used, 8 + 4 * shape.len() + 4 * t.numel());
            prop_assert_eq!(back, t);
        }
    }
}
