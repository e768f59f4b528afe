//! Binary container for named tensors: little-endian, length-prefixed.
//!
//! Layout: magic `BFT1`, entry count (u32), then per entry the name length
//! (u32) and UTF-8 bytes, rank (u32), each dimension (u64) and the values
//! (f64).

use crate::tensor::Tensor;
use crate::AutogradError;

const MAGIC: &[u8; 4] = b"BFT1";

pub fn encode<'a>(items: impl IntoIterator<Item = (&'a str, &'a Tensor)>) -> Vec<u8> {
    let items: Vec<_> = items.into_iter().collect();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(items.len() as u32).to_le_bytes());
    for (name, t) in items {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], AutogradError> {
        if self.pos + n > self.bytes.len() {
            return Err(AutogradError::Decode(format!(
                "truncated tensor blob at byte {}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, AutogradError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, AutogradError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, AutogradError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<(String, Tensor)>, AutogradError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(AutogradError::Decode("bad magic in tensor blob".into()));
    }
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| AutogradError::Decode("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64()? as usize);
        }
        let n: usize = shape.iter().product();
        if n.saturating_mul(8) > bytes.len() - r.pos {
            return Err(AutogradError::Decode(format!("tensor {name:?} exceeds blob size")));
        }
        let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
        out.push((name, Tensor::new(shape, data)));
    }
    if r.pos != bytes.len() {
        return Err(AutogradError::Decode("trailing bytes after tensor blob".into()));
    }
    Ok(out)
}
