//! Binary tensor format.
//!
//! ```text
//! "SSLT" | u8 dtype (0 = f64, 1 = f32) | u8 rank | rank × u32 extents (LE) | payload (LE, row-major)
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;
use crate::scalar::{DType, Scalar};

pub const TENSOR_MAGIC: &[u8; 4] = b"SSLT";

/// Serializes `t` in its own dtype.
pub fn encode_tensor<T: Scalar>(t: &Tensor<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(6 + 4 * t.rank() + t.len() * T::DTYPE.size_of());
    out.extend_from_slice(TENSOR_MAGIC);
    out.push(T::DTYPE as u8);
    out.push(t.rank() as u8);
    for &e in t.shape() {
        out.extend_from_slice(&(e as u32).to_le_bytes());
    }
    for &v in t.data() {
        v.write_le(&mut out);
    }
    out
}

pub fn write_tensor<T: Scalar>(w: &mut impl Write, t: &Tensor<T>) -> std::io::Result<()> {
    w.write_all(&encode_tensor(t))
}

fn read_exact_or<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| Error::format("<tensor stream>", format!("truncated {what}: {e}")))
}

/// Reads one tensor, converting the stored dtype to `T`.
pub fn read_tensor<T: Scalar, R: Read>(r: &mut R) -> Result<Tensor<T>> {
    let mut head = [0u8; 6];
    read_exact_or(r, &mut head, "header")?;
    if &head[..4] != TENSOR_MAGIC {
        return Err(Error::format("<tensor stream>", "bad magic, expected SSLT"));
    }
    let dtype = DType::from_tag(head[4])
        .ok_or_else(|| Error::format("<tensor stream>", format!("unknown dtype tag {}", head[4])))?;
    let rank = head[5] as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let mut b = [0u8; 4];
        read_exact_or(r, &mut b, "extent")?;
        shape.push(u32::from_le_bytes(b) as usize);
    }
    let n: usize = shape.iter().product();
    let mut payload = vec![0u8; n * dtype.size_of()];
    read_exact_or(r, &mut payload, "payload")?;
    let data: Vec<T> = match dtype {
        DType::F64 => payload
            .chunks_exact(8)
            .map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
            .collect(),
        DType::F32 => payload
            .chunks_exact(4)
            .map(|c| T::lit(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
            .collect(),
    };
    Tensor::new(&shape, data)
}

pub fn save_tensor<T: Scalar>(path: &Path, t: &Tensor<T>) -> Result<()> {
    std::fs::write(path, encode_tensor(t)).map_err(|e| Error::io(path, e))
}

pub fn load_tensor<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_tensor(&mut bytes.as_slice()).map_err(|e| match e {
        Error::Format { msg, .. } => Error::format(path, msg),
        other => other,
    })
}
