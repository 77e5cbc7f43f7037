//! Portable binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "QKTM" (4 bytes)
//! format version  u32
//! layer count     u32
//! split_index     u32
//! input_dim       u32
//! num_classes     u32
//! per layer:      in_dim u32, out_dim u32
//! per layer:      weights row-major (out_dim x in_dim) f64 LE, bias f64 LE
//! ```
//!
//! Parameters are stored as 64-bit floats, so the round-trip is bit-exact in
//! double precision.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

use super::model::{DenseLayer, ModelParams};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"QKTM";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Serialize a model to the portable byte format.
pub fn save_checkpoint<S: Scalar>(model: &ModelParams<S>) -> Vec<u8> {
    let layers = model.layers();
    let mut out = Vec::with_capacity(24 + 8 * layers.len() + 8 * model.param_count());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(layers.len() as u32).to_le_bytes());
    out.extend_from_slice(&(model.split_index() as u32).to_le_bytes());
    out.extend_from_slice(&(model.input_dim() as u32).to_le_bytes());
    out.extend_from_slice(&(model.num_classes() as u32).to_le_bytes());
    for l in layers {
        out.extend_from_slice(&(l.in_dim() as u32).to_le_bytes());
        out.extend_from_slice(&(l.out_dim() as u32).to_le_bytes());
    }
    for l in layers {
        for v in l.weights.data().iter().chain(l.bias.iter()) {
            out.extend_from_slice(&v.to_f64().unwrap().to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint(format!("truncated stream while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Decode a checkpoint produced by [`save_checkpoint`].
pub fn load_checkpoint<S: Scalar>(bytes: &[u8]) -> Result<ModelParams<S>> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(format!("bad magic {magic:?}")));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let layer_count = r.u32("layer count")? as usize;
    let split_index = r.u32("split_index")? as usize;
    let input_dim = r.u32("input_dim")? as usize;
    let num_classes = r.u32("num_classes")? as usize;
    if layer_count == 0 {
        return Err(Error::Checkpoint("zero layers".into()));
    }
    let mut dims = Vec::with_capacity(layer_count);
    for i in 0..layer_count {
        let in_dim = r.u32(&format!("layer {i} in_dim"))? as usize;
        let out_dim = r.u32(&format!("layer {i} out_dim"))? as usize;
        dims.push((in_dim, out_dim));
    }
    if dims[0].0 != input_dim {
        return Err(Error::Checkpoint(format!(
            "first layer in_dim {} disagrees with header input_dim {input_dim}",
            dims[0].0
        )));
    }
    let mut layers = Vec::with_capacity(layer_count);
    for (i, &(in_dim, out_dim)) in dims.iter().enumerate() {
        let mut data = Vec::with_capacity(in_dim * out_dim);
        for _ in 0..in_dim * out_dim {
            let v = r.f64(&format!("layer {i} weights"))?;
            data.push(S::from_f64(v).ok_or_else(|| Error::Checkpoint("unrepresentable value".into()))?);
        }
        let mut bias = Vec::with_capacity(out_dim);
        for _ in 0..out_dim {
            let v = r.f64(&format!("layer {i} bias"))?;
            bias.push(S::from_f64(v).ok_or_else(|| Error::Checkpoint("unrepresentable value".into()))?);
        }
        layers.push(DenseLayer {
            weights: Matrix::from_vec(out_dim, in_dim, data)?,
            bias,
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after parameters",
            bytes.len() - r.pos
        )));
    }
    ModelParams::new(layers, split_index, num_classes)
        .map_err(|e| Error::Checkpoint(format!("inconsistent shapes: {e}")))
}
