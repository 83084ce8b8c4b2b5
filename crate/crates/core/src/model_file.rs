//! Binary surrogate file.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic     8 bytes   b"SRHCMLP\0"
//! version   u32       FORMAT_VERSION
//! length    u64       payload byte count
//! payload   length bytes:
//!   n_dims            u32
//!   dims              n_dims x u32
//!   hidden activation u8   (1 = SELU, 0 = identity)
//!   output activation u8
//!   output transform  u8   (1 = log10 flux)
//!   input names       dims[0] x (u16 byte length, UTF-8 bytes)
//!   input offset      dims[0] x f64
//!   input scale       dims[0] x f64
//!   output offset     dims[last] x f64
//!   output scale      dims[last] x f64
//!   per layer l:      weights dims[l+1] x dims[l] f64 (row-major), biases dims[l+1] f64
//! checksum  32 bytes  SHA-256 of the payload
//! ```

use std::path::Path;

use ndarray::{Array1, Array2};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::{Activation, Mlp};
use crate::surrogate::{AffineScaler, Surrogate};

pub const MAGIC: &[u8; 8] = b"SRHCMLP\0";
pub const FORMAT_VERSION: u32 = 1;
const LOG10_FLUX: u8 = 1;
const HEADER_LEN: usize = 8 + 4 + 8;
const CHECKSUM_LEN: usize = 32;

pub fn save_model(model: &Surrogate, path: &Path) -> Result<()> {
    std::fs::write(path, encode(model))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<Surrogate> {
    decode(&std::fs::read(path)?)
}

pub fn encode(model: &Surrogate) -> Vec<u8> {
    let net = &model.net;
    let mut p = Vec::with_capacity(16 + 8 * (net.n_params() + 4 * net.input_dim()));
    p.extend((net.dims().len() as u32).to_le_bytes());
    for &d in net.dims() {
        p.extend((d as u32).to_le_bytes());
    }
    p.push(net.hidden_activation().tag());
    p.push(net.output_activation().tag());
    p.push(LOG10_FLUX);
    for name in &model.input_names {
        p.extend((name.len() as u16).to_le_bytes());
        p.extend(name.as_bytes());
    }
    let floats = model
        .input
        .offset
        .iter()
        .chain(&model.input.scale)
        .chain(&model.output.offset)
        .chain(&model.output.scale);
    for v in floats {
        p.extend(v.to_le_bytes());
    }
    for (w, b) in net.weights().iter().zip(net.biases()) {
        for v in w.iter().chain(b.iter()) {
            p.extend(v.to_le_bytes());
        }
    }

    let mut out = Vec::with_capacity(HEADER_LEN + p.len() + CHECKSUM_LEN);
    out.extend(MAGIC);
    out.extend(FORMAT_VERSION.to_le_bytes());
    out.extend((p.len() as u64).to_le_bytes());
    out.extend(&p);
    out.extend(Sha256::digest(&p));
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Corrupt(format!("payload ends early at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Corrupt("size overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn decode(bytes: &[u8]) -> Result<Surrogate> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Corrupt("file shorter than its header".into()));
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::Corrupt("missing model-file magic".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let expected_total = HEADER_LEN.checked_add(len).and_then(|n| n.checked_add(CHECKSUM_LEN));
    if expected_total != Some(bytes.len()) {
        return Err(Error::Corrupt(format!(
            "declared payload of {len} bytes does not match a file of {} bytes",
            bytes.len()
        )));
    }
    let payload = &bytes[HEADER_LEN..HEADER_LEN + len];
    if Sha256::digest(payload).as_slice() != &bytes[HEADER_LEN + len..] {
        return Err(Error::Corrupt("checksum mismatch".into()));
    }

    let mut c = Cursor { buf: payload, pos: 0 };
    let n_dims = c.u32()? as usize;
    if !(2..=64).contains(&n_dims) {
        return Err(Error::Corrupt(format!("implausible layer count {n_dims}")));
    }
    let dims = (0..n_dims)
        .map(|_| c.u32().map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let hidden = Activation::from_tag(c.u8()?).ok_or_else(|| Error::Corrupt("unknown activation tag".into()))?;
    let output = Activation::from_tag(c.u8()?).ok_or_else(|| Error::Corrupt("unknown activation tag".into()))?;
    if c.u8()? != LOG10_FLUX {
        return Err(Error::Corrupt("unknown output transform".into()));
    }
    let (n_in, n_out) = (dims[0], dims[n_dims - 1]);
    let mut names = Vec::with_capacity(n_in);
    for _ in 0..n_in {
        let n = c.u16()? as usize;
        let s = std::str::from_utf8(c.take(n)?).map_err(|_| Error::Corrupt("input name is not UTF-8".into()))?;
        names.push(s.to_string());
    }
    let input = AffineScaler {
        offset: c.f64s(n_in)?,
        scale: c.f64s(n_in)?,
    };
    let out_scale = AffineScaler {
        offset: c.f64s(n_out)?,
        scale: c.f64s(n_out)?,
    };
    let mut weights = Vec::with_capacity(n_dims - 1);
    let mut biases = Vec::with_capacity(n_dims - 1);
    for pair in dims.windows(2) {
        let w = c.f64s(pair[0] * pair[1])?;
        weights.push(Array2::from_shape_vec((pair[1], pair[0]), w).map_err(|e| Error::Corrupt(e.to_string()))?);
        biases.push(Array1::from(c.f64s(pair[1])?));
    }
    if c.pos != payload.len() {
        return Err(Error::Corrupt(format!("{} trailing payload bytes", payload.len() - c.pos)));
    }
    let net = Mlp::from_parts(weights, biases, hidden, output)
        .map_err(|e| Error::Corrupt(format!("inconsistent network: {e}")))?;
    Surrogate::new(net, input, out_scale, names).map_err(|e| Error::Corrupt(format!("inconsistent scaling: {e}")))
}
