//! Binary weight files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "MICRONNT"
//! version    u32      1
//! spec_len   u32      byte length of the spec text
//! spec       utf-8    architecture text form
//! count      u32      number of tensors (weights and bias per layer)
//! per tensor:
//!   tag        u8     0 = float32, 1 = float16, 2 = fixed16
//!   frac_bits  u8     fixed16 only, else 0
//!   reserved   u16    0
//!   shape      4 x u32
//! payload    every tensor's values, contiguous, in header order
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{ScalarFormat, Shape4, Tensor};

use super::model::{param_shapes, LayerParams, Network};
use super::spec::ArchitectureSpec;

pub const MAGIC: &[u8; 8] = b"MICRONNT";
pub const VERSION: u32 = 1;

fn format_tag(f: ScalarFormat) -> (u8, u8) {
    match f {
        ScalarFormat::Float32 => (0, 0),
        ScalarFormat::Float16 => (1, 0),
        ScalarFormat::Fixed16 { frac_bits } => (2, frac_bits),
    }
}

fn format_from_tag(tag: u8, frac_bits: u8) -> Result<ScalarFormat> {
    match (tag, frac_bits) {
        (0, 0) => Ok(ScalarFormat::Float32),
        (1, 0) => Ok(ScalarFormat::Float16),
        (2, f) => ScalarFormat::fixed16(f).map_err(|e| Error::Format(e.to_string())),
        _ => Err(Error::Format(format!(
            "unknown scalar format tag {tag}/{frac_bits}"
        ))),
    }
}

/// Serialize `net` to bytes.
pub fn to_bytes(net: &Network) -> Vec<u8> {
    let spec = net.spec().to_string();
    let tensors: Vec<&Tensor> = net.params().iter().flat_map(|p| p.tensors()).collect();
    let mut out = Vec::with_capacity(64 + spec.len() + net.payload_bytes() + tensors.len() * 20);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(spec.len() as u32).to_le_bytes());
    out.extend_from_slice(spec.as_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in &tensors {
        let (tag, frac) = format_tag(t.format());
        out.extend_from_slice(&[tag, frac, 0, 0]);
        for d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
    }
    for t in &tensors {
        t.encode_le(&mut out);
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("truncated file while reading {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<Network> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(8, "magic")? != MAGIC {
        return Err(Error::Format("bad magic; not a weight file".into()));
    }
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let spec_len = cur.u32("spec length")? as usize;
    let spec_text = std::str::from_utf8(cur.take(spec_len, "spec")?)
        .map_err(|_| Error::Format("spec text is not utf-8".into()))?;
    let spec: ArchitectureSpec = spec_text
        .parse()
        .map_err(|e: Error| Error::Format(format!("embedded spec: {e}")))?;
    spec.validate()
        .map_err(|e| Error::Format(format!("embedded spec: {e}")))?;
    let expected: Vec<Shape4> = param_shapes(&spec)?
        .into_iter()
        .flat_map(|(w, b)| [w, b])
        .collect();

    let count = cur.u32("tensor count")? as usize;
    if count != expected.len() {
        return Err(Error::Format(format!(
            "file declares {count} tensors, spec needs {}",
            expected.len()
        )));
    }
    let mut headers = Vec::with_capacity(count);
    for (i, want) in expected.iter().enumerate() {
        let h = cur.take(4, "tensor header")?;
        let format = format_from_tag(h[0], h[1])?;
        let mut shape = [0usize; 4];
        for d in &mut shape {
            *d = cur.u32("tensor shape")? as usize;
        }
        if shape != *want {
            return Err(Error::Format(format!(
                "tensor {i}: declared shape {shape:?}, spec implies {want:?}"
            )));
        }
        headers.push((format, shape));
    }
    let mut tensors = Vec::with_capacity(count);
    for (format, shape) in headers {
        let n: usize = shape.iter().product();
        let payload = cur.take(n * format.bytes_per_scalar(), "payload")?;
        tensors.push(Tensor::decode_le(shape, format, payload)?);
    }
    if cur.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes",
            bytes.len() - cur.pos
        )));
    }
    let mut it = tensors.into_iter();
    let mut params = Vec::with_capacity(count / 2);
    while let (Some(weights), Some(bias)) = (it.next(), it.next()) {
        params.push(LayerParams { weights, bias });
    }
    Network::from_parts(spec, params)
}

/// Write atomically: a sibling temp file is renamed into place, so a failed
/// save never leaves a partial model behind.
pub fn save(net: &Network, path: &Path) -> Result<()> {
    write_atomic(path, &to_bytes(net))
}

pub fn load(path: &Path) -> Result<Network> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = std::path::PathBuf::from(tmp);
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}
