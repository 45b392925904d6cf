//! Post-training conversion to 16-bit parameter storage.
//!
//! Quantized networks keep their arithmetic in float32: parameters are
//! rounded to the storage format and widened on use, so any difference from
//! the float32 model comes from parameter rounding alone.

use std::fmt::{self, Write as _};

use crate::error::{Error, Result};
use crate::network::{argmax_rows, Network};
use crate::tensor::{Precision, ScalarFormat, Tensor};

/// Largest fraction width allowed for fixed16 storage.
pub const MAX_FRAC_BITS: u8 = 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuantFormat {
    Float16,
    Fixed16,
}

impl fmt::Display for QuantFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QuantFormat::Float16 => "fp16",
            QuantFormat::Fixed16 => "fixed16",
        })
    }
}

impl std::str::FromStr for QuantFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fp16" | "float16" => Ok(QuantFormat::Float16),
            "fixed16" => Ok(QuantFormat::Fixed16),
            _ => Err(Error::Argument(format!(
                "unknown format {s:?}; expected fp16 or fixed16"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorError {
    pub name: String,
    pub frac_bits: Option<u8>,
    pub max_abs_error: f64,
    pub mean_abs_error: f64,
}

/// Agreement between two networks on one batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Parity {
    /// Fraction of samples with the same top-1 class.
    pub agreement: f64,
    /// Largest L-infinity distance between probability rows.
    pub max_deviation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizationReport {
    pub format: QuantFormat,
    pub tensors: Vec<TensorError>,
    pub payload_bytes_before: usize,
    pub payload_bytes_after: usize,
    pub probes: usize,
    pub parity: Parity,
}

impl QuantizationReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "format: {}", self.format);
        let _ = writeln!(
            s,
            "payload: {} -> {} bytes ({:.3} MiB)",
            self.payload_bytes_before,
            self.payload_bytes_after,
            self.payload_bytes_after as f64 / (1024.0 * 1024.0)
        );
        let _ = writeln!(
            s,
            "top-1 agreement vs float32: {:.4} over {} probes (max prob deviation {:.3e})",
            self.parity.agreement, self.probes, self.parity.max_deviation
        );
        let _ = writeln!(
            s,
            "{:<20} {:>9} {:>12} {:>12}",
            "tensor", "frac_bits", "max_err", "mean_err"
        );
        for t in &self.tensors {
            let fb = t.frac_bits.map_or("-".to_string(), |f| f.to_string());
            let _ = writeln!(
                s,
                "{:<20} {:>9} {:>12.3e} {:>12.3e}",
                t.name, fb, t.max_abs_error, t.mean_abs_error
            );
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("tensor,frac_bits,max_abs_error,mean_abs_error\n");
        for t in &self.tensors {
            let fb = t.frac_bits.map_or(String::new(), |f| f.to_string());
            let _ = writeln!(
                s,
                "{},{fb},{:e},{:e}",
                t.name, t.max_abs_error, t.mean_abs_error
            );
        }
        let _ = writeln!(s, "payload_bytes_before,,{},", self.payload_bytes_before);
        let _ = writeln!(s, "payload_bytes_after,,{},", self.payload_bytes_after);
        let _ = writeln!(s, "agreement,,{},", self.parity.agreement);
        let _ = writeln!(s, "max_deviation,,{:e},", self.parity.max_deviation);
        s
    }
}

fn require_float32(net: &Network) -> Result<()> {
    if net.precision() != Precision::Float32 {
        return Err(Error::Argument(format!(
            "quantization expects a float32 network, got {:?}",
            net.precision()
        )));
    }
    Ok(())
}

/// Every parameter rounded to binary16.
pub fn to_float16(net: &Network) -> Result<Network> {
    require_float32(net)?;
    Ok(net.convert(ScalarFormat::Float16))
}

/// Largest `f <= 14` with `max_abs < 2^(15 - f)` whose rounding does not
/// saturate. All-zero tensors get 14.
pub fn choose_frac_bits(max_abs: f32) -> Result<u8> {
    let m = max_abs as f64;
    if !m.is_finite() {
        return Err(Error::Range(format!("cannot store {max_abs} in fixed16")));
    }
    (1..=MAX_FRAC_BITS)
        .rev()
        .find(|&f| (m * f64::powi(2.0, f as i32)).round_ties_even() <= i16::MAX as f64)
        .ok_or_else(|| Error::Range(format!("max |w| = {max_abs} exceeds fixed16 range")))
}

fn tensor_errors(name: &str, a: &Tensor, b: &Tensor, frac_bits: Option<u8>) -> TensorError {
    let (mut max, mut sum) = (0.0f64, 0.0f64);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let e = (x as f64 - y as f64).abs();
        max = max.max(e);
        sum += e;
    }
    TensorError {
        name: name.to_string(),
        frac_bits,
        max_abs_error: max,
        mean_abs_error: if a.is_empty() {
            0.0
        } else {
            sum / a.len() as f64
        },
    }
}

/// Convert to `format` and measure against the original on `probe`.
pub fn quantize(
    net: &Network,
    format: QuantFormat,
    probe: &Tensor,
) -> Result<(Network, QuantizationReport)> {
    require_float32(net)?;
    let mut tensors = Vec::new();
    let quantized = net.map_tensors(|name, t| {
        let (fmt, fb) = match format {
            QuantFormat::Float16 => (ScalarFormat::Float16, None),
            QuantFormat::Fixed16 => {
                let f = choose_frac_bits(t.max_abs())?;
                (ScalarFormat::fixed16(f)?, Some(f))
            }
        };
        let q = t.convert(fmt);
        tensors.push(tensor_errors(name, t, &q, fb));
        Ok(q)
    })?;
    let parity = parity_eval(net, &quantized, probe)?;
    let report = QuantizationReport {
        format,
        tensors,
        payload_bytes_before: net.payload_bytes(),
        payload_bytes_after: quantized.payload_bytes(),
        probes: probe.shape()[0],
        parity,
    };
    Ok((quantized, report))
}

/// Per-tensor fixed16 conversion with zero weight saturation.
pub fn to_fixed16(net: &Network, probe: &Tensor) -> Result<(Network, QuantizationReport)> {
    quantize(net, QuantFormat::Fixed16, probe)
}

pub fn parity_eval(a: &Network, b: &Network, batch: &Tensor) -> Result<Parity> {
    let n = batch.shape()[0];
    if n == 0 {
        return Err(Error::Argument("parity needs at least one probe".into()));
    }
    let pa = a.forward(batch)?;
    let pb = b.forward(batch)?;
    if pa.shape() != pb.shape() {
        return Err(Error::Dimension(format!(
            "outputs {:?} vs {:?}",
            pa.shape(),
            pb.shape()
        )));
    }
    let same = argmax_rows(&pa)
        .iter()
        .zip(argmax_rows(&pb))
        .filter(|(x, y)| **x == *y)
        .count();
    let max_deviation = pa
        .data()
        .iter()
        .zip(pb.data())
        .map(|(x, y)| (x - y).abs() as f64)
        .fold(0.0, f64::max);
    Ok(Parity {
        agreement: same as f64 / n as f64,
        max_deviation,
    })
}
