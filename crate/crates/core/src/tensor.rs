//! Dense NCHW tensors and the scalar formats the engine understands.
//!
//! Values are always held as `f32`. A tensor tagged `Float16` or `Fixed16`
//! only ever stores values that the tag can represent exactly; conversion
//! between formats goes through [`Tensor::convert`] and is never implicit.

use std::fmt;

use crate::error::{Error, Result};

/// Largest finite binary16 value.
pub const F16_MAX: f32 = 65504.0;

pub type Shape4 = [usize; 4];

/// Scalar representation of a tensor's elements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScalarFormat {
    Float32,
    /// IEEE 754 binary16.
    Float16,
    /// Signed 16-bit fixed point, value = raw / 2^frac_bits.
    Fixed16 {
        frac_bits: u8,
    },
}

/// Storage width family, ignoring the fixed-point scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Precision {
    Float32,
    Float16,
    Fixed16,
}

impl ScalarFormat {
    pub const MIN_FRAC_BITS: u8 = 1;
    pub const MAX_FRAC_BITS: u8 = 14;

    pub fn fixed16(frac_bits: u8) -> Result<Self> {
        if !(Self::MIN_FRAC_BITS..=Self::MAX_FRAC_BITS).contains(&frac_bits) {
            return Err(Error::Argument(format!(
                "fixed16 frac_bits must be in [1, 14], got {frac_bits}"
            )));
        }
        Ok(ScalarFormat::Fixed16 { frac_bits })
    }

    pub fn precision(self) -> Precision {
        match self {
            ScalarFormat::Float32 => Precision::Float32,
            ScalarFormat::Float16 => Precision::Float16,
            ScalarFormat::Fixed16 { .. } => Precision::Fixed16,
        }
    }

    pub fn bytes_per_scalar(self) -> usize {
        match self {
            ScalarFormat::Float32 => 4,
            ScalarFormat::Float16 | ScalarFormat::Fixed16 { .. } => 2,
        }
    }

    /// Nearest representable value (saturating).
    pub fn quantize(self, x: f32) -> f32 {
        match self {
            ScalarFormat::Float32 => x,
            ScalarFormat::Float16 => f16_bits_to_f32(f32_to_f16_bits(x)),
            ScalarFormat::Fixed16 { frac_bits } => {
                fixed16_to_f32(f32_to_fixed16(x, frac_bits), frac_bits)
            }
        }
    }

    pub fn is_representable(self, x: f32) -> bool {
        let q = self.quantize(x);
        q == x || (q.is_nan() && x.is_nan())
    }
}

impl fmt::Display for ScalarFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScalarFormat::Float32 => f.write_str("float32"),
            ScalarFormat::Float16 => f.write_str("float16"),
            ScalarFormat::Fixed16 { frac_bits } => write!(f, "fixed16(frac_bits={frac_bits})"),
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::Float32 => "float32",
            Precision::Float16 => "float16",
            Precision::Fixed16 => "fixed16",
        })
    }
}

/// f32 -> binary16 bits, round-to-nearest-even, saturating at +-65504.
///
/// NaN maps to a quiet NaN; infinities saturate like any other
/// out-of-range value.
pub fn f32_to_f16_bits(value: f32) -> u16 {
    if value.is_nan() {
        return 0x7E00 | ((value.to_bits() >> 16) & 0x8000) as u16;
    }
    let clamped = value.clamp(-F16_MAX, F16_MAX);
    let bits = clamped.to_bits();
    let sign = ((bits >> 16) & 0x8000) as u16;
    let exp = ((bits >> 23) & 0xFF) as i32;
    let man = bits & 0x7F_FFFF;
    let half_exp = exp - 127 + 15;

    if half_exp <= 0 {
        // Below 2^-25 everything rounds to zero (2^-25 itself ties to even = 0).
        if half_exp < -10 {
            return sign;
        }
        let m = man | 0x80_0000;
        let shift = (14 - half_exp) as u32;
        let mut k = m >> shift;
        let rem = m & ((1 << shift) - 1);
        let halfway = 1 << (shift - 1);
        if rem > halfway || (rem == halfway && k & 1 == 1) {
            k += 1;
        }
        return sign | k as u16;
    }

    let mut h = ((half_exp as u32) << 10) | (man >> 13);
    let rem = man & 0x1FFF;
    if rem > 0x1000 || (rem == 0x1000 && h & 1 == 1) {
        h += 1;
    }
    sign | h as u16
}

/// binary16 bits -> f32 (exact).
pub fn f16_bits_to_f32(h: u16) -> f32 {
    let sign = ((h & 0x8000) as u32) << 16;
    let exp = ((h >> 10) & 0x1F) as u32;
    let man = (h & 0x3FF) as u32;
    match exp {
        0 => {
            // zero / subnormal: man * 2^-24
            let v = man as f32 * f32::from_bits(0x3380_0000);
            f32::from_bits(sign | v.to_bits())
        }
        0x1F => f32::from_bits(sign | 0x7F80_0000 | (man << 13)),
        _ => f32::from_bits(sign | ((exp + 127 - 15) << 23) | (man << 13)),
    }
}

/// f32 -> fixed16 raw, round half to even, saturating at the i16 bounds.
pub fn f32_to_fixed16(x: f32, frac_bits: u8) -> i16 {
    if x.is_nan() {
        return 0;
    }
    let scaled = (x as f64 * (1u32 << frac_bits) as f64).round_ties_even();
    scaled.clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

pub fn fixed16_to_f32(raw: i16, frac_bits: u8) -> f32 {
    raw as f32 / (1u32 << frac_bits) as f32
}

/// Dense 4-D array in (n, c, h, w) order, w fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Shape4,
    format: ScalarFormat,
    data: Vec<f32>,
}

impl Tensor {
    /// Tensor of `shape` with every element equal to `fill`.
    ///
    /// `fill` must be exactly representable in `format`.
    pub fn new(shape: Shape4, format: ScalarFormat, fill: f32) -> Result<Self> {
        if !format.is_representable(fill) {
            return Err(Error::Range(format!(
                "fill value {fill} is not representable in {format}"
            )));
        }
        Ok(Tensor {
            shape,
            format,
            data: vec![fill; shape.iter().product()],
        })
    }

    pub fn zeros(shape: Shape4) -> Self {
        Tensor {
            shape,
            format: ScalarFormat::Float32,
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: Shape4, data: Vec<f32>) -> Result<Self> {
        Self::from_vec_in(shape, ScalarFormat::Float32, data)
    }

    /// Wrap `data` as a tensor in `format`; every value must already be representable.
    pub fn from_vec_in(shape: Shape4, format: ScalarFormat, data: Vec<f32>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::Dimension(format!(
                "shape {shape:?} needs {expected} elements, got {}",
                data.len()
            )));
        }
        if format != ScalarFormat::Float32 {
            if let Some(bad) = data.iter().find(|v| !format.is_representable(**v)) {
                return Err(Error::Range(format!(
                    "value {bad} is not representable in {format}"
                )));
            }
        }
        Ok(Tensor {
            shape,
            format,
            data,
        })
    }

    pub fn shape(&self) -> Shape4 {
        self.shape
    }

    pub fn format(&self) -> ScalarFormat {
        self.format
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Mutable access to the values. Only float32 tensors may be mutated in place.
    pub fn data_mut(&mut self) -> &mut [f32] {
        assert_eq!(
            self.format,
            ScalarFormat::Float32,
            "in-place mutation is only allowed on float32 tensors"
        );
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    /// Elements per batch item (c * h * w).
    pub fn item_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }

    pub fn item(&self, n: usize) -> &[f32] {
        let len = self.item_len();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn reshape(self, shape: Shape4) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::Dimension(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        Ok(Tensor { shape, ..self })
    }

    pub fn get(&self, n: usize, c: usize, y: usize, x: usize) -> f32 {
        let [_, cs, hs, ws] = self.shape;
        self.data[((n * cs + c) * hs + y) * ws + x]
    }

    /// Element-wise conversion to `target` (saturating, never fails).
    pub fn convert(&self, target: ScalarFormat) -> Tensor {
        if target == self.format {
            return self.clone();
        }
        Tensor {
            shape: self.shape,
            format: target,
            data: self.data.iter().map(|&v| target.quantize(v)).collect(),
        }
    }

    /// Largest absolute element, 0 for an empty tensor.
    pub fn max_abs(&self) -> f32 {
        self.data.iter().fold(0.0f32, |m, v| m.max(v.abs()))
    }

    /// Raw int16 words for a fixed16 tensor.
    pub fn fixed16_raw(&self) -> Option<Vec<i16>> {
        match self.format {
            ScalarFormat::Fixed16 { frac_bits } => Some(
                self.data
                    .iter()
                    .map(|&v| f32_to_fixed16(v, frac_bits))
                    .collect(),
            ),
            _ => None,
        }
    }

    /// Little-endian encoding of the values in this tensor's own format.
    pub fn encode_le(&self, out: &mut Vec<u8>) {
        match self.format {
            ScalarFormat::Float32 => {
                for v in &self.data {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            ScalarFormat::Float16 => {
                for v in &self.data {
                    out.extend_from_slice(&f32_to_f16_bits(*v).to_le_bytes());
                }
            }
            ScalarFormat::Fixed16 { frac_bits } => {
                for v in &self.data {
                    out.extend_from_slice(&f32_to_fixed16(*v, frac_bits).to_le_bytes());
                }
            }
        }
    }

    /// Inverse of [`Tensor::encode_le`]; `bytes` must be exactly the payload.
    pub fn decode_le(shape: Shape4, format: ScalarFormat, bytes: &[u8]) -> Result<Self> {
        let count: usize = shape.iter().product();
        let width = format.bytes_per_scalar();
        if bytes.len() != count * width {
            return Err(Error::Format(format!(
                "payload for {shape:?} in {format} needs {} bytes, got {}",
                count * width,
                bytes.len()
            )));
        }
        let data = match format {
            ScalarFormat::Float32 => bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
            ScalarFormat::Float16 => bytes
                .chunks_exact(2)
                .map(|c| f16_bits_to_f32(u16::from_le_bytes([c[0], c[1]])))
                .collect(),
            ScalarFormat::Fixed16 { frac_bits } => bytes
                .chunks_exact(2)
                .map(|c| fixed16_to_f32(i16::from_le_bytes([c[0], c[1]]), frac_bits))
                .collect(),
        };
        Ok(Tensor {
            shape,
            format,
            data,
        })
    }
}
