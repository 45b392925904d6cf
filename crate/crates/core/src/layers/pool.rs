use crate::error::{Error, Result};
use crate::tensor::{Shape4, Tensor};

/// Max-pooling hyperparameters. Output size uses ceil rounding; windows that
/// run past the input edge are truncated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PoolParams {
    /// (kh, kw)
    pub kernel: (usize, usize),
    pub stride: usize,
}

impl PoolParams {
    pub fn new(kernel: usize, stride: usize) -> Self {
        PoolParams {
            kernel: (kernel, kernel),
            stride,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel.0 == 0 || self.kernel.1 == 0 || self.stride == 0 {
            return Err(Error::Spec(format!(
                "pool needs kernel and stride >= 1, got {self:?}"
            )));
        }
        Ok(())
    }

    /// `ceil((in - k) / stride) + 1` per axis, dropping a final window that
    /// would start past the input.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        self.validate()?;
        Ok((
            ceil_out(h, self.kernel.0, self.stride)?,
            ceil_out(w, self.kernel.1, self.stride)?,
        ))
    }
}

fn ceil_out(size: usize, k: usize, s: usize) -> Result<usize> {
    if k > size {
        return Err(Error::Dimension(format!(
            "pool kernel {k} larger than input {size}"
        )));
    }
    let mut out = (size - k).div_ceil(s) + 1;
    if (out - 1) * s >= size {
        out -= 1;
    }
    Ok(out)
}

/// Max pooling. Returns the pooled tensor and, per output element, the flat
/// index of the winning input element (ties go to the smallest row-major index).
pub fn maxpool_forward(input: &Tensor, p: &PoolParams) -> Result<(Tensor, Vec<usize>)> {
    let [n, c, h, w] = input.shape();
    let (oh, ow) = p.output_hw(h, w)?;
    let (kh, kw) = p.kernel;
    let data = input.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for y in 0..oh {
            let y0 = y * p.stride;
            let y1 = (y0 + kh).min(h);
            for x in 0..ow {
                let x0 = x * p.stride;
                let x1 = (x0 + kw).min(w);
                let mut best = base + y0 * w + x0;
                for yy in y0..y1 {
                    for xx in x0..x1 {
                        let idx = base + yy * w + xx;
                        // strict comparison keeps the earliest maximum
                        if data[idx] > data[best] {
                            best = idx;
                        }
                    }
                }
                out.push(data[best]);
                argmax.push(best);
            }
        }
    }
    Ok((Tensor::from_vec([n, c, oh, ow], out)?, argmax))
}

/// Routes each upstream gradient to its argmax source, accumulating where
/// windows overlap.
pub fn maxpool_backward(
    grad_out: &Tensor,
    argmax: &[usize],
    input_shape: Shape4,
) -> Result<Tensor> {
    if argmax.len() != grad_out.len() {
        return Err(Error::Internal(format!(
            "{} argmax indices for {} upstream gradients",
            argmax.len(),
            grad_out.len()
        )));
    }
    let mut grad_in = vec![0.0f32; input_shape.iter().product()];
    for (&src, &g) in argmax.iter().zip(grad_out.data()) {
        let slot = grad_in.get_mut(src).ok_or_else(|| {
            Error::Internal(format!("argmax index {src} outside input {input_shape:?}"))
        })?;
        *slot += g;
    }
    Tensor::from_vec(input_shape, grad_in)
}
