use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::gemm::{gemm, MatRef};

/// Hyperparameters of a 2-D convolution layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConvParams {
    pub out_channels: usize,
    /// (kh, kw)
    pub kernel: (usize, usize),
    pub stride: usize,
    pub pad: usize,
}

impl ConvParams {
    /// Stride 1, no padding, square kernel.
    pub fn new(out_channels: usize, kernel: usize) -> Self {
        ConvParams {
            out_channels,
            kernel: (kernel, kernel),
            stride: 1,
            pad: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.out_channels == 0 || self.kernel.0 == 0 || self.kernel.1 == 0 || self.stride == 0 {
            return Err(Error::Spec(format!(
                "conv needs out_channels, kernel and stride >= 1, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Output spatial size for an `h x w` input (floor rounding).
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        self.validate()?;
        let (kh, kw) = self.kernel;
        let (ph, pw) = (h + 2 * self.pad, w + 2 * self.pad);
        if ph < kh || pw < kw {
            return Err(Error::Dimension(format!(
                "kernel {kh}x{kw} does not fit padded input {ph}x{pw}"
            )));
        }
        Ok(((ph - kh) / self.stride + 1, (pw - kw) / self.stride + 1))
    }
}

/// Gradients of a convolution with respect to its three inputs.
#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Vec<f32>,
}

struct Geometry {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

impl Geometry {
    fn new(input: &Tensor, weights: &Tensor, p: &ConvParams) -> Result<Self> {
        let [n, cin, h, w] = input.shape();
        let [cout, wcin, kh, kw] = weights.shape();
        if wcin != cin {
            return Err(Error::Dimension(format!(
                "conv weights expect {wcin} input channels, input has {cin}"
            )));
        }
        if cout != p.out_channels || (kh, kw) != p.kernel {
            return Err(Error::Dimension(format!(
                "conv weights {:?} disagree with params {p:?}",
                weights.shape()
            )));
        }
        let (oh, ow) = p.output_hw(h, w)?;
        Ok(Geometry {
            n,
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            oh,
            ow,
            stride: p.stride,
            pad: p.pad,
        })
    }

    fn k(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }

    /// 1x1, stride 1, unpadded: the input plane already is the column matrix.
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    fn im2col(&self, item: &[f32], cols: &mut [f32]) {
        let p = self.positions();
        for c in 0..self.cin {
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = &mut cols[((c * self.kh + i) * self.kw + j) * p..][..p];
                    for y in 0..self.oh {
                        let sy = (y * self.stride + i) as isize - self.pad as isize;
                        let dst = &mut row[y * self.ow..(y + 1) * self.ow];
                        if sy < 0 || sy >= self.h as isize {
                            dst.fill(0.0);
                            continue;
                        }
                        let src = &item[(c * self.h + sy as usize) * self.w..][..self.w];
                        for (x, d) in dst.iter_mut().enumerate() {
                            let sx = (x * self.stride + j) as isize - self.pad as isize;
                            *d = if sx < 0 || sx >= self.w as isize {
                                0.0
                            } else {
                                src[sx as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f32], item: &mut [f32]) {
        let p = self.positions();
        for c in 0..self.cin {
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = &cols[((c * self.kh + i) * self.kw + j) * p..][..p];
                    for y in 0..self.oh {
                        let sy = (y * self.stride + i) as isize - self.pad as isize;
                        if sy < 0 || sy >= self.h as isize {
                            continue;
                        }
                        let dst = &mut item[(c * self.h + sy as usize) * self.w..][..self.w];
                        for x in 0..self.ow {
                            let sx = (x * self.stride + j) as isize - self.pad as isize;
                            if sx >= 0 && sx < self.w as isize {
                                dst[sx as usize] += row[y * self.ow + x];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `out[n,o,y,x] = bias[o] + sum_{c,i,j} input[n,c,y*s+i-pad,x*s+j-pad] * weights[o,c,i,j]`
///
/// Computed per batch item as one GEMM over an im2col buffer.
pub fn conv2d_forward(
    input: &Tensor,
    weights: &Tensor,
    bias: &[f32],
    p: &ConvParams,
) -> Result<Tensor> {
    let g = Geometry::new(input, weights, p)?;
    if bias.len() != g.cout {
        return Err(Error::Dimension(format!(
            "conv bias has {} entries, expected {}",
            bias.len(),
            g.cout
        )));
    }
    let (k, pos) = (g.k(), g.positions());
    let mut out = vec![0.0f32; g.n * g.cout * pos];
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![0.0f32; k * pos]
    };
    let wmat = MatRef::row_major(weights.data(), g.cout, k);
    for n in 0..g.n {
        let item = input.item(n);
        let dst = &mut out[n * g.cout * pos..(n + 1) * g.cout * pos];
        for (o, plane) in dst.chunks_exact_mut(pos).enumerate() {
            plane.fill(bias[o]);
        }
        let cmat = if g.is_pointwise() {
            MatRef::row_major(item, k, pos)
        } else {
            g.im2col(item, &mut cols);
            MatRef::row_major(&cols, k, pos)
        };
        gemm(wmat, cmat, 1.0, dst);
    }
    Tensor::from_vec([g.n, g.cout, g.oh, g.ow], out)
}

/// Exact gradients of [`conv2d_forward`].
pub fn conv2d_backward(
    input: &Tensor,
    weights: &Tensor,
    grad_out: &Tensor,
    p: &ConvParams,
) -> Result<ConvGrads> {
    conv2d_backward_impl(input, weights, grad_out, p, true)
}

pub(crate) fn conv2d_backward_impl(
    input: &Tensor,
    weights: &Tensor,
    grad_out: &Tensor,
    p: &ConvParams,
    want_input_grad: bool,
) -> Result<ConvGrads> {
    let g = Geometry::new(input, weights, p)?;
    let expected = [g.n, g.cout, g.oh, g.ow];
    if grad_out.shape() != expected {
        return Err(Error::Dimension(format!(
            "conv grad_out has shape {:?}, forward produced {expected:?}",
            grad_out.shape()
        )));
    }
    let (k, pos) = (g.k(), g.positions());
    let mut grad_w = vec![0.0f32; g.cout * k];
    let mut grad_b = vec![0.0f32; g.cout];
    let mut grad_in = vec![0.0f32; if want_input_grad { input.len() } else { 0 }];
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![0.0f32; k * pos]
    };
    let mut grad_cols = if want_input_grad && !g.is_pointwise() {
        vec![0.0f32; k * pos]
    } else {
        Vec::new()
    };
    let wmat = MatRef::row_major(weights.data(), g.cout, k);

    for n in 0..g.n {
        let go = grad_out.item(n);
        for (o, plane) in go.chunks_exact(pos).enumerate() {
            grad_b[o] += plane.iter().sum::<f32>();
        }
        let gmat = MatRef::row_major(go, g.cout, pos);
        let item = input.item(n);
        let cmat = if g.is_pointwise() {
            MatRef::row_major(item, k, pos)
        } else {
            g.im2col(item, &mut cols);
            MatRef::row_major(&cols, k, pos)
        };
        gemm(gmat, cmat.t(), 1.0, &mut grad_w);

        if want_input_grad {
            let gi = &mut grad_in[n * input.item_len()..(n + 1) * input.item_len()];
            if g.is_pointwise() {
                gemm(wmat.t(), gmat, 0.0, gi);
            } else {
                gemm(wmat.t(), gmat, 0.0, &mut grad_cols);
                g.col2im(&grad_cols, gi);
            }
        }
    }

    let input_grad = if want_input_grad {
        Tensor::from_vec(input.shape(), grad_in)?
    } else {
        Tensor::zeros([0, 0, 0, 0])
    };
    Ok(ConvGrads {
        input: input_grad,
        weights: Tensor::from_vec(weights.shape(), grad_w)?,
        bias: grad_b,
    })
}
