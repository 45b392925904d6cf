//! Direct-loop convolution and fully-connected layers that count every
//! multiply-accumulate they perform. Slow; used as an independent check on
//! the GEMM path and on closed-form MAC accounting.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::conv::ConvParams;

pub fn conv2d_direct(
    input: &Tensor,
    weights: &Tensor,
    bias: &[f32],
    p: &ConvParams,
    macs: &mut u64,
) -> Result<Tensor> {
    let [n, cin, h, w] = input.shape();
    let [cout, wcin, kh, kw] = weights.shape();
    if wcin != cin || bias.len() != cout {
        return Err(Error::Dimension("direct conv shape mismatch".into()));
    }
    let (oh, ow) = p.output_hw(h, w)?;
    let mut out = vec![0.0f32; n * cout * oh * ow];
    for b in 0..n {
        for o in 0..cout {
            for y in 0..oh {
                for x in 0..ow {
                    let mut acc = bias[o];
                    for c in 0..cin {
                        for i in 0..kh {
                            for j in 0..kw {
                                let sy = (y * p.stride + i) as isize - p.pad as isize;
                                let sx = (x * p.stride + j) as isize - p.pad as isize;
                                let v = if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize
                                {
                                    0.0
                                } else {
                                    input.get(b, c, sy as usize, sx as usize)
                                };
                                acc += v * weights.get(o, c, i, j);
                                *macs += 1;
                            }
                        }
                    }
                    out[((b * cout + o) * oh + y) * ow + x] = acc;
                }
            }
        }
    }
    Tensor::from_vec([n, cout, oh, ow], out)
}

pub fn fc_direct(input: &Tensor, weights: &Tensor, bias: &[f32], macs: &mut u64) -> Result<Tensor> {
    let n = input.shape()[0];
    let m = input.item_len();
    let k = weights.shape()[0];
    if weights.item_len() != m || bias.len() != k {
        return Err(Error::Dimension("direct fc shape mismatch".into()));
    }
    let mut out = vec![0.0f32; n * k];
    for b in 0..n {
        let x = input.item(b);
        for o in 0..k {
            let row = weights.item(o);
            let mut acc = bias[o];
            for i in 0..m {
                acc += x[i] * row[i];
                *macs += 1;
            }
            out[b * k + o] = acc;
        }
    }
    Tensor::from_vec([n, k, 1, 1], out)
}
