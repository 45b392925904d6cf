use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::gemm::{gemm, MatRef};

/// Gradients of a fully-connected layer.
#[derive(Debug, Clone)]
pub struct DenseGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Vec<f32>,
}

/// Weights are stored out-major as shape `(k, m, 1, 1)`; each batch item of
/// `input` is flattened to length `m`.
fn dims(input: &Tensor, weights: &Tensor) -> Result<(usize, usize, usize)> {
    let n = input.shape()[0];
    let m = input.item_len();
    let [k, wm, a, b] = weights.shape();
    if wm * a * b != m {
        return Err(Error::Dimension(format!(
            "fc weights {:?} expect {} inputs, got {m}",
            weights.shape(),
            wm * a * b
        )));
    }
    Ok((n, m, k))
}

/// `out[n, o] = bias[o] + sum_i input[n, i] * weights[o, i]`, shape `(n, k, 1, 1)`.
pub fn fc_forward(input: &Tensor, weights: &Tensor, bias: &[f32]) -> Result<Tensor> {
    let (n, m, k) = dims(input, weights)?;
    if bias.len() != k {
        return Err(Error::Dimension(format!(
            "fc bias has {} entries, expected {k}",
            bias.len()
        )));
    }
    let mut out: Vec<f32> = (0..n).flat_map(|_| bias.iter().copied()).collect();
    gemm(
        MatRef::row_major(input.data(), n, m),
        MatRef::row_major(weights.data(), k, m).t(),
        1.0,
        &mut out,
    );
    Tensor::from_vec([n, k, 1, 1], out)
}

pub fn fc_backward(input: &Tensor, weights: &Tensor, grad_out: &Tensor) -> Result<DenseGrads> {
    fc_backward_impl(input, weights, grad_out, true)
}

pub(crate) fn fc_backward_impl(
    input: &Tensor,
    weights: &Tensor,
    grad_out: &Tensor,
    want_input_grad: bool,
) -> Result<DenseGrads> {
    let (n, m, k) = dims(input, weights)?;
    if grad_out.shape()[0] != n || grad_out.item_len() != k {
        return Err(Error::Dimension(format!(
            "fc grad_out {:?} does not match ({n}, {k})",
            grad_out.shape()
        )));
    }
    let g = MatRef::row_major(grad_out.data(), n, k);
    let mut grad_w = vec![0.0f32; k * m];
    gemm(
        g.t(),
        MatRef::row_major(input.data(), n, m),
        0.0,
        &mut grad_w,
    );
    let mut grad_b = vec![0.0f32; k];
    for row in grad_out.data().chunks_exact(k) {
        for (acc, v) in grad_b.iter_mut().zip(row) {
            *acc += v;
        }
    }
    let input_grad = if want_input_grad {
        let mut gi = vec![0.0f32; n * m];
        gemm(g, MatRef::row_major(weights.data(), k, m), 0.0, &mut gi);
        Tensor::from_vec(input.shape(), gi)?
    } else {
        Tensor::zeros([0, 0, 0, 0])
    };
    Ok(DenseGrads {
        input: input_grad,
        weights: Tensor::from_vec(weights.shape(), grad_w)?,
        bias: grad_b,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_one_first_fc_width() {
        let x = Tensor::zeros([1, 74, 4, 4]);
        let w = Tensor::zeros([300, 1184, 1, 1]);
        let out = fc_forward(&x, &w, &[0.0; 300]).unwrap();
        assert_eq!(out.shape(), [1, 300, 1, 1]);
    }

    #[test]
    fn identity_weights() {
        let x = Tensor::from_vec([2, 3, 1, 1], vec![1.0, -2.0, 0.5, 4.0, 0.0, -1.0]).unwrap();
        let mut eye = vec![0.0; 9];
        for i in 0..3 {
            eye[i * 3 + i] = 1.0;
        }
        let w = Tensor::from_vec([3, 3, 1, 1], eye).unwrap();
        let out = fc_forward(&x, &w, &[0.0; 3]).unwrap();
        assert_eq!(out.data(), x.data());
    }

    #[test]
    fn mismatched_width() {
        let x = Tensor::zeros([1, 5, 1, 1]);
        let w = Tensor::zeros([2, 4, 1, 1]);
        assert!(matches!(
            fc_forward(&x, &w, &[0.0; 2]),
            Err(Error::Dimension(_))
        ));
    }
}
