use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn relu(input: &Tensor) -> Tensor {
    let data = input.data().iter().map(|&v| v.max(0.0)).collect();
    Tensor::from_vec(input.shape(), data).expect("same shape")
}

/// Passes gradient where `input > 0`; the subgradient at exactly 0 is 0.
pub fn relu_backward(grad_out: &Tensor, input: &Tensor) -> Result<Tensor> {
    if grad_out.shape() != input.shape() {
        return Err(Error::Dimension(format!(
            "relu grad {:?} vs input {:?}",
            grad_out.shape(),
            input.shape()
        )));
    }
    let data = grad_out
        .data()
        .iter()
        .zip(input.data())
        .map(|(&g, &x)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::from_vec(input.shape(), data)
}

pub(crate) fn relu_in_place(t: &mut Tensor) {
    for v in t.data_mut() {
        *v = v.max(0.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clamps_negatives() {
        let t = Tensor::from_vec([1, 1, 1, 3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&t).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn positive_is_identity() {
        let t = Tensor::from_vec([1, 1, 1, 3], vec![0.1, 3.0, 7.5]).unwrap();
        assert_eq!(relu(&t), t);
    }

    #[test]
    fn gradient_mask() {
        let x = Tensor::from_vec([1, 1, 1, 4], vec![-1.0, 0.0, 1e-30, 5.0]).unwrap();
        let g = Tensor::from_vec([1, 1, 1, 4], vec![3.0; 4]).unwrap();
        assert_eq!(relu_backward(&g, &x).unwrap().data(), &[0.0, 0.0, 3.0, 3.0]);
    }
}
