use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Result of a batched softmax + cross-entropy evaluation.
#[derive(Debug, Clone)]
pub struct SoftmaxLoss {
    /// Mean of `-ln p[label]` over the batch.
    pub loss: f32,
    /// Per-sample `-ln p[label]`.
    pub sample_losses: Vec<f32>,
    /// Row-wise softmax, shape `(n, K, 1, 1)`.
    pub probabilities: Tensor,
    /// Gradient of the mean loss w.r.t. the logits: `(p - onehot) / n`.
    pub grad_logits: Tensor,
}

/// Numerically stabilised softmax of every row of `logits` (max subtracted).
pub fn softmax(logits: &Tensor) -> Tensor {
    let k = logits.item_len();
    let n = logits.shape()[0];
    let mut out = Vec::with_capacity(n * k);
    for row in logits.data().chunks_exact(k.max(1)) {
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let exps: Vec<f32> = row.iter().map(|&z| (z - max).exp()).collect();
        let sum: f32 = exps.iter().sum();
        out.extend(exps.iter().map(|e| e / sum));
    }
    Tensor::from_vec([n, k, 1, 1], out).expect("row count preserved")
}

pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<SoftmaxLoss> {
    let n = logits.shape()[0];
    let k = logits.item_len();
    if k < 2 {
        return Err(Error::Argument(format!(
            "softmax needs at least 2 classes, got {k}"
        )));
    }
    if labels.len() != n {
        return Err(Error::Argument(format!(
            "{} labels for a batch of {n}",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Argument(format!(
            "label {bad} out of range for {k} classes"
        )));
    }
    let probabilities = softmax(logits);
    let mut sample_losses = Vec::with_capacity(n);
    let mut grad = probabilities.data().to_vec();
    let scale = 1.0 / n as f32;
    for (i, (row, &label)) in logits.data().chunks_exact(k).zip(labels).enumerate() {
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let lse = max + row.iter().map(|&z| (z - max).exp()).sum::<f32>().ln();
        sample_losses.push(lse - row[label]);
        let g = &mut grad[i * k..(i + 1) * k];
        g[label] -= 1.0;
        for v in g {
            *v *= scale;
        }
    }
    let loss = (sample_losses.iter().map(|&l| l as f64).sum::<f64>() / n.max(1) as f64) as f32;
    Ok(SoftmaxLoss {
        loss,
        sample_losses,
        probabilities,
        grad_logits: Tensor::from_vec([n, k, 1, 1], grad)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits() {
        let out = softmax_cross_entropy(&Tensor::zeros([1, 43, 1, 1]), &[7]).unwrap();
        assert!((out.loss - 43f32.ln()).abs() < 1e-5);
        assert!((out.loss - 3.7612).abs() < 1e-4);
        assert!(out
            .probabilities
            .data()
            .iter()
            .all(|&p| (p - 1.0 / 43.0).abs() < 1e-7));
    }

    #[test]
    fn confident_prediction_has_zero_loss() {
        let logits = Tensor::from_vec([1, 3, 1, 1], vec![0.0, 200.0, 0.0]).unwrap();
        let out = softmax_cross_entropy(&logits, &[1]).unwrap();
        assert_eq!(out.loss, 0.0);
    }

    #[test]
    fn gradient_rows_sum_to_zero() {
        let logits =
            Tensor::from_vec([2, 4, 1, 1], vec![1.0, -3.0, 0.5, 9.0, 0.0, 0.1, -0.2, 2.5]).unwrap();
        let out = softmax_cross_entropy(&logits, &[0, 3]).unwrap();
        for row in out.grad_logits.data().chunks(4) {
            assert!(row.iter().sum::<f32>().abs() < 1e-6);
        }
        for row in out.probabilities.data().chunks(4) {
            assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|p| (0.0..=1.0).contains(p)));
        }
    }

    #[test]
    fn label_out_of_range() {
        let err = softmax_cross_entropy(&Tensor::zeros([1, 43, 1, 1]), &[43]);
        assert!(matches!(err, Err(Error::Argument(_))));
    }

    #[test]
    fn stable_for_large_logits() {
        let logits = Tensor::from_vec([1, 2, 1, 1], vec![1e30, -1e30]).unwrap();
        let out = softmax_cross_entropy(&logits, &[0]).unwrap();
        assert!(out.loss.is_finite());
        assert_eq!(out.probabilities.data(), &[1.0, 0.0]);
    }
}
