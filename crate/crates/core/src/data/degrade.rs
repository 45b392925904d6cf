use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Add i.i.d. Gaussian noise with standard deviation `sigma_pct` percent of
/// the [0, 1] range, then clamp to [0, 1]. `sigma_pct == 0` returns the
/// input unchanged.
pub fn degrade(t: &Tensor, sigma_pct: f64, seed: u64) -> Result<Tensor> {
    if !(sigma_pct >= 0.0 && sigma_pct.is_finite()) {
        return Err(Error::Argument(format!(
            "sigma_pct must be finite and >= 0, got {sigma_pct}"
        )));
    }
    if sigma_pct == 0.0 {
        return Ok(t.clone());
    }
    let noise = Normal::new(0.0, sigma_pct / 100.0).expect("positive finite std");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = t
        .data()
        .iter()
        .map(|&v| ((v as f64 + noise.sample(&mut rng)) as f32).clamp(0.0, 1.0))
        .collect();
    Tensor::from_vec(t.shape(), data)
}
