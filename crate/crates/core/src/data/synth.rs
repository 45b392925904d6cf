//! Seeded synthetic glyph dataset with 43 classes.
//!
//! Class `k` is shape `k / 6` drawn in colour `k % 6` on a noisy grey
//! background. Size, position, scale and colour are jittered per sample.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::dataset::Dataset;
use super::gtsrb::{crop_resize_to, ImageSample, Roi, NUM_CLASSES};
use crate::error::Result;

const COLOURS: [[f64; 3]; 6] = [
    [220.0, 30.0, 30.0],
    [30.0, 60.0, 220.0],
    [230.0, 210.0, 30.0],
    [30.0, 170.0, 60.0],
    [245.0, 245.0, 245.0],
    [15.0, 15.0, 15.0],
];

/// Whether `(u, v)` in glyph coordinates (roughly [-1, 1], y down) is inside
/// shape `s`.
fn inside(s: usize, u: f64, v: f64) -> bool {
    let (au, av) = (u.abs(), v.abs());
    match s {
        0 => u * u + v * v <= 1.0,
        1 => au.max(av) <= 0.8,
        2 => (-0.8..=0.8).contains(&v) && au <= 0.9 * (v + 0.8) / 1.6,
        3 => (-0.8..=0.8).contains(&v) && au <= 0.9 * (0.8 - v) / 1.6,
        4 => au + av <= 1.0,
        5 => au.max(av) <= 0.85 && au + av <= 1.2,
        6 => (au <= 0.3 && av <= 0.9) || (av <= 0.3 && au <= 0.9),
        _ => {
            let r2 = u * u + v * v;
            (0.3..=1.0).contains(&r2)
        }
    }
}

/// One synthetic sample of class `label`, deterministic in `(seed, index)`.
pub fn synth_sample(label: usize, seed: u64, index: u64) -> ImageSample {
    assert!(label < NUM_CLASSES, "label {label} out of range");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index.wrapping_mul(NUM_CLASSES as u64) + label as u64);
    let size = rng.random_range(32..=64usize);
    let (shape, colour) = (label / 6, label % 6);
    let radius = size as f64 * rng.random_range(0.28..0.38);
    let cx = size as f64 / 2.0 + rng.random_range(-0.08..0.08) * size as f64;
    let cy = size as f64 / 2.0 + rng.random_range(-0.08..0.08) * size as f64;
    let fg: Vec<f64> = COLOURS[colour]
        .iter()
        .map(|c| c + rng.random_range(-20.0..20.0))
        .collect();
    let bg = rng.random_range(90.0..150.0);
    let noise = Normal::new(0.0, 8.0).expect("valid std");

    let mut pixels = Vec::with_capacity(size * size * 3);
    for y in 0..size {
        for x in 0..size {
            let u = (x as f64 + 0.5 - cx) / radius;
            let v = (y as f64 + 0.5 - cy) / radius;
            let base = if inside(shape, u, v) {
                [fg[0], fg[1], fg[2]]
            } else {
                [bg; 3]
            };
            for b in base {
                pixels.push((b + noise.sample(&mut rng)).round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    let margin = radius * 1.15;
    let clampi = |v: f64| v.round().clamp(0.0, (size - 1) as f64) as usize;
    ImageSample {
        width: size,
        height: size,
        pixels,
        roi: Roi {
            x1: clampi(cx - margin),
            y1: clampi(cy - margin),
            x2: clampi(cx + margin),
            y2: clampi(cy + margin),
        },
        label,
    }
}

/// `per_class` samples of every class, ordered class by class.
pub fn synth_samples(per_class: usize, seed: u64) -> Vec<ImageSample> {
    (0..NUM_CLASSES)
        .flat_map(|label| (0..per_class).map(move |i| synth_sample(label, seed, i as u64)))
        .collect()
}

/// Cropped and resized synthetic dataset of `size x size` images.
pub fn synth_dataset(per_class: usize, seed: u64, size: usize) -> Result<Dataset> {
    let mut ds = Dataset::empty((3, size, size));
    for s in synth_samples(per_class, seed) {
        ds.push(crop_resize_to(&s, size)?.data(), s.label)?;
    }
    Ok(ds)
}
