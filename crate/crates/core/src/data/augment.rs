//! Label-preserving image augmentation.
//!
//! Each enabled technique fires independently with probability
//! `apply_prob`; its magnitude is drawn uniformly up to the policy maximum.
//! Techniques run in a fixed order (geometric, sharpen, gaussian blur,
//! motion blur, hsv, mirror) and the result is clamped to [0, 1].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Technique {
    Rotation,
    Shifting,
    Sharpening,
    GaussianBlur,
    MotionBlur,
    HsvAugmentation,
    Mirroring,
}

impl Technique {
    pub const ALL: [Technique; 7] = [
        Technique::Rotation,
        Technique::Shifting,
        Technique::Sharpening,
        Technique::GaussianBlur,
        Technique::MotionBlur,
        Technique::HsvAugmentation,
        Technique::Mirroring,
    ];
}

// Upper bounds accepted by `validate`; the defaults sit at these bounds.
const MAX_ROTATION_DEG: f64 = 15.0;
const MAX_SHIFT_FRAC: f64 = 0.10;
const MAX_SHARPEN: f64 = 0.5;
const MAX_BLUR_SIGMA: f64 = 1.5;
const MAX_MOTION_LEN: usize = 5;
const MAX_HSV_FRAC: f64 = 0.10;

/// Classes whose signs are left-right symmetric, so mirroring keeps the label.
pub const SYMMETRIC_CLASSES: [usize; 10] = [11, 12, 13, 15, 17, 18, 22, 26, 30, 35];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentPolicy {
    pub enabled: Vec<Technique>,
    /// Probability that each enabled technique fires for a given draw.
    pub apply_prob: f64,
    pub rotation_deg: f64,
    /// Fraction of the image side, per axis.
    pub shift_frac: f64,
    /// Unsharp-mask amount.
    pub sharpen_amount: f64,
    /// Gaussian blur sigma in pixels.
    pub blur_sigma: f64,
    /// Motion-blur kernel length in pixels.
    pub motion_length: usize,
    /// Relative jitter of hue, saturation and value.
    pub hsv_frac: f64,
    pub mirror_classes: Vec<usize>,
    pub seed: u64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        AugmentPolicy {
            enabled: Technique::ALL.to_vec(),
            apply_prob: 0.5,
            rotation_deg: MAX_ROTATION_DEG,
            shift_frac: MAX_SHIFT_FRAC,
            sharpen_amount: MAX_SHARPEN,
            blur_sigma: MAX_BLUR_SIGMA,
            motion_length: MAX_MOTION_LEN,
            hsv_frac: MAX_HSV_FRAC,
            mirror_classes: SYMMETRIC_CLASSES.to_vec(),
            seed: 0,
        }
    }
}

fn check(name: &str, v: f64, max: f64) -> Result<()> {
    if !(0.0..=max).contains(&v) {
        return Err(Error::Config(format!(
            "augment.{name} must be in [0, {max}], got {v}"
        )));
    }
    Ok(())
}

impl AugmentPolicy {
    /// A policy that changes nothing.
    pub fn none() -> Self {
        AugmentPolicy {
            enabled: Vec::new(),
            ..AugmentPolicy::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        check("apply_prob", self.apply_prob, 1.0)?;
        check("rotation_deg", self.rotation_deg, MAX_ROTATION_DEG)?;
        check("shift_frac", self.shift_frac, MAX_SHIFT_FRAC)?;
        check("sharpen_amount", self.sharpen_amount, MAX_SHARPEN)?;
        check("blur_sigma", self.blur_sigma, MAX_BLUR_SIGMA)?;
        check("hsv_frac", self.hsv_frac, MAX_HSV_FRAC)?;
        if !(1..=MAX_MOTION_LEN).contains(&self.motion_length) {
            return Err(Error::Config(format!(
                "augment.motion_length must be in [1, {MAX_MOTION_LEN}], got {}",
                self.motion_length
            )));
        }
        Ok(())
    }

    fn is_enabled(&self, t: Technique) -> bool {
        self.enabled.contains(&t)
    }
}

/// Planar `3 x h x w` image.
struct Planes {
    h: usize,
    w: usize,
    data: Vec<f32>,
}

impl Planes {
    fn at(&self, c: usize, y: isize, x: isize) -> f32 {
        let y = y.clamp(0, self.h as isize - 1) as usize;
        let x = x.clamp(0, self.w as isize - 1) as usize;
        self.data[(c * self.h + y) * self.w + x]
    }

    /// Bilinear sample with edge replication.
    fn sample(&self, c: usize, y: f64, x: f64) -> f32 {
        let (y0, x0) = (y.floor(), x.floor());
        let (fy, fx) = ((y - y0) as f32, (x - x0) as f32);
        let (y0, x0) = (y0 as isize, x0 as isize);
        let top = self.at(c, y0, x0) * (1.0 - fx) + self.at(c, y0, x0 + 1) * fx;
        let bottom = self.at(c, y0 + 1, x0) * (1.0 - fx) + self.at(c, y0 + 1, x0 + 1) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    fn map(&self, mut f: impl FnMut(usize, usize, usize) -> f32) -> Planes {
        let mut data = Vec::with_capacity(self.data.len());
        for c in 0..3 {
            for y in 0..self.h {
                for x in 0..self.w {
                    data.push(f(c, y, x));
                }
            }
        }
        Planes {
            h: self.h,
            w: self.w,
            data,
        }
    }
}

fn affine(img: &Planes, angle_rad: f64, dx: f64, dy: f64) -> Planes {
    let (s, c) = angle_rad.sin_cos();
    let cy = (img.h as f64 - 1.0) / 2.0;
    let cx = (img.w as f64 - 1.0) / 2.0;
    img.map(|ch, y, x| {
        // Inverse map: output pixel -> source location.
        let (u, v) = (x as f64 - dx - cx, y as f64 - dy - cy);
        let sx = c * u + s * v + cx;
        let sy = -s * u + c * v + cy;
        img.sample(ch, sy, sx)
    })
}

fn convolve_separable(img: &Planes, kernel: &[f32]) -> Planes {
    let r = (kernel.len() / 2) as isize;
    let horiz = img.map(|c, y, x| {
        kernel
            .iter()
            .enumerate()
            .map(|(i, k)| k * img.at(c, y as isize, x as isize + i as isize - r))
            .sum()
    });
    horiz.map(|c, y, x| {
        kernel
            .iter()
            .enumerate()
            .map(|(i, k)| k * horiz.at(c, y as isize + i as isize - r, x as isize))
            .sum()
    })
}

fn gaussian_kernel(sigma: f64) -> Vec<f32> {
    let r = (3.0 * sigma).ceil().max(1.0) as isize;
    let k: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter().map(|v| (v / sum) as f32).collect()
}

fn sharpen(img: &Planes, amount: f32) -> Planes {
    let blurred = convolve_separable(img, &[0.25, 0.5, 0.25]);
    img.map(|c, y, x| {
        let i = (c * img.h + y) * img.w + x;
        img.data[i] + amount * (img.data[i] - blurred.data[i])
    })
}

fn motion_blur(img: &Planes, length: usize, angle: f64) -> Planes {
    let (s, c) = angle.sin_cos();
    let offsets: Vec<(f64, f64)> = (0..length)
        .map(|i| {
            let t = i as f64 - (length as f64 - 1.0) / 2.0;
            (t * s, t * c)
        })
        .collect();
    let n = length as f32;
    img.map(|ch, y, x| {
        offsets
            .iter()
            .map(|(oy, ox)| img.sample(ch, y as f64 + oy, x as f64 + ox))
            .sum::<f32>()
            / n
    })
}

fn rgb_to_hsv(r: f32, g: f32, b: f32) -> (f32, f32, f32) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / d).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / d + 2.0) / 6.0
    } else {
        ((r - g) / d + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    (h, s, max)
}

fn hsv_to_rgb(h: f32, s: f32, v: f32) -> (f32, f32, f32) {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let c = v * s;
    let x = c * (1.0 - ((h6 % 2.0) - 1.0).abs());
    let (r, g, b) = match h6 as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    (r + m, g + m, b + m)
}

fn hsv_jitter(img: &mut Planes, dh: f32, ds: f32, dv: f32) {
    let plane = img.h * img.w;
    for i in 0..plane {
        let (r, g, b) = (img.data[i], img.data[plane + i], img.data[2 * plane + i]);
        let (h, s, v) = rgb_to_hsv(r.clamp(0.0, 1.0), g.clamp(0.0, 1.0), b.clamp(0.0, 1.0));
        let (r, g, b) = hsv_to_rgb(
            h + dh,
            (s * (1.0 + ds)).clamp(0.0, 1.0),
            (v * (1.0 + dv)).clamp(0.0, 1.0),
        );
        img.data[i] = r;
        img.data[plane + i] = g;
        img.data[2 * plane + i] = b;
    }
}

fn mirror(img: &Planes) -> Planes {
    img.map(|c, y, x| img.data[(c * img.h + y) * img.w + (img.w - 1 - x)])
}

fn sym(rng: &mut ChaCha8Rng, max: f64) -> f64 {
    rng.random_range(-1.0..=1.0) * max
}

/// Augment one `(1, 3, h, w)` image. Deterministic in
/// `(policy, draw_seed)`; with nothing enabled the input is returned as is.
pub fn augment(
    image: &Tensor,
    label: usize,
    policy: &AugmentPolicy,
    draw_seed: u64,
) -> Result<Tensor> {
    let [n, c, h, w] = image.shape();
    if n != 1 || c != 3 {
        return Err(Error::Dimension(format!(
            "augment expects (1, 3, h, w), got {:?}",
            image.shape()
        )));
    }
    let mut img = Planes {
        h,
        w,
        data: image.data().to_vec(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(policy.seed);
    rng.set_stream(draw_seed);
    // Every draw is made whether or not its technique is enabled, so the
    // random sequence for one technique does not depend on the others.
    let fires = |rng: &mut ChaCha8Rng, t: Technique| {
        let hit = rng.random::<f64>() < policy.apply_prob;
        hit && policy.is_enabled(t)
    };

    let rotate = fires(&mut rng, Technique::Rotation);
    let angle = sym(&mut rng, policy.rotation_deg).to_radians();
    let shift = fires(&mut rng, Technique::Shifting);
    let (dx, dy) = (
        sym(&mut rng, policy.shift_frac) * w as f64,
        sym(&mut rng, policy.shift_frac) * h as f64,
    );
    if rotate || shift {
        img = affine(
            &img,
            if rotate { angle } else { 0.0 },
            if shift { dx } else { 0.0 },
            if shift { dy } else { 0.0 },
        );
    }

    let do_sharpen = fires(&mut rng, Technique::Sharpening);
    let amount = rng.random_range(0.0..=policy.sharpen_amount) as f32;
    if do_sharpen && amount > 0.0 {
        img = sharpen(&img, amount);
    }

    let do_blur = fires(&mut rng, Technique::GaussianBlur);
    let sigma = rng.random_range(0.0..=policy.blur_sigma);
    if do_blur && sigma > 1e-3 {
        img = convolve_separable(&img, &gaussian_kernel(sigma));
    }

    let do_motion = fires(&mut rng, Technique::MotionBlur);
    let length = rng.random_range(1..=policy.motion_length.max(1));
    let direction = rng.random_range(0.0..std::f64::consts::PI);
    if do_motion && length > 1 {
        img = motion_blur(&img, length, direction);
    }

    let do_hsv = fires(&mut rng, Technique::HsvAugmentation);
    let (dh, ds, dv) = (
        sym(&mut rng, policy.hsv_frac) as f32,
        sym(&mut rng, policy.hsv_frac) as f32,
        sym(&mut rng, policy.hsv_frac) as f32,
    );
    if do_hsv {
        hsv_jitter(&mut img, dh, ds, dv);
    }

    if fires(&mut rng, Technique::Mirroring) && policy.mirror_classes.contains(&label) {
        img = mirror(&img);
    }

    for v in &mut img.data {
        *v = v.clamp(0.0, 1.0);
    }
    Tensor::from_vec([1, 3, h, w], img.data)
}
