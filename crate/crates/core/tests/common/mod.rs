//! Shared finite-difference machinery for the gradient tests.
#![allow(dead_code)]

use micronnet::layers::{
    conv2d_backward, conv2d_forward, fc_backward, fc_forward, maxpool_backward, maxpool_forward,
    relu, relu_backward, softmax_cross_entropy, ConvParams, PoolParams,
};
use micronnet::network::{ArchitectureSpec, Network};
use micronnet::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const EPS: f32 = 1e-3;
pub const TOL: f64 = 1e-3;

/// `||a - n|| / max(||a||, ||n||)`, 0 when both vanish.
pub fn rel_err(a: &[f64], n: &[f64]) -> f64 {
    let diff = a
        .iter()
        .zip(n)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale = a
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(n.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: [usize; 4], lo: f32, hi: f32) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Values bounded away from zero, so a ReLU never sees a kink within EPS.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(0.01f32..1.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// Distinct values spaced 0.01 apart in random order, so no two pooling
/// candidates are within EPS of each other.
fn spaced(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Tensor {
    let n: usize = shape.iter().product();
    let mut data: Vec<f32> = (0..n).map(|i| i as f32 * 0.01 - n as f32 * 0.005).collect();
    data.shuffle(rng);
    Tensor::from_vec(shape, data).unwrap()
}

fn dot(r: &[f32], out: &Tensor) -> f64 {
    r.iter()
        .zip(out.data())
        .map(|(&a, &b)| a as f64 * b as f64)
        .sum()
}

/// Central differences of `loss` with respect to every entry of `x`.
fn numeric_grad(x: &Tensor, mut loss: impl FnMut(&Tensor) -> f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let mut plus = x.data().to_vec();
        let mut minus = x.data().to_vec();
        plus[i] += EPS;
        minus[i] -= EPS;
        let h = plus[i] as f64 - minus[i] as f64;
        let lp = loss(&Tensor::from_vec(x.shape(), plus).unwrap());
        let lm = loss(&Tensor::from_vec(x.shape(), minus).unwrap());
        out.push((lp - lm) / h);
    }
    out
}

fn widen(t: &[f32]) -> Vec<f64> {
    t.iter().map(|&v| v as f64).collect()
}

/// Worst relative error over input, weight and bias gradients of a
/// convolution under loss `sum(r * out)`.
pub fn conv_error(seed: u64, p: ConvParams, input_shape: [usize; 4]) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_tensor(&mut rng, input_shape, -1.0, 1.0);
    let w = random_tensor(
        &mut rng,
        [p.out_channels, input_shape[1], p.kernel.0, p.kernel.1],
        -1.0,
        1.0,
    );
    let b = random_tensor(&mut rng, [p.out_channels, 1, 1, 1], -1.0, 1.0);
    let out = conv2d_forward(&x, &w, b.data(), &p).unwrap();
    let r = random_tensor(&mut rng, out.shape(), -1.0, 1.0);
    let g = conv2d_backward(&x, &w, &r, &p).unwrap();

    let ex = rel_err(
        &widen(g.input.data()),
        &numeric_grad(&x, |xx| {
            dot(r.data(), &conv2d_forward(xx, &w, b.data(), &p).unwrap())
        }),
    );
    let ew = rel_err(
        &widen(g.weights.data()),
        &numeric_grad(&w, |ww| {
            dot(r.data(), &conv2d_forward(&x, ww, b.data(), &p).unwrap())
        }),
    );
    let eb = rel_err(
        &widen(&g.bias),
        &numeric_grad(&b, |bb| {
            dot(r.data(), &conv2d_forward(&x, &w, bb.data(), &p).unwrap())
        }),
    );
    ex.max(ew).max(eb)
}

pub fn pool_error(seed: u64, p: PoolParams, input_shape: [usize; 4]) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = spaced(&mut rng, input_shape);
    let (out, argmax) = maxpool_forward(&x, &p).unwrap();
    let r = random_tensor(&mut rng, out.shape(), -1.0, 1.0);
    let g = maxpool_backward(&r, &argmax, x.shape()).unwrap();
    rel_err(
        &widen(g.data()),
        &numeric_grad(&x, |xx| dot(r.data(), &maxpool_forward(xx, &p).unwrap().0)),
    )
}

pub fn fc_error(seed: u64, n: usize, input_item: [usize; 3], k: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [c, h, wd] = input_item;
    let x = random_tensor(&mut rng, [n, c, h, wd], -1.0, 1.0);
    let w = random_tensor(&mut rng, [k, c * h * wd, 1, 1], -1.0, 1.0);
    let b = random_tensor(&mut rng, [k, 1, 1, 1], -1.0, 1.0);
    let out = fc_forward(&x, &w, b.data()).unwrap();
    let r = random_tensor(&mut rng, out.shape(), -1.0, 1.0);
    let g = fc_backward(&x, &w, &r).unwrap();
    let ex = rel_err(
        &widen(g.input.data()),
        &numeric_grad(&x, |xx| {
            dot(r.data(), &fc_forward(xx, &w, b.data()).unwrap())
        }),
    );
    let ew = rel_err(
        &widen(g.weights.data()),
        &numeric_grad(&w, |ww| {
            dot(r.data(), &fc_forward(&x, ww, b.data()).unwrap())
        }),
    );
    let eb = rel_err(
        &widen(&g.bias),
        &numeric_grad(&b, |bb| {
            dot(r.data(), &fc_forward(&x, &w, bb.data()).unwrap())
        }),
    );
    ex.max(ew).max(eb)
}

pub fn relu_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = away_from_zero(&mut rng, [2, 3, 4, 5]);
    let r = random_tensor(&mut rng, x.shape(), -1.0, 1.0);
    let g = relu_backward(&r, &x).unwrap();
    rel_err(
        &widen(g.data()),
        &numeric_grad(&x, |xx| dot(r.data(), &relu(xx))),
    )
}

/// Mean cross-entropy computed in f64 from f32 logits.
pub fn cross_entropy_f64(logits: &Tensor, labels: &[usize]) -> f64 {
    let k = logits.item_len();
    logits
        .data()
        .chunks(k)
        .zip(labels)
        .map(|(row, &l)| {
            let m = row.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v as f64));
            let lse = row.iter().map(|&v| (v as f64 - m).exp()).sum::<f64>().ln() + m;
            lse - row[l] as f64
        })
        .sum::<f64>()
        / labels.len() as f64
}

pub fn softmax_ce_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 4;
    let k = 7;
    let z = random_tensor(&mut rng, [n, k, 1, 1], -3.0, 3.0);
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    let sl = softmax_cross_entropy(&z, &labels).unwrap();
    rel_err(
        &widen(sl.grad_logits.data()),
        &numeric_grad(&z, |zz| cross_entropy_f64(zz, &labels)),
    )
}

/// Small network exercising every layer kind: a linear 1x1 conv, ReLU
/// convs, truncated max pools, a hidden FC layer and the classifier.
pub fn shrunken_spec() -> ArchitectureSpec {
    "input 3x12x12\nconv 1x1x1 linear\nconv 3x3x4\npool 3x3 s2\nconv 3x3x5\npool 3x3 s2\nconv 1x1x6\nfc 10\nsoftmax 5\n"
        .parse()
        .unwrap()
}

/// Compact 43-class network for desk-scale learning runs: a 3-channel
/// linear spectral layer and narrow convolutions, about 28k parameters.
pub fn learn_spec() -> ArchitectureSpec {
    "input 3x48x48\nconv 1x1x3 linear\nconv 5x5x8\npool 3x3 s2\nconv 3x3x16\npool 3x3 s2\nconv 3x3x16\npool 3x3 s2\nfc 64\nsoftmax 43\n"
        .parse()
        .unwrap()
}

/// Result of the end-to-end check: relative error over all parameters that
/// were smooth at the probe point, the worst single tensor, and how many
/// parameters were skipped as kinked.
#[derive(Debug, Clone, Copy)]
pub struct NetworkCheck {
    pub error: f64,
    pub worst_tensor: f64,
    pub checked: usize,
    pub kinked: usize,
}

/// Threshold on |D(2h) - D(h)|, central differences at two steps, that flags a coordinate as straddling a ReLU
/// or max-pool kink. For a smooth loss the two central differences agree to
/// O(h^2) plus f32 rounding, far below this.
pub const KINK_GAP: f64 = 3e-4;

/// Threshold on the second-difference mismatch, which catches kinks sitting
/// at the probe point itself where the central differences stay symmetric.
pub const KINK_CURVE: f64 = 3e-3;

/// `Network::backward` against central differences of the f64 cross-entropy
/// of the network's logits, perturbing one parameter at a time.
pub fn network_check(seed: u64) -> NetworkCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = shrunken_spec();
    let net = Network::build(&spec, seed).unwrap();
    // Non-zero biases so no unit sits exactly at a ReLU kink.
    let net = net
        .map_tensors(|name, t| {
            if name.ends_with("bias") {
                Ok(random_tensor(&mut rng, t.shape(), -0.1, 0.1))
            } else {
                Ok(t.clone())
            }
        })
        .unwrap();
    let batch = random_tensor(&mut rng, [2, 3, 12, 12], 0.0, 1.0);
    let labels = vec![rng.random_range(0..5), rng.random_range(0..5)];
    let (_, grads) = net.backward(&batch, &labels).unwrap();

    let mut out = NetworkCheck {
        error: 0.0,
        worst_tensor: 0.0,
        checked: 0,
        kinked: 0,
    };
    let (mut a_all, mut n_all) = (Vec::new(), Vec::new());
    for (layer, g) in grads.iter().enumerate() {
        for which in 0..2 {
            let analytic = if which == 0 {
                g.weights.data()
            } else {
                g.bias.data()
            };
            let mut a_kept = Vec::new();
            let mut n_kept = Vec::new();
            for (i, &a) in analytic.iter().enumerate() {
                let eval = |delta: f32| -> (f64, f32) {
                    let mut actual = 0.0f32;
                    let mut idx = 0;
                    let moved = net
                        .map_tensors(|_, t| {
                            let mine = idx == 2 * layer + which;
                            idx += 1;
                            if !mine {
                                return Ok(t.clone());
                            }
                            let mut d = t.data().to_vec();
                            d[i] += delta;
                            actual = d[i];
                            Tensor::from_vec(t.shape(), d)
                        })
                        .unwrap();
                    (
                        cross_entropy_f64(&moved.logits(&batch).unwrap(), &labels),
                        actual,
                    )
                };
                // Loss at 0, +-h and +-2h. A smooth coordinate has matching
                // central differences at both steps and second differences
                // in a 4:1 ratio; a kink inside the stencil breaks one or both.
                let (l0, _) = eval(0.0);
                let (lp1, xp1) = eval(EPS);
                let (lm1, xm1) = eval(-EPS);
                let (lp2, xp2) = eval(2.0 * EPS);
                let (lm2, xm2) = eval(-2.0 * EPS);
                let h = (xp1 as f64 - xm1 as f64) / 2.0;
                let d1 = (lp1 - lm1) / (xp1 as f64 - xm1 as f64);
                let d2 = (lp2 - lm2) / (xp2 as f64 - xm2 as f64);
                let odd_gap = (d2 - d1).abs();
                let even_gap = ((lp2 - 2.0 * l0 + lm2) - 4.0 * (lp1 - 2.0 * l0 + lm1)).abs() / h;
                let scale = d1.abs().max(1.0);
                if odd_gap > KINK_GAP * scale || even_gap > KINK_CURVE * scale {
                    out.kinked += 1;
                    continue;
                }
                out.checked += 1;
                a_kept.push(a as f64);
                n_kept.push(d1);
            }
            out.worst_tensor = out.worst_tensor.max(rel_err(&a_kept, &n_kept));
            a_all.extend(a_kept);
            n_all.extend(n_kept);
        }
    }
    out.error = rel_err(&a_all, &n_all);
    out
}

pub mod cli;
pub mod sweep;
