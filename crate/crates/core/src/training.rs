//! SGD with momentum, staircase learning-rate decay and L2 weight decay.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::network::{Gradients, LayerParams, Network};
use crate::tensor::Precision;

/// Training hyperparameters. Defaults reproduce the reference policy:
/// lr 0.007, momentum 0.9, decay x0.9996 every 1000 iterations,
/// weight decay 1e-5, batches of 50, 60,000 iterations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub momentum: f64,
    pub decay_step: u64,
    pub decay_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_iterations: u64,
    /// Seeds the data order.
    pub seed: u64,
    /// Evaluate on the validation set every N iterations (0 = only at the end).
    pub eval_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            base_lr: 0.007,
            momentum: 0.9,
            decay_step: 1000,
            decay_rate: 0.9996,
            weight_decay: 1e-5,
            batch_size: 50,
            max_iterations: 60_000,
            seed: 0,
            eval_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |v: f64| v > 0.0 && v <= 1.0;
        if !in_unit(self.base_lr) {
            return Err(Error::Config(format!(
                "base_lr must be in (0, 1], got {}",
                self.base_lr
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if !in_unit(self.decay_rate) {
            return Err(Error::Config(format!(
                "decay_rate must be in (0, 1], got {}",
                self.decay_rate
            )));
        }
        if !(0.0..1.0).contains(&self.weight_decay) {
            return Err(Error::Config(format!(
                "weight_decay must be in [0, 1), got {}",
                self.weight_decay
            )));
        }
        if self.decay_step == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "decay_step and batch_size must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// `base_lr * decay_rate^floor(iter / decay_step)`
pub fn lr_schedule(cfg: &TrainConfig, iter: u64) -> f64 {
    cfg.base_lr * cfg.decay_rate.powi((iter / cfg.decay_step) as i32)
}

/// Zero-initialised momentum buffers shaped like `net`'s parameters.
pub fn zero_velocity(net: &Network) -> Gradients {
    net.params().iter().map(LayerParams::zeros_like).collect()
}

/// One momentum step, weight decay on every tensor:
/// `v = momentum * v - lr * (g + wd * p); p += v`.
pub fn sgd_step(
    net: &mut Network,
    grads: &Gradients,
    velocity: &mut Gradients,
    cfg: &TrainConfig,
    iter: u64,
) -> Result<()> {
    if net.precision() != Precision::Float32 {
        return Err(Error::Argument(
            "training updates require a float32 network".into(),
        ));
    }
    let params = net.params_mut();
    if grads.len() != params.len() || velocity.len() != params.len() {
        return Err(Error::Internal(format!(
            "{} parameter layers, {} gradients, {} velocities",
            params.len(),
            grads.len(),
            velocity.len()
        )));
    }
    let lr = lr_schedule(cfg, iter) as f32;
    let mom = cfg.momentum as f32;
    let wd = cfg.weight_decay as f32;
    for ((p, g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        for (pt, (gt, vt)) in [
            (&mut p.weights, (&g.weights, &mut v.weights)),
            (&mut p.bias, (&g.bias, &mut v.bias)),
        ] {
            if pt.shape() != gt.shape() || pt.shape() != vt.shape() {
                return Err(Error::Internal(format!(
                    "shape mismatch: param {:?}, grad {:?}, velocity {:?}",
                    pt.shape(),
                    gt.shape(),
                    vt.shape()
                )));
            }
            let pd = pt.data_mut();
            for ((w, &gw), vw) in pd.iter_mut().zip(gt.data()).zip(vt.data_mut()) {
                *vw = mom * *vw - lr * (gw + wd * *w);
                *w += *vw;
            }
        }
    }
    Ok(())
}

/// One row of the training trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub iter: u64,
    pub lr: f64,
    pub loss: f32,
    pub val_acc: Option<f64>,
}

/// Observer called after every iteration with the updated network.
pub trait TrainHook {
    fn on_iteration(&mut self, record: &TraceRecord, net: &Network) -> Result<()>;
}

impl<F: FnMut(&TraceRecord, &Network) -> Result<()>> TrainHook for F {
    fn on_iteration(&mut self, record: &TraceRecord, net: &Network) -> Result<()> {
        self(record, net)
    }
}

/// No-op hook.
pub struct Quiet;

impl TrainHook for Quiet {
    fn on_iteration(&mut self, _: &TraceRecord, _: &Network) -> Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: Network,
    pub trace: Vec<TraceRecord>,
}

/// Trace as `iter,lr,loss,val_acc` rows (empty `val_acc` when not evaluated).
pub fn trace_csv(trace: &[TraceRecord]) -> String {
    let mut s = String::from("iter,lr,loss,val_acc\n");
    for r in trace {
        let acc = r.val_acc.map(|a| format!("{a:.6}")).unwrap_or_default();
        let _ = writeln!(s, "{},{:.9},{:.6},{}", r.iter, r.lr, r.loss, acc);
    }
    s
}

/// Endless stream of mini-batch indices: a fresh seeded permutation per
/// epoch, batches spanning an epoch boundary continue into the next one.
pub struct BatchSampler {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    pos: usize,
}

impl BatchSampler {
    pub fn new(len: usize, seed: u64) -> Self {
        let mut s = BatchSampler {
            rng: ChaCha8Rng::seed_from_u64(seed),
            order: (0..len).collect(),
            pos: 0,
        };
        s.order.shuffle(&mut s.rng);
        s
    }

    pub fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.pos == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            let take = (size - out.len()).min(self.order.len() - self.pos);
            out.extend_from_slice(&self.order[self.pos..self.pos + take]);
            self.pos += take;
        }
        out
    }
}

/// Train for `cfg.max_iterations` mini-batches. The trace records the
/// pre-update batch loss of each iteration.
pub fn train(
    mut net: Network,
    data: &Dataset,
    validation: Option<&Dataset>,
    cfg: &TrainConfig,
    hook: &mut dyn TrainHook,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Argument("training set is empty".into()));
    }
    let mut sampler = BatchSampler::new(data.len(), cfg.seed);
    let mut velocity = zero_velocity(&net);
    let mut trace = Vec::with_capacity(cfg.max_iterations as usize);
    for iter in 0..cfg.max_iterations {
        let idx = sampler.next_batch(cfg.batch_size);
        let (batch, labels) = data.batch(&idx)?;
        let (loss, grads) = net.backward(&batch, &labels)?;
        let lr = lr_schedule(cfg, iter);
        sgd_step(&mut net, &grads, &mut velocity, cfg, iter)?;
        let last = iter + 1 == cfg.max_iterations;
        let due = cfg.eval_every > 0 && (iter + 1) % cfg.eval_every == 0;
        let val_acc = match validation {
            Some(v) if (due || last) && !v.is_empty() => Some(accuracy(&net, v, 256)?),
            _ => None,
        };
        let record = TraceRecord {
            iter,
            lr,
            loss,
            val_acc,
        };
        hook.on_iteration(&record, &net)?;
        trace.push(record);
    }
    Ok(TrainOutcome {
        network: net,
        trace,
    })
}

/// Predicted class for every sample, evaluated in chunks of `batch_size`.
pub fn predict_all(net: &Network, data: &Dataset, batch_size: usize) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(data.len());
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let (batch, _) = data.batch(chunk)?;
        out.extend(net.predict(&batch)?);
    }
    Ok(out)
}

/// Top-1 accuracy in [0, 1]; 0 for an empty set.
pub fn accuracy(net: &Network, data: &Dataset, batch_size: usize) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let pred = predict_all(net, data, batch_size)?;
    let hits = pred
        .iter()
        .zip(data.labels())
        .filter(|(p, l)| p == l)
        .count();
    Ok(hits as f64 / data.len() as f64)
}
