//! Parameter minimisation under a validation-accuracy floor.
//!
//! A [`SearchSpace`] fixes the macro layout of a base architecture and lets
//! selected layers vary their filter count and (for convolutions) their
//! square kernel size. The base must sit at the top of every range, so
//! every point is reachable from it by shrinking moves.
//!
//! [`optimize`] is greedy coordinate descent: each round it tries every
//! one-step shrink, in order of decreasing parameter saving, and accepts the
//! first whose accuracy meets the floor. Ties keep the earlier layer and
//! prefer a filter move over a kernel move. [`brute_force`] enumerates the
//! whole space and serves as the exact reference.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::efficiency::{mac_count, param_count};
use crate::error::{Error, Result};
use crate::network::{ArchitectureSpec, LayerSpec, Network};
use crate::training::{accuracy, train, Quiet, TrainConfig};

/// Largest space [`brute_force`] will enumerate by default.
pub const DEFAULT_BRUTE_FORCE_CAP: u64 = 10_000;

/// Accuracy floor used when none is configured.
pub const DEFAULT_FLOOR: f64 = 0.985;

const KERNEL_CHOICES: [usize; 4] = [1, 3, 5, 7];

/// `min, min + step, ..., max`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterRange {
    pub min: usize,
    pub max: usize,
    pub step: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tunable {
    /// Index into the base spec's layer list.
    pub layer: usize,
    #[serde(default)]
    pub filters: Option<FilterRange>,
    /// Candidate square kernel sizes from {1, 3, 5, 7}; empty keeps the base kernel.
    #[serde(default)]
    pub kernels: Vec<usize>,
}

/// One coordinate per tunable: (filter index, kernel index), both counted
/// from the smallest candidate.
pub type Point = Vec<(usize, usize)>;

#[derive(Debug, Clone, PartialEq)]
struct Axis {
    layer: usize,
    filters: Vec<usize>,
    kernels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchSpace {
    base: ArchitectureSpec,
    axes: Vec<Axis>,
}

fn width_of(layer: &LayerSpec) -> Option<usize> {
    match layer {
        LayerSpec::Conv { params, .. } => Some(params.out_channels),
        LayerSpec::Fc { out_features } => Some(*out_features),
        _ => None,
    }
}

impl SearchSpace {
    pub fn new(base: ArchitectureSpec, tunables: Vec<Tunable>) -> Result<Self> {
        base.validate()?;
        let mut axes: Vec<Axis> = Vec::with_capacity(tunables.len());
        for t in tunables {
            let layer = base
                .layers
                .get(t.layer)
                .ok_or_else(|| Error::Spec(format!("tunable layer {} out of range", t.layer)))?;
            if axes.iter().any(|a| a.layer == t.layer) {
                return Err(Error::Spec(format!("layer {} listed twice", t.layer)));
            }
            let width = width_of(layer)
                .ok_or_else(|| Error::Spec(format!("layer {} has no filters to tune", t.layer)))?;
            let filters = match t.filters {
                None => vec![width],
                Some(r) => {
                    if r.min == 0 || r.step == 0 || r.min > r.max || (r.max - r.min) % r.step != 0 {
                        return Err(Error::Spec(format!(
                            "layer {}: filter range {r:?} must satisfy 1 <= min <= max, step >= 1, step | (max - min)",
                            t.layer
                        )));
                    }
                    if r.max != width {
                        return Err(Error::Spec(format!(
                            "layer {}: filter range must top out at the base width {width}",
                            t.layer
                        )));
                    }
                    (r.min..=r.max).step_by(r.step).collect()
                }
            };
            let kernels = match layer {
                LayerSpec::Conv { params, .. } => {
                    let (kh, kw) = params.kernel;
                    let mut ks = t.kernels.clone();
                    ks.sort_unstable();
                    ks.dedup();
                    if ks.is_empty() {
                        vec![kh]
                    } else if ks.iter().any(|k| !KERNEL_CHOICES.contains(k)) {
                        return Err(Error::Spec(format!(
                            "layer {}: kernels must come from {{1, 3, 5, 7}}",
                            t.layer
                        )));
                    } else if kh != kw || ks.last() != Some(&kh) {
                        return Err(Error::Spec(format!(
                            "layer {}: largest kernel candidate must equal the square base kernel {kh}x{kw}",
                            t.layer
                        )));
                    } else {
                        ks
                    }
                }
                _ if t.kernels.is_empty() => vec![0],
                _ => {
                    return Err(Error::Spec(format!(
                        "layer {}: only convolutions have kernels",
                        t.layer
                    )))
                }
            };
            axes.push(Axis {
                layer: t.layer,
                filters,
                kernels,
            });
        }
        axes.sort_by_key(|a| a.layer);
        // Filter counts do not affect spatial sizes and smaller kernels only
        // enlarge them, so every point type-checks once the base does.
        Ok(SearchSpace { base, axes })
    }

    pub fn base(&self) -> &ArchitectureSpec {
        &self.base
    }

    /// Number of points.
    /// (layer, candidate filter counts ascending) per tunable axis.
    pub fn filter_choices(&self) -> Vec<(usize, &[usize])> {
        self.axes
            .iter()
            .map(|a| (a.layer, a.filters.as_slice()))
            .collect()
    }

    pub fn size(&self) -> u64 {
        self.axes
            .iter()
            .map(|a| (a.filters.len() * a.kernels.len()) as u64)
            .fold(1u64, |acc, n| acc.saturating_mul(n))
    }

    /// The base spec's coordinates (every axis at its largest value).
    pub fn top(&self) -> Point {
        self.axes
            .iter()
            .map(|a| (a.filters.len() - 1, a.kernels.len() - 1))
            .collect()
    }

    pub fn spec_at(&self, point: &Point) -> Result<ArchitectureSpec> {
        if point.len() != self.axes.len() {
            return Err(Error::Argument(format!(
                "point has {} coordinates, space has {}",
                point.len(),
                self.axes.len()
            )));
        }
        let mut spec = self.base.clone();
        for (axis, &(fi, ki)) in self.axes.iter().zip(point) {
            let (&f, &k) = axis
                .filters
                .get(fi)
                .zip(axis.kernels.get(ki))
                .ok_or_else(|| {
                    Error::Argument(format!(
                        "coordinate ({fi}, {ki}) outside layer {}",
                        axis.layer
                    ))
                })?;
            match &mut spec.layers[axis.layer] {
                LayerSpec::Conv { params, .. } => {
                    params.out_channels = f;
                    params.kernel = (k, k);
                }
                LayerSpec::Fc { out_features } => *out_features = f,
                _ => unreachable!("axes only reference conv and fc layers"),
            }
        }
        Ok(spec)
    }

    /// Every point in lexicographic coordinate order.
    pub fn points(&self) -> Vec<Point> {
        let mut out = vec![Vec::new()];
        for a in &self.axes {
            let mut next = Vec::with_capacity(out.len() * a.filters.len() * a.kernels.len());
            for p in &out {
                for fi in 0..a.filters.len() {
                    for ki in 0..a.kernels.len() {
                        let mut q = p.clone();
                        q.push((fi, ki));
                        next.push(q);
                    }
                }
            }
            out = next;
        }
        out
    }

    /// Whether `spec` is the image of some point.
    pub fn contains(&self, spec: &ArchitectureSpec) -> bool {
        self.points()
            .iter()
            .any(|p| self.spec_at(p).map(|s| &s == spec).unwrap_or(false))
    }

    /// One-step shrinks of `point`, earlier layer first, filter move before
    /// kernel move.
    fn moves(&self, point: &Point) -> Vec<Point> {
        let mut out = Vec::new();
        for (i, &(fi, ki)) in point.iter().enumerate() {
            if fi > 0 {
                let mut q = point.clone();
                q[i].0 -= 1;
                out.push(q);
            }
            if ki > 0 {
                let mut q = point.clone();
                q[i].1 -= 1;
                out.push(q);
            }
        }
        out
    }
}

/// Validation accuracy of an architecture, in [0, 1]. Must be
/// deterministic for a given spec.
pub trait Evaluator {
    fn evaluate(&mut self, spec: &ArchitectureSpec) -> Result<f64>;
}

impl<F: FnMut(&ArchitectureSpec) -> Result<f64>> Evaluator for F {
    fn evaluate(&mut self, spec: &ArchitectureSpec) -> Result<f64> {
        self(spec)
    }
}

/// `min(1, params / p0)`: monotone in every coordinate.
#[derive(Debug, Clone, Copy)]
pub struct ParamRatioEvaluator {
    pub p0: f64,
}

impl Evaluator for ParamRatioEvaluator {
    fn evaluate(&mut self, spec: &ArchitectureSpec) -> Result<f64> {
        Ok((param_count(spec)? as f64 / self.p0).min(1.0))
    }
}

/// Accuracy limited by the weakest layer: each listed layer contributes
/// `min(1, width / required)` and the result is their minimum. Monotone,
/// with a box-shaped feasible set.
#[derive(Debug, Clone)]
pub struct BottleneckEvaluator {
    /// (layer index, width at which the layer stops limiting accuracy)
    pub required: Vec<(usize, usize)>,
}

impl Evaluator for BottleneckEvaluator {
    fn evaluate(&mut self, spec: &ArchitectureSpec) -> Result<f64> {
        self.required
            .iter()
            .try_fold(1.0f64, |acc, &(layer, need)| {
                let w = spec
                    .layers
                    .get(layer)
                    .and_then(width_of)
                    .ok_or_else(|| Error::Argument(format!("layer {layer} has no width")))?;
                Ok(acc.min(w as f64 / need as f64).min(1.0))
            })
    }
}

/// [`ParamRatioEvaluator`] with a hole: when `layer` has exactly `width`
/// filters the accuracy collapses to 0.
#[derive(Debug, Clone, Copy)]
pub struct CliffEvaluator {
    pub p0: f64,
    pub layer: usize,
    pub width: usize,
}

impl Evaluator for CliffEvaluator {
    fn evaluate(&mut self, spec: &ArchitectureSpec) -> Result<f64> {
        if spec.layers.get(self.layer).and_then(width_of) == Some(self.width) {
            return Ok(0.0);
        }
        ParamRatioEvaluator { p0: self.p0 }.evaluate(spec)
    }
}

/// Trains each candidate from a fixed seed on one split of a dataset and
/// scores it on the other.
pub struct TrainingEvaluator {
    train: Dataset,
    validation: Dataset,
    cfg: TrainConfig,
    init_seed: u64,
}

impl TrainingEvaluator {
    /// `split_ratio` of `data` trains, the rest validates. `cfg` should
    /// carry the scaled-down iteration budget used per candidate.
    pub fn new(data: &Dataset, cfg: TrainConfig, split_ratio: f64, init_seed: u64) -> Result<Self> {
        cfg.validate()?;
        let (train, validation) = data.split(split_ratio, cfg.seed)?;
        if train.is_empty() || validation.is_empty() {
            return Err(Error::Argument(format!(
                "split ratio {split_ratio} leaves an empty side of {} samples",
                data.len()
            )));
        }
        Ok(TrainingEvaluator {
            train,
            validation,
            cfg,
            init_seed,
        })
    }
}

impl Evaluator for TrainingEvaluator {
    fn evaluate(&mut self, spec: &ArchitectureSpec) -> Result<f64> {
        let net = Network::build(spec, self.init_seed)?;
        let out = train(net, &self.train, None, &self.cfg, &mut Quiet)?;
        accuracy(&out.network, &self.validation, 256)
    }
}

/// One probe of the search.
#[derive(Debug, Clone, PartialEq)]
pub struct LogEntry {
    pub spec_id: String,
    pub spec: ArchitectureSpec,
    pub params: u64,
    pub macs: u64,
    pub accuracy: f64,
    /// The probe became the new incumbent.
    pub accepted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchStatus {
    Feasible,
    /// Nothing evaluated met the floor.
    Infeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub status: SearchStatus,
    /// Best feasible spec, or the base spec when infeasible.
    pub best: ArchitectureSpec,
    pub params: u64,
    pub macs: u64,
    pub accuracy: f64,
    pub floor: f64,
    /// Distinct specs evaluated.
    pub evaluations: usize,
    pub log: Vec<LogEntry>,
}

impl SearchResult {
    pub fn is_feasible(&self) -> bool {
        self.status == SearchStatus::Feasible
    }

    /// `spec_id,params,macs,a_v,accepted` rows.
    pub fn log_csv(&self) -> String {
        let mut s = String::from("spec_id,params,macs,a_v,accepted\n");
        for e in &self.log {
            let _ = writeln!(
                s,
                "{},{},{},{:.6},{}",
                e.spec_id, e.params, e.macs, e.accuracy, e.accepted
            );
        }
        s
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let status = match self.status {
            SearchStatus::Feasible => "feasible",
            SearchStatus::Infeasible => "infeasible",
        };
        let _ = writeln!(s, "status: {status}");
        let _ = writeln!(s, "floor: {}", self.floor);
        let _ = writeln!(s, "evaluations: {}", self.evaluations);
        let _ = writeln!(
            s,
            "best: {} params, {} MACs, a_v {:.4}",
            self.params, self.macs, self.accuracy
        );
        let _ = writeln!(s, "spec:\n{}", self.best);
        s
    }
}

/// Evaluation cache keyed by spec id, counting distinct evaluations.
struct Probe<'a> {
    eval: &'a mut dyn Evaluator,
    cache: HashMap<String, f64>,
    log: Vec<LogEntry>,
}

impl<'a> Probe<'a> {
    fn new(eval: &'a mut dyn Evaluator) -> Self {
        Probe {
            eval,
            cache: HashMap::new(),
            log: Vec::new(),
        }
    }

    fn evaluations(&self) -> usize {
        self.cache.len()
    }

    /// Returns the log index and accuracy.
    fn run(&mut self, spec: &ArchitectureSpec) -> Result<(usize, f64)> {
        let id = spec.id();
        let acc = match self.cache.get(&id) {
            Some(&a) => a,
            None => {
                let a = self.eval.evaluate(spec)?;
                if !(0.0..=1.0).contains(&a) {
                    return Err(Error::Internal(format!(
                        "evaluator returned accuracy {a} outside [0, 1]"
                    )));
                }
                self.cache.insert(id.clone(), a);
                a
            }
        };
        self.log.push(LogEntry {
            spec_id: id,
            spec: spec.clone(),
            params: param_count(spec)?,
            macs: mac_count(spec)?,
            accuracy: acc,
            accepted: false,
        });
        Ok((self.log.len() - 1, acc))
    }
}

fn check_floor(floor: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&floor) {
        return Err(Error::Argument(format!(
            "accuracy floor must be in [0, 1], got {floor}"
        )));
    }
    Ok(())
}

fn finish(
    probe: Probe<'_>,
    best: Option<(ArchitectureSpec, f64)>,
    base: &ArchitectureSpec,
    floor: f64,
) -> Result<SearchResult> {
    let (status, spec, acc) = match best {
        Some((s, a)) => (SearchStatus::Feasible, s, a),
        None => {
            let a = probe
                .log
                .iter()
                .find(|e| &e.spec == base)
                .map_or(0.0, |e| e.accuracy);
            (SearchStatus::Infeasible, base.clone(), a)
        }
    };
    Ok(SearchResult {
        status,
        params: param_count(&spec)?,
        macs: mac_count(&spec)?,
        best: spec,
        accuracy: acc,
        floor,
        evaluations: probe.evaluations(),
        log: probe.log,
    })
}

/// Greedy coordinate descent from the base spec. `budget` caps distinct
/// evaluations, the base included.
pub fn optimize(
    space: &SearchSpace,
    eval: &mut dyn Evaluator,
    floor: f64,
    budget: usize,
) -> Result<SearchResult> {
    check_floor(floor)?;
    if budget == 0 {
        return Err(Error::Argument("search budget must be at least 1".into()));
    }
    let mut probe = Probe::new(eval);
    let mut point = space.top();
    let base = space.spec_at(&point)?;
    let (idx, acc) = probe.run(&base)?;
    if acc < floor {
        return finish(probe, None, &base, floor);
    }
    probe.log[idx].accepted = true;
    let mut best = (base.clone(), acc);
    let mut params = param_count(&base)?;

    'rounds: loop {
        let mut candidates = Vec::new();
        for q in space.moves(&point) {
            let spec = space.spec_at(&q)?;
            let p = param_count(&spec)?;
            if p < params {
                candidates.push((params - p, q, spec));
            }
        }
        // Stable: equal savings keep move order.
        candidates.sort_by_key(|c| std::cmp::Reverse(c.0));
        for (_, q, spec) in candidates {
            if !probe.cache.contains_key(&spec.id()) && probe.evaluations() >= budget {
                break 'rounds;
            }
            let (idx, acc) = probe.run(&spec)?;
            if acc >= floor {
                probe.log[idx].accepted = true;
                params = param_count(&spec)?;
                point = q;
                best = (spec, acc);
                continue 'rounds;
            }
        }
        break;
    }
    finish(probe, Some(best), &base, floor)
}

/// Exhaustive search; the exact minimum-parameter feasible point. Ties go
/// to the first point in lexicographic order.
pub fn brute_force(
    space: &SearchSpace,
    eval: &mut dyn Evaluator,
    floor: f64,
    cap: u64,
) -> Result<SearchResult> {
    check_floor(floor)?;
    if space.size() > cap {
        return Err(Error::Argument(format!(
            "space has {} points, cap is {cap}",
            space.size()
        )));
    }
    let mut probe = Probe::new(eval);
    let mut best: Option<(ArchitectureSpec, f64, u64, usize)> = None;
    for p in space.points() {
        let spec = space.spec_at(&p)?;
        let (idx, acc) = probe.run(&spec)?;
        let params = probe.log[idx].params;
        if acc >= floor && best.as_ref().is_none_or(|b| params < b.2) {
            best = Some((spec, acc, params, idx));
        }
    }
    if let Some((_, _, _, idx)) = &best {
        probe.log[*idx].accepted = true;
    }
    let base = space.base().clone();
    finish(probe, best.map(|(s, a, _, _)| (s, a)), &base, floor)
}

/// A small three-layer space (128 points) for exercising the search.
pub fn toy_space() -> SearchSpace {
    let base: ArchitectureSpec = "input 3x16x16\nconv 3x3x8\npool 2x2 s2\nconv 3x3x8\npool 2x2 s2\nconv 3x3x8\nfc 16\nsoftmax 10\n"
        .parse()
        .expect("toy spec parses");
    let range = Some(FilterRange {
        min: 2,
        max: 8,
        step: 2,
    });
    SearchSpace::new(
        base,
        vec![
            Tunable {
                layer: 0,
                filters: range,
                kernels: vec![1, 3],
            },
            Tunable {
                layer: 2,
                filters: range,
                kernels: vec![],
            },
            Tunable {
                layer: 4,
                filters: range,
                kernels: vec![],
            },
        ],
    )
    .expect("toy space is valid")
}

/// A 3 x 4 x 4 filter-only space used with [`CliffEvaluator`].
pub fn cliff_space() -> SearchSpace {
    let base: ArchitectureSpec =
        "input 3x12x12\nconv 3x3x6\npool 2x2 s2\nconv 3x3x8\nfc 12\nsoftmax 10\n"
            .parse()
            .expect("cliff spec parses");
    SearchSpace::new(
        base,
        vec![
            Tunable {
                layer: 0,
                filters: Some(FilterRange {
                    min: 2,
                    max: 6,
                    step: 2,
                }),
                kernels: vec![],
            },
            Tunable {
                layer: 2,
                filters: Some(FilterRange {
                    min: 2,
                    max: 8,
                    step: 2,
                }),
                kernels: vec![],
            },
            Tunable {
                layer: 3,
                filters: Some(FilterRange {
                    min: 3,
                    max: 12,
                    step: 3,
                }),
                kernels: vec![],
            },
        ],
    )
    .expect("cliff space is valid")
}
