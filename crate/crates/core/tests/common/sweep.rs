//! Greedy-vs-exhaustive comparisons over the bundled search spaces.

use micronnet::efficiency::param_count;
use micronnet::search::{
    brute_force, optimize, BottleneckEvaluator, CliffEvaluator, Evaluator, ParamRatioEvaluator,
    SearchResult, SearchSpace, DEFAULT_BRUTE_FORCE_CAP,
};

/// Floors 0.005, 0.010, ..., 1.000.
pub fn floors() -> Vec<f64> {
    (1..=200).map(|k| k as f64 / 200.0).collect()
}

pub fn base_params(space: &SearchSpace) -> f64 {
    param_count(space.base()).unwrap() as f64
}

/// Greedy and exhaustive results for one evaluator and floor, with a budget
/// large enough never to bind.
pub fn both(
    space: &SearchSpace,
    eval: &dyn Fn() -> Box<dyn Evaluator>,
    floor: f64,
) -> (SearchResult, SearchResult) {
    let g = optimize(space, eval().as_mut(), floor, 100_000).unwrap();
    let b = brute_force(space, eval().as_mut(), floor, DEFAULT_BRUTE_FORCE_CAP).unwrap();
    (g, b)
}

/// Every filter threshold combination the space can express, one
/// bottleneck evaluator per combination.
pub fn bottleneck_instances(space: &SearchSpace) -> Vec<BottleneckEvaluator> {
    let mut out = vec![BottleneckEvaluator { required: vec![] }];
    for (layer, widths) in space.filter_choices() {
        if widths.len() < 2 {
            continue;
        }
        out = out
            .into_iter()
            .flat_map(|e| {
                widths.iter().map(move |&w| {
                    let mut req = e.required.clone();
                    req.push((layer, w));
                    BottleneckEvaluator { required: req }
                })
            })
            .collect();
    }
    out
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SweepStats {
    pub runs: usize,
    pub exact: usize,
    /// Largest greedy / optimum parameter ratio over feasible runs.
    pub worst_ratio: f64,
    pub worst_floor: f64,
    /// Feasible greedy results with a_v < l, or more params than the base.
    pub violations: usize,
    /// Runs where greedy and brute force disagree on feasibility.
    pub status_mismatch: usize,
}

impl SweepStats {
    pub fn record(&mut self, space: &SearchSpace, floor: f64, g: &SearchResult, b: &SearchResult) {
        self.runs += 1;
        if g.is_feasible() != b.is_feasible() {
            self.status_mismatch += 1;
        }
        if g.is_feasible() && (g.accuracy < floor || g.params > param_count(space.base()).unwrap())
        {
            self.violations += 1;
        }
        if !g.is_feasible() || !b.is_feasible() {
            if g.is_feasible() == b.is_feasible() {
                self.exact += 1;
            }
            return;
        }
        if g.params == b.params {
            self.exact += 1;
        }
        let ratio = g.params as f64 / b.params as f64;
        if ratio > self.worst_ratio {
            self.worst_ratio = ratio;
            self.worst_floor = floor;
        }
    }
}

pub fn param_ratio_sweep(space: &SearchSpace) -> SweepStats {
    let p0 = base_params(space);
    let mut s = SweepStats::default();
    for l in floors() {
        let (g, b) = both(space, &|| Box::new(ParamRatioEvaluator { p0 }), l);
        s.record(space, l, &g, &b);
    }
    s
}

pub fn cliff_sweep(space: &SearchSpace, layer: usize, width: usize) -> SweepStats {
    let p0 = base_params(space);
    let mut s = SweepStats::default();
    for l in floors() {
        let (g, b) = both(space, &|| Box::new(CliffEvaluator { p0, layer, width }), l);
        s.record(space, l, &g, &b);
    }
    s
}

/// Every bottleneck instance at floors 0.5, 0.75 and 1.
pub fn bottleneck_sweep(space: &SearchSpace) -> SweepStats {
    let mut s = SweepStats::default();
    for e in bottleneck_instances(space) {
        for l in [0.5, 0.75, 1.0] {
            let (g, b) = both(space, &|| Box::new(e.clone()), l);
            s.record(space, l, &g, &b);
        }
    }
    s
}
