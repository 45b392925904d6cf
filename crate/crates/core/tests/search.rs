mod common;

use common::sweep::*;
use micronnet::efficiency::param_count;
use micronnet::search::{
    brute_force, cliff_space, optimize, toy_space, BottleneckEvaluator, CliffEvaluator,
    FilterRange, ParamRatioEvaluator, SearchSpace, Tunable, DEFAULT_BRUTE_FORCE_CAP, DEFAULT_FLOOR,
};
use micronnet::{ArchitectureSpec, LayerSpec};
use proptest::prelude::*;

#[test]
fn bottleneck_is_exact_on_bundled_spaces() {
    for space in [toy_space(), cliff_space()] {
        let s = bottleneck_sweep(&space);
        assert_eq!(s.exact, s.runs, "{s:?}");
        assert_eq!(s.violations, 0);
    }
}

#[test]
fn param_ratio_default_floor_matches_brute_force() {
    let space = toy_space();
    let p0 = base_params(&space);
    let (g, b) = both(
        &space,
        &|| Box::new(ParamRatioEvaluator { p0 }),
        DEFAULT_FLOOR,
    );
    assert!(g.is_feasible());
    assert_eq!(g.params, b.params);
}

/// A threshold on parameter count is monotone but knapsack-like: the
/// largest single shrink can strand the descent above the optimum. At
/// l = 0.205 greedy keeps a 1x1x6 first layer (390 params) where the
/// optimum is 3x3x2 everywhere (350).
#[test]
fn greedy_is_not_exact_for_every_monotone_evaluator() {
    let space = toy_space();
    let p0 = base_params(&space);
    let (g, b) = both(&space, &|| Box::new(ParamRatioEvaluator { p0 }), 0.205);
    assert_eq!(b.params, 350);
    assert_eq!(g.params, 390);
    match &g.best.layers[0] {
        LayerSpec::Conv { params, .. } => {
            assert_eq!((params.kernel, params.out_channels), ((1, 1), 6))
        }
        other => panic!("unexpected first layer {other:?}"),
    }
}

#[test]
fn param_ratio_sweep_never_violates_the_floor() {
    let s = param_ratio_sweep(&toy_space());
    assert_eq!(s.violations, 0);
    assert_eq!(s.status_mismatch, 0);
    assert!(s.worst_ratio < 1.25, "{s:?}");
}

#[test]
fn cliff_stays_within_bound() {
    let s = cliff_sweep(&cliff_space(), 0, 2);
    assert_eq!(s.violations, 0);
    assert!(s.worst_ratio <= 1.25, "{s:?}");
}

#[test]
fn infeasible_floor_on_toy_space() {
    let space = toy_space();
    let p0 = 2.0 * base_params(&space);
    let r = optimize(&space, &mut ParamRatioEvaluator { p0 }, 1.0, 50).unwrap();
    assert!(!r.is_feasible());
    assert!(r.summary().starts_with("status: infeasible"));
}

#[test]
fn best_spec_round_trips_through_text() {
    let space = toy_space();
    let p0 = base_params(&space);
    let r = optimize(&space, &mut ParamRatioEvaluator { p0 }, 0.6, 1000).unwrap();
    let back: ArchitectureSpec = r.best.to_string().parse().unwrap();
    assert_eq!(back, r.best);
    assert!(space.contains(&back));
}

fn arb_space() -> impl Strategy<Value = SearchSpace> {
    prop_oneof![Just(toy_space()), Just(cliff_space())]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn greedy_matches_brute_force_on_box_feasible_sets(
        space in arb_space(),
        picks in prop::collection::vec(0usize..4, 3),
        floor in 0.3f64..=1.0,
    ) {
        let required = space
            .filter_choices()
            .iter()
            .zip(&picks)
            .map(|((layer, widths), &i)| (*layer, widths[i % widths.len()]))
            .collect();
        let e = BottleneckEvaluator { required };
        let (g, b) = both(&space, &|| Box::new(e.clone()), floor);
        prop_assert_eq!(g.is_feasible(), b.is_feasible());
        prop_assert_eq!(g.params, b.params);
    }

    #[test]
    fn search_invariants(
        space in arb_space(),
        floor in 0.01f64..=1.0,
        p0_scale in 0.5f64..1.5,
        cliff in any::<bool>(),
        budget in 1usize..60,
    ) {
        let p0 = base_params(&space) * p0_scale;
        let base_params = param_count(space.base()).unwrap();
        let r = if cliff {
            optimize(&space, &mut CliffEvaluator { p0, layer: 0, width: 2 }, floor, budget).unwrap()
        } else {
            optimize(&space, &mut ParamRatioEvaluator { p0 }, floor, budget).unwrap()
        };
        prop_assert!(r.evaluations <= budget);
        prop_assert!(r.params <= base_params);
        if r.is_feasible() {
            prop_assert!(r.accuracy >= floor);
        } else {
            prop_assert_eq!(&r.best, space.base());
        }
        for e in &r.log {
            e.spec.validate().unwrap();
            prop_assert!(space.contains(&e.spec));
            prop_assert_eq!(e.params, param_count(&e.spec).unwrap());
        }
        // An infeasible base is the only way to come back infeasible.
        let base_ok = (base_params as f64 / p0).min(1.0) >= floor;
        prop_assert_eq!(r.is_feasible(), base_ok);
    }

    #[test]
    fn zero_floor_finds_min_corner(space in arb_space(), p0_scale in 0.5f64..1.5) {
        let p0 = base_params(&space) * p0_scale;
        let r = optimize(&space, &mut ParamRatioEvaluator { p0 }, 0.0, 10_000).unwrap();
        let b = brute_force(&space, &mut ParamRatioEvaluator { p0 }, 0.0, DEFAULT_BRUTE_FORCE_CAP).unwrap();
        prop_assert_eq!(r.params, b.params);
    }
}

#[test]
fn kernel_only_axis() {
    let base = toy_space().base().clone();
    let space = SearchSpace::new(
        base,
        vec![Tunable {
            layer: 2,
            filters: Some(FilterRange {
                min: 4,
                max: 8,
                step: 4,
            }),
            kernels: vec![1, 3],
        }],
    )
    .unwrap();
    assert_eq!(space.size(), 4);
    let (g, b) = both(&space, &|| Box::new(ParamRatioEvaluator { p0: 1.0 }), 0.0);
    assert_eq!(g.params, b.params);
}
