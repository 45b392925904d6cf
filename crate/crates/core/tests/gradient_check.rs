mod common;

use common::*;
use micronnet::layers::{ConvParams, PoolParams};

const SEEDS: u64 = 20;

fn assert_all(name: &str, f: impl Fn(u64) -> f64) {
    for seed in 0..SEEDS {
        let e = f(seed);
        assert!(e < TOL, "{name}: seed {seed} relative error {e:e}");
    }
}

#[test]
fn conv_plain() {
    assert_all("conv 3x3", |s| {
        conv_error(s, ConvParams::new(3, 3), [2, 2, 6, 6])
    });
}

#[test]
fn conv_single_image_two_filters() {
    assert_all("conv 1x3x5x5", |s| {
        conv_error(s, ConvParams::new(2, 3), [1, 3, 5, 5])
    });
}

#[test]
fn conv_pointwise() {
    assert_all("conv 1x1", |s| {
        conv_error(s, ConvParams::new(1, 1), [2, 3, 5, 5])
    });
}

#[test]
fn conv_strided_padded() {
    let p = ConvParams {
        out_channels: 2,
        kernel: (3, 2),
        stride: 2,
        pad: 1,
    };
    assert_all("conv strided", |s| conv_error(s, p, [2, 2, 7, 6]));
}

#[test]
fn maxpool_overlapping_truncated() {
    assert_all("pool 3x3 s2", |s| {
        pool_error(s, PoolParams::new(3, 2), [2, 2, 8, 8])
    });
    assert_all("pool 2x2 s2", |s| {
        pool_error(s, PoolParams::new(2, 2), [1, 3, 5, 7])
    });
}

#[test]
fn dense() {
    assert_all("fc", |s| fc_error(s, 3, [2, 3, 3], 4));
    assert_all("fc 7->5", |s| fc_error(s, 2, [7, 1, 1], 5));
}

#[test]
fn relu_layer() {
    assert_all("relu", relu_error);
}

#[test]
fn softmax_cross_entropy_layer() {
    assert_all("softmax-ce", softmax_ce_error);
}

/// Parameters whose finite differences straddle a ReLU or pooling kink are
/// excluded; they must stay rare or the check loses its teeth.
#[test]
fn end_to_end_network() {
    let (mut checked, mut kinked) = (0, 0);
    for seed in 0..SEEDS {
        let c = network_check(seed);
        assert!(
            c.error < TOL,
            "network: seed {seed} relative error {:e}",
            c.error
        );
        checked += c.checked;
        kinked += c.kinked;
    }
    assert!(kinked * 20 <= checked, "{kinked} kinked of {checked}");
}
