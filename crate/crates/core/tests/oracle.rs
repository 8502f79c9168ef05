//! Library loss vs. the straight-line reference in `common`.

mod common;

use common::*;
use flowloss_core::{flow_loss, stabilize, FeatureMap, FlowField, LossParams, SaliencyMap};
use rand::Rng;

fn compare(f: &FeatureMap, raw_flow: &FlowField, s: Option<&SaliencyMap>, p: &LossParams) {
    let report = flow_loss(f, &stabilize(raw_flow, 1e-12), s, p).unwrap();
    let (c, h, w) = f.shape();
    let reference = reference_loss(
        f.values(),
        c,
        h,
        w,
        raw_flow.u(),
        raw_flow.v(),
        s.map(|s| s.values()),
        p.patch_size,
        p.stride,
        p.tau,
        p.sigma,
        p.eps,
    );
    assert!(
        rel_close(report.total, reference.total, 1e-12),
        "total {} vs {}",
        report.total,
        reference.total
    );
    assert_eq!(report.patches.len(), reference.windows.len());
    for (got, (weight, loss, anchor)) in report.patches.iter().zip(&reference.windows) {
        assert_eq!(got.salient, *anchor);
        assert!((got.weight - weight).abs() <= 1e-12 * weight.abs().max(1e-300));
        assert!(rel_close(got.loss, *loss, 1e-12) || (got.loss - loss).abs() < 1e-15);
    }
}

#[test]
fn block_constant_flow_example() {
    let mut r = rng(2024);
    let f = random_features(&mut r, 4, 6, 6);
    let flow = block_flow(&mut r, 6, 6, 3);
    compare(&f, &flow, None, &params(3, 3));
}

#[test]
fn fuzzed_instances_agree_with_reference() {
    let mut r = rng(7);
    for case in 0..100 {
        let k = [1, 2, 3][case % 3];
        let stride = if case % 2 == 0 { 1 } else { k };
        let c = if (case / 2) % 2 == 0 { 1 } else { 4 };
        let h = r.gen_range(k..=7);
        let w = r.gen_range(k..=7);
        let f = random_features(&mut r, c, h, w);
        let flow = if case % 5 == 0 {
            block_flow(&mut r, h, w, 2)
        } else {
            random_flow(&mut r, h, w)
        };
        let s = (case % 4 < 2).then(|| random_saliency(&mut r, h, w));
        compare(&f, &flow, s.as_ref(), &params(k, stride));
    }
}

#[test]
fn single_window_total_is_its_patch_loss() {
    let mut r = rng(3);
    let f = random_features(&mut r, 4, 3, 3);
    let flow = stabilize(&random_flow(&mut r, 3, 3), 1e-12);
    let report = flow_loss(&f, &flow, None, &params(3, 3)).unwrap();
    assert_eq!(report.patches.len(), 1);
    assert_eq!(report.patches[0].weight, 1.0);
    assert_eq!(report.total, report.patches[0].loss);
}

#[test]
fn report_invariants() {
    let mut r = rng(11);
    for _ in 0..50 {
        let f = random_features(&mut r, 3, 7, 8);
        let flow = stabilize(&random_flow(&mut r, 7, 8), 1e-12);
        let report = flow_loss(&f, &flow, None, &params(3, 2)).unwrap();
        let weighted: f64 = report.patches.iter().map(|p| p.weight * p.loss).sum();
        assert!(rel_close(report.total, weighted, 1e-12));
        assert!(report.total >= 0.0);
        assert!(report.per_patch().all(|l| l >= 0.0));
        let wsum: f64 = report.weights().sum();
        assert!((wsum - 1.0).abs() < 1e-12);
    }
}

#[test]
fn per_pixel_feature_rescaling_is_invisible() {
    let mut r = rng(5);
    let f = random_features(&mut r, 4, 6, 6);
    let flow = stabilize(&random_flow(&mut r, 6, 6), 1e-12);
    let p = params(3, 1);
    let base = flow_loss(&f, &flow, None, &p).unwrap();

    let scaled = |pixel: usize, factor: f64| {
        let mut v = f.values().to_vec();
        for c in 0..4 {
            v[c * 36 + pixel] *= factor;
        }
        flow_loss(&FeatureMap::new(4, 6, 6, v).unwrap(), &flow, None, &p).unwrap()
    };
    // Power-of-two scaling commutes exactly with normalization.
    assert_eq!(scaled(14, 8.0), base);
    let other = scaled(20, 3.7);
    assert!(rel_close(other.total, base.total, 1e-12));
}
