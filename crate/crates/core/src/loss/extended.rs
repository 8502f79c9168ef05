//! Forward-only loss evaluation in double-double arithmetic.
//!
//! Central differences of an `f64` loss bottom out at roughly
//! `eps_f64 * |L| / step` in absolute error, which swamps small gradient
//! coordinates. The finite-difference checker evaluates the loss here
//! instead, with the perturbed coordinate carried exactly. Windows that do
//! not contain the perturbed coordinate cancel exactly in the central
//! difference, so only covering windows are evaluated. This path shares
//! no code with the analytic gradient beyond anchor selection, which does not
//! depend on the features.

use twofloat::TwoFloat;

use crate::flow_codec::FlowField;
use crate::patch_grid::{extract_patch, PatchGrid, Window};
use crate::similarity::{fallback_salient, select_salient, LossParams, SaliencyMap};

use super::FeatureMap;

fn tf(x: f64) -> TwoFloat {
    TwoFloat::from(x)
}

/// ln 2 split into leading and trailing doubles.
const LN2_HI: f64 = std::f64::consts::LN_2;
const LN2_LO: f64 = 2.319_046_813_846_299_6e-17;

/// `exp` to roughly 1e-30 relative accuracy: `x = k ln2 + r`, then
/// `exp(r / 2^10)` by Taylor series and ten squarings kept in `expm1` form.
pub(super) fn exp(x: TwoFloat) -> TwoFloat {
    if x.hi() < -745.0 {
        return tf(0.0);
    }
    let k = (x.hi() / LN2_HI).round();
    let r = (x - tf(LN2_HI) * k) - tf(LN2_LO) * k;
    let s = r * (1.0 / 1024.0);

    let mut term = s;
    let mut expm1 = s;
    for n in 2..=12 {
        term = term * s / n as f64;
        expm1 += term;
    }
    for _ in 0..10 {
        expm1 = expm1 * 2.0 + expm1 * expm1;
    }
    (expm1 + 1.0) * 2f64.powi(k as i32)
}

/// Natural log by two Newton steps on `exp`, starting from the `f64` value.
pub(super) fn ln(x: TwoFloat) -> TwoFloat {
    let mut y = tf(x.hi().ln());
    for _ in 0..2 {
        y = y + x * exp(-y) - 1.0;
    }
    y
}

fn norm(v: &[TwoFloat]) -> TwoFloat {
    let sq = v.iter().fold(tf(0.0), |acc, &x| acc + x * x);
    if sq.hi() == 0.0 {
        tf(0.0)
    } else {
        sq.sqrt()
    }
}

fn max(a: TwoFloat, b: TwoFloat) -> TwoFloat {
    if a >= b {
        a
    } else {
        b
    }
}

/// Motion weights of every window, in double-double.
pub(super) fn weights(flow: &FlowField, grid: &PatchGrid, eps: f64) -> Vec<TwoFloat> {
    let motions: Vec<TwoFloat> = grid
        .windows()
        .iter()
        .map(|&w| {
            let patch = extract_patch(flow, grid, w);
            norm(&patch.values().iter().map(|&x| tf(x)).collect::<Vec<_>>())
        })
        .collect();
    let all = motions.iter().fold(tf(0.0), |acc, &m| acc + m);
    if all < tf(eps) {
        return vec![tf(0.0); motions.len()];
    }
    motions.into_iter().map(|m| m / all).collect()
}

/// KL loss of one window with `features[index]` displaced by `delta`.
#[allow(clippy::too_many_arguments)]
pub(super) fn perturbed_patch_loss(
    features: &FeatureMap,
    index: usize,
    delta: f64,
    flow: &FlowField,
    saliency: Option<&SaliencyMap>,
    grid: &PatchGrid,
    window: Window,
    params: &LossParams,
) -> TwoFloat {
    let (channels, height, width) = features.shape();
    let n = params.patch_size * params.patch_size;
    let eps = tf(params.eps);
    let tau = tf(params.tau);
    let sigma = tf(params.sigma);
    let feature = |c: usize, row: usize, col: usize| {
        let i = (c * height + row) * width + col;
        let x = tf(features.values()[i]);
        if i == index {
            x + tf(delta)
        } else {
            x
        }
    };

    let flow_patch = extract_patch(flow, grid, window);
    let salient = match saliency {
        Some(s) => select_salient(extract_patch(s, grid, window).values()),
        None => fallback_salient(&flow_patch),
    };

    let units: Vec<Vec<TwoFloat>> = (0..n)
        .map(|i| {
            let (row, col) = grid.location(window, i);
            let v: Vec<TwoFloat> = (0..channels).map(|c| feature(c, row, col)).collect();
            let d = max(norm(&v), eps);
            v.into_iter().map(|x| x / d).collect()
        })
        .collect();
    let z_f: Vec<TwoFloat> = units
        .iter()
        .map(|u| {
            u.iter()
                .zip(&units[salient])
                .fold(tf(0.0), |acc, (&a, &b)| acc + a * b)
        })
        .collect();

    let flows: Vec<[TwoFloat; 2]> = (0..n)
        .map(|i| {
            let [a, b] = flow_patch.flow_at(i);
            [tf(a), tf(b)]
        })
        .collect();
    let anchor = flows[salient];
    let anchor_norm = norm(&anchor);
    let z_v: Vec<TwoFloat> = flows
        .iter()
        .map(|y| {
            let y_norm = norm(y);
            let cos = if anchor_norm < eps || y_norm < eps {
                tf(0.0)
            } else {
                let c = (anchor[0] * y[0] + anchor[1] * y[1]) / (anchor_norm * y_norm);
                if c < tf(0.0) {
                    tf(0.0)
                } else if c > tf(1.0) {
                    tf(1.0)
                } else {
                    c
                }
            };
            y_norm * exp((cos - tf(1.0)) / sigma)
        })
        .collect();

    // log-softmax of z / tau
    let log_softmax = |z: &[TwoFloat]| -> Vec<TwoFloat> {
        let logits: Vec<TwoFloat> = z.iter().map(|&x| x / tau).collect();
        let m = logits.iter().copied().fold(logits[0], max);
        let sum = logits.iter().fold(tf(0.0), |acc, &l| acc + exp(l - m));
        let lse = m + ln(sum);
        logits.into_iter().map(|l| l - lse).collect()
    };
    let log_pf = log_softmax(&z_f);
    let log_pv = log_softmax(&z_v);
    log_pv
        .iter()
        .zip(&log_pf)
        .fold(tf(0.0), |acc, (&lv, &lf)| acc + exp(lv) * (lv - lf))
}
