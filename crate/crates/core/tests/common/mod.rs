//! Shared fixtures and an independent straight-line reference of the loss.
#![allow(dead_code)]

use flowloss_core::{FeatureMap, FlowField, LossParams, SaliencyMap};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Standard-normal features.
pub fn random_features(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> FeatureMap {
    let values = (0..c * h * w).map(|_| rng.sample(StandardNormal)).collect();
    FeatureMap::new(c, h, w, values).unwrap()
}

/// Random flow with a sprinkling of stationary pixels and a shared
/// direction in some regions, so every kernel branch is exercised.
pub fn random_flow(rng: &mut ChaCha8Rng, h: usize, w: usize) -> FlowField {
    let drift = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
    FlowField::from_fn(w, h, |_, _| match rng.gen_range(0..4) {
        0 => (0.0, 0.0),
        1 => drift,
        _ => (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)),
    })
    .unwrap()
}

/// Flow that is constant on each `block x block` tile.
pub fn block_flow(rng: &mut ChaCha8Rng, h: usize, w: usize, block: usize) -> FlowField {
    let tiles: Vec<(f64, f64)> = (0..h.div_ceil(block) * w.div_ceil(block))
        .map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect();
    let per_row = w.div_ceil(block);
    FlowField::from_fn(w, h, |x, y| tiles[(y / block) * per_row + x / block]).unwrap()
}

pub fn random_saliency(rng: &mut ChaCha8Rng, h: usize, w: usize) -> SaliencyMap {
    SaliencyMap::new(h, w, (0..h * w).map(|_| rng.gen::<f64>()).collect()).unwrap()
}

pub fn params(k: usize, stride: usize) -> LossParams {
    LossParams {
        patch_size: k,
        stride,
        ..LossParams::default()
    }
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// Per-window output of the reference: (weight, loss, anchor).
pub struct Reference {
    pub total: f64,
    pub windows: Vec<(f64, f64, usize)>,
}

/// Direct transcription of the whole pipeline on raw arrays: mean removal and
/// max-abs normalization of the flow, window enumeration, anchor choice,
/// cosine and kernel similarity, softmax, KL, motion weights, weighted sum.
///
/// `features` is C x H x W channel-major; `u`, `v` are H x W row-major raw
/// (unstabilized) flow planes.
#[allow(clippy::too_many_arguments)]
pub fn reference_loss(
    features: &[f64],
    c: usize,
    h: usize,
    w: usize,
    u: &[f64],
    v: &[f64],
    saliency: Option<&[f64]>,
    k: usize,
    stride: usize,
    tau: f64,
    sigma: f64,
    eps: f64,
) -> Reference {
    let n = (h * w) as f64;
    let mu = u.iter().sum::<f64>() / n;
    let mv = v.iter().sum::<f64>() / n;
    let mut peak = 0.0f64;
    for i in 0..h * w {
        peak = peak.max((u[i] - mu).abs()).max((v[i] - mv).abs());
    }
    let (su, sv): (Vec<f64>, Vec<f64>) = if peak < 1e-12 {
        (vec![0.0; h * w], vec![0.0; h * w])
    } else {
        (
            u.iter().map(|x| (x - mu) / peak).collect(),
            v.iter().map(|x| (x - mv) / peak).collect(),
        )
    };

    let mut windows = Vec::new();
    let mut motions = Vec::new();
    let mut r0 = 0;
    while r0 + k <= h {
        let mut c0 = 0;
        while c0 + k <= w {
            let pix = |i: usize| (r0 + i / k) * w + (c0 + i % k);

            let anchor = {
                let score = |i: usize| match saliency {
                    Some(s) => s[pix(i)],
                    None => (su[pix(i)].powi(2) + sv[pix(i)].powi(2)).sqrt(),
                };
                let mut best = 0;
                for i in 1..k * k {
                    if score(i) > score(best) {
                        best = i;
                    }
                }
                best
            };

            let feat =
                |i: usize| -> Vec<f64> { (0..c).map(|ch| features[ch * h * w + pix(i)]).collect() };
            let normalize = |x: Vec<f64>| -> Vec<f64> {
                let len = x.iter().map(|a| a * a).sum::<f64>().sqrt();
                x.iter().map(|a| a / len.max(eps)).collect()
            };
            let fa = normalize(feat(anchor));
            let zf: Vec<f64> = (0..k * k)
                .map(|i| {
                    let fi = normalize(feat(i));
                    fa.iter().zip(&fi).map(|(a, b)| a * b).sum()
                })
                .collect();

            let (ax, ay) = (su[pix(anchor)], sv[pix(anchor)]);
            let zv: Vec<f64> = (0..k * k)
                .map(|i| {
                    let (bx, by) = (su[pix(i)], sv[pix(i)]);
                    let na = (ax * ax + ay * ay).sqrt();
                    let nb = (bx * bx + by * by).sqrt();
                    let cos = if na < eps || nb < eps {
                        0.0
                    } else {
                        ((ax * bx + ay * by) / (na * nb)).clamp(0.0, 1.0)
                    };
                    nb * ((cos - 1.0) / sigma).exp()
                })
                .collect();

            let softmax = |z: &[f64]| -> Vec<f64> {
                let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = z.iter().map(|x| ((x - m) / tau).exp()).collect();
                let s: f64 = e.iter().sum();
                e.iter().map(|x| x / s).collect()
            };
            let pf = softmax(&zf);
            let pv = softmax(&zv);
            let kl: f64 = (0..k * k).map(|i| pv[i] * (pv[i] / pf[i]).ln()).sum();

            let motion = (0..k * k)
                .map(|i| su[pix(i)].powi(2) + sv[pix(i)].powi(2))
                .sum::<f64>()
                .sqrt();
            motions.push(motion);
            windows.push((0.0, kl, anchor));
            c0 += stride;
        }
        r0 += stride;
    }

    let all: f64 = motions.iter().sum();
    let mut total = 0.0;
    for (win, m) in windows.iter_mut().zip(&motions) {
        win.0 = if all < eps { 0.0 } else { m / all };
        total += win.0 * win.1;
    }
    Reference { total, windows }
}

/// Smooth camera-like motion: 0.5% zoom and a slight rotation about the
/// image centre plus a pan, roughly what consecutive video frames show.
pub fn affine_flow(width: usize, height: usize) -> FlowField {
    let (cx, cy) = (width as f64 / 2.0, height as f64 / 2.0);
    FlowField::from_fn(width, height, |x, y| {
        let (dx, dy) = (x as f64 - cx, y as f64 - cy);
        (
            1.5 + 0.005 * dx - 0.0025 * dy,
            -0.7 + 0.0025 * dx + 0.005 * dy,
        )
    })
    .unwrap()
}
