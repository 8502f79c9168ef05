//! Motion-weighted patch KL loss and its gradient with respect to the
//! feature map.
//!
//! For every window `p` the anchor location is chosen (saliency argmax, or
//! the fastest-moving pixel when no saliency is given), feature and flow
//! similarity vectors are turned into distributions with a temperature
//! softmax, and `L_p = KL(p_flow || p_feature)`. Patches are weighted by their
//! share of the frame's total flow magnitude and summed.
//!
//! Patches are evaluated in parallel, but every reduction runs sequentially
//! in window order, so results are bit-identical for any thread count.

mod extended;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;
use twofloat::TwoFloat;

use crate::flow_codec::FlowField;
use crate::patch_grid::{
    build_grid, extract_patch, patch_flow_norm, ChannelGrid, GridError, GridSpec, Patch, PatchGrid,
    Window,
};
use crate::similarity::{
    fallback_salient, feature_similarity, flow_similarity, select_salient, softmax_temp, unit,
    Distribution, LossParams, ParamError, SaliencyMap,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Params(#[from] ParamError),
    #[error("distribution lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("invalid feature map: {0}")]
    InvalidFeatures(String),
}

/// Dense C x H x W feature tensor, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl FeatureMap {
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        values: Vec<f64>,
    ) -> Result<Self, LossError> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(LossError::InvalidFeatures(format!(
                "empty shape {channels}x{height}x{width}"
            )));
        }
        if values.len() != channels * height * width {
            return Err(LossError::InvalidFeatures(format!(
                "{} values do not fill {channels}x{height}x{width}",
                values.len()
            )));
        }
        if values.iter().any(|x| !x.is_finite()) {
            return Err(LossError::InvalidFeatures("non-finite value".into()));
        }
        Ok(Self {
            channels,
            height,
            width,
            values,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `(channels, height, width)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn index(&self, channel: usize, row: usize, col: usize) -> usize {
        (channel * self.height + row) * self.width + col
    }
}

impl ChannelGrid for FeatureMap {
    fn channels(&self) -> usize {
        self.channels
    }

    fn grid_height(&self) -> usize {
        self.height
    }

    fn grid_width(&self) -> usize {
        self.width
    }

    fn value(&self, channel: usize, row: usize, col: usize) -> f64 {
        self.values[self.index(channel, row, col)]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchLoss {
    pub window: Window,
    /// Motion weight `w_p`.
    pub weight: f64,
    /// KL loss `L_p`.
    pub loss: f64,
    /// Flattened anchor location `s_p` within the patch.
    pub salient: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub total: f64,
    pub patches: Vec<PatchLoss>,
    pub grid: GridSpec,
}

impl LossReport {
    pub fn per_patch(&self) -> impl Iterator<Item = f64> + '_ {
        self.patches.iter().map(|p| p.loss)
    }

    pub fn weights(&self) -> impl Iterator<Item = f64> + '_ {
        self.patches.iter().map(|p| p.weight)
    }

    pub fn salient(&self) -> impl Iterator<Item = usize> + '_ {
        self.patches.iter().map(|p| p.salient)
    }
}

/// `KL(p_v || p_f)`. Terms with `p_v[i] == 0` contribute nothing.
pub fn patch_kl(p_v: &Distribution, p_f: &Distribution) -> Result<f64, LossError> {
    if p_v.len() != p_f.len() {
        return Err(LossError::LengthMismatch(p_v.len(), p_f.len()));
    }
    Ok(p_v
        .probs()
        .iter()
        .zip(p_f.probs())
        .filter(|(pv, _)| **pv > 0.0)
        .map(|(pv, pf)| pv * (pv.ln() - pf.ln()))
        .sum())
}

/// Each patch's share of the summed patch flow norms.
///
/// When the total motion is below `eps` every weight is zero, so a static
/// frame contributes no loss.
pub fn patch_weights(flow_patches: &[Patch], eps: f64) -> Vec<f64> {
    let norms: Vec<f64> = flow_patches.iter().map(patch_flow_norm).collect();
    weights_from_norms(&norms, eps)
}

pub fn weights_from_norms(norms: &[f64], eps: f64) -> Vec<f64> {
    let total: f64 = norms.iter().sum();
    if total < eps {
        return vec![0.0; norms.len()];
    }
    norms.iter().map(|n| n / total).collect()
}

struct PatchEval {
    salient: usize,
    motion: f64,
    loss: f64,
    /// Unweighted `dL_p / d f_p`, channel-major like [`Patch`].
    grad: Option<Vec<f64>>,
}

fn check_inputs(
    features: &FeatureMap,
    flow: &FlowField,
    saliency: Option<&SaliencyMap>,
    params: &LossParams,
) -> Result<PatchGrid, LossError> {
    params.validate()?;
    let (c, h, w) = features.shape();
    if (h, w) != (flow.height(), flow.width()) {
        return Err(LossError::DimMismatch(format!(
            "features are {c}x{h}x{w} (CxHxW) but flow is {}x{} (HxW)",
            flow.height(),
            flow.width()
        )));
    }
    if let Some(s) = saliency {
        if (s.height(), s.width()) != (h, w) {
            return Err(LossError::DimMismatch(format!(
                "features are {c}x{h}x{w} (CxHxW) but saliency is {}x{} (HxW)",
                s.height(),
                s.width()
            )));
        }
    }
    let spec = GridSpec::new(h, w, params.patch_size, params.stride)?;
    Ok(build_grid(spec))
}

/// Backpropagates `dL/dz_f` through the cosine similarities and the
/// unit normalization of every feature vector in the patch.
fn feature_patch_grad(features: &Patch, salient: usize, dz: &[f64], eps: f64) -> Vec<f64> {
    let n = features.locations();
    let channels = features.channels();
    let vectors: Vec<Vec<f64>> = (0..n).map(|i| features.vector(i)).collect();
    let units: Vec<Vec<f64>> = vectors.iter().map(|v| unit(v, eps)).collect();

    // z[i] = u_s . u_i, so the anchor collects sum_i dz[i] u_i and location i
    // collects dz[i] u_s. At i = s both terms apply.
    let mut grad_units = vec![vec![0.0; channels]; n];
    for i in 0..n {
        for c in 0..channels {
            grad_units[salient][c] += dz[i] * units[i][c];
            grad_units[i][c] += dz[i] * units[salient][c];
        }
    }

    let mut out = vec![0.0; channels * n];
    for i in 0..n {
        let r = vectors[i].iter().map(|x| x * x).sum::<f64>().sqrt();
        let g = &grad_units[i];
        if r >= eps {
            // d(f/|f|)/df = (I - u u^T) / |f|
            let along: f64 = units[i].iter().zip(g).map(|(u, g)| u * g).sum();
            for c in 0..channels {
                out[c * n + i] = (g[c] - units[i][c] * along) / r;
            }
        } else {
            for c in 0..channels {
                out[c * n + i] = g[c] / eps;
            }
        }
    }
    out
}

fn evaluate_patch(
    features: &FeatureMap,
    flow: &FlowField,
    saliency: Option<&SaliencyMap>,
    grid: &PatchGrid,
    window: Window,
    params: &LossParams,
    with_grad: bool,
) -> PatchEval {
    let flow_patch = extract_patch(flow, grid, window);
    let feature_patch = extract_patch(features, grid, window);
    let salient = match saliency {
        Some(s) => select_salient(extract_patch(s, grid, window).values()),
        None => fallback_salient(&flow_patch),
    };

    let z_f = feature_similarity(&feature_patch, salient, params.eps);
    let z_v = flow_similarity(&flow_patch, salient, params.sigma, params.eps);
    let p_f = softmax_temp(&z_f, params.tau);
    let p_v = softmax_temp(&z_v, params.tau);
    let loss = patch_kl(&p_v, &p_f).expect("both similarity vectors have K^2 entries");

    let grad = with_grad.then(|| {
        // d KL(p_v || softmax(z_f / tau)) / d z_f = (p_f - p_v) / tau
        let dz: Vec<f64> = p_f
            .probs()
            .iter()
            .zip(p_v.probs())
            .map(|(pf, pv)| (pf - pv) / params.tau)
            .collect();
        feature_patch_grad(&feature_patch, salient, &dz, params.eps)
    });

    PatchEval {
        salient,
        motion: patch_flow_norm(&flow_patch),
        loss,
        grad,
    }
}

fn run(
    features: &FeatureMap,
    flow: &FlowField,
    saliency: Option<&SaliencyMap>,
    params: &LossParams,
    with_grad: bool,
) -> Result<(LossReport, Option<Vec<f64>>), LossError> {
    let grid = check_inputs(features, flow, saliency, params)?;
    let evals: Vec<PatchEval> = grid
        .windows()
        .par_iter()
        .map(|&w| evaluate_patch(features, flow, saliency, &grid, w, params, with_grad))
        .collect();

    let norms: Vec<f64> = evals.iter().map(|e| e.motion).collect();
    let weights = weights_from_norms(&norms, params.eps);

    let mut total = 0.0;
    for (e, w) in evals.iter().zip(&weights) {
        total += w * e.loss;
    }

    let gradient = with_grad.then(|| {
        let mut g = vec![0.0; features.values().len()];
        let n = params.patch_size * params.patch_size;
        for ((e, &w), &window) in evals.iter().zip(&weights).zip(grid.windows()) {
            if w == 0.0 {
                continue;
            }
            let local = e.grad.as_ref().expect("gradient requested");
            for c in 0..features.channels() {
                for i in 0..n {
                    let (row, col) = grid.location(window, i);
                    g[features.index(c, row, col)] += w * local[c * n + i];
                }
            }
        }
        g
    });

    let patches = evals
        .iter()
        .zip(&weights)
        .zip(grid.windows())
        .map(|((e, &weight), &window)| PatchLoss {
            window,
            weight,
            loss: e.loss,
            salient: e.salient,
        })
        .collect();
    Ok((
        LossReport {
            total,
            patches,
            grid: grid.spec(),
        },
        gradient,
    ))
}

/// Evaluates the motion-weighted loss.
///
/// `flow` is expected to be stabilized already (see
/// [`crate::preprocess::stabilize`]). Without a saliency map each patch is
/// anchored at its fastest-moving pixel.
pub fn flow_loss(
    features: &FeatureMap,
    flow: &FlowField,
    saliency: Option<&SaliencyMap>,
    params: &LossParams,
) -> Result<LossReport, LossError> {
    run(features, flow, saliency, params, false).map(|(r, _)| r)
}

/// Evaluates the loss together with `dL/df`, laid out like
/// [`FeatureMap::values`].
///
/// The flow, the saliency map, the anchor choice and the motion weights are
/// treated as constants.
pub fn flow_loss_grad(
    features: &FeatureMap,
    flow: &FlowField,
    saliency: Option<&SaliencyMap>,
    params: &LossParams,
) -> Result<(LossReport, Vec<f64>), LossError> {
    run(features, flow, saliency, params, true).map(|(r, g)| (r, g.expect("gradient requested")))
}

/// Which coordinates a gradient check visits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampling {
    All,
    /// Up to `count` distinct coordinates drawn with a seeded generator; every
    /// coordinate when `count` covers the whole tensor.
    Random {
        count: usize,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckEntry {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub max_rel_error: f64,
    pub mean_rel_error: f64,
}

/// Relative error with the denominator floored at 1e-8.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn sampled_indices(len: usize, sampling: Sampling) -> Vec<usize> {
    match sampling {
        Sampling::Random { count, seed } if count < len => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut picked = sample(&mut rng, len, count).into_vec();
            picked.sort_unstable();
            picked
        }
        _ => (0..len).collect(),
    }
}

/// Compares the analytic gradient against central finite differences.
pub fn finite_diff_check(
    features: &FeatureMap,
    flow: &FlowField,
    saliency: Option<&SaliencyMap>,
    params: &LossParams,
    step: f64,
    sampling: Sampling,
) -> Result<GradCheckReport, LossError> {
    let (_, analytic) = flow_loss_grad(features, flow, saliency, params)?;
    compare_gradient(features, flow, saliency, params, step, sampling, &analytic)
}

/// Like [`finite_diff_check`], but checks a caller-supplied gradient.
pub fn compare_gradient(
    features: &FeatureMap,
    flow: &FlowField,
    saliency: Option<&SaliencyMap>,
    params: &LossParams,
    step: f64,
    sampling: Sampling,
    analytic: &[f64],
) -> Result<GradCheckReport, LossError> {
    if !(step.is_finite() && step > 0.0) {
        return Err(LossError::InvalidFeatures(format!(
            "finite-difference step must be positive, got {step}"
        )));
    }
    if analytic.len() != features.values().len() {
        return Err(LossError::LengthMismatch(
            analytic.len(),
            features.values().len(),
        ));
    }
    let grid = check_inputs(features, flow, saliency, params)?;

    let weights = extended::weights(flow, &grid, params.eps);
    let plane = features.height() * features.width();
    let k = params.patch_size;

    let indices = sampled_indices(features.values().len(), sampling);
    let entries: Vec<GradCheckEntry> = indices
        .par_iter()
        .map(|&index| {
            let row = (index % plane) / features.width();
            let col = index % features.width();
            let mut diff = TwoFloat::from(0.0);
            for (&window, &w) in grid.windows().iter().zip(&weights) {
                let covers = (window.row..window.row + k).contains(&row)
                    && (window.col..window.col + k).contains(&col);
                if !covers || w.hi() == 0.0 {
                    continue;
                }
                let at = |delta| {
                    extended::perturbed_patch_loss(
                        features, index, delta, flow, saliency, &grid, window, params,
                    )
                };
                diff += w * (at(step) - at(-step));
            }
            let numeric = f64::from(diff / (2.0 * step));
            GradCheckEntry {
                index,
                analytic: analytic[index],
                numeric,
                rel_error: relative_error(analytic[index], numeric),
            }
        })
        .collect();

    let max_rel_error = entries.iter().map(|e| e.rel_error).fold(0.0, f64::max);
    let mean_rel_error = if entries.is_empty() {
        0.0
    } else {
        entries.iter().map(|e| e.rel_error).sum::<f64>() / entries.len() as f64
    };
    Ok(GradCheckReport {
        entries,
        max_rel_error,
        mean_rel_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist(p: &[f64]) -> Distribution {
        Distribution::new(p.to_vec()).unwrap()
    }

    #[test]
    fn kl_values() {
        let a = dist(&[0.5, 0.5]);
        let b = dist(&[0.9, 0.1]);
        assert_eq!(patch_kl(&a, &a).unwrap(), 0.0);
        let ab = 0.5 * (0.5f64 / 0.9).ln() + 0.5 * (0.5f64 / 0.1).ln();
        assert!((patch_kl(&a, &b).unwrap() - ab).abs() < 1e-15);
        assert!((patch_kl(&a, &b).unwrap() - 0.510_826).abs() < 1e-6);
        assert!((patch_kl(&b, &a).unwrap() - 0.368_064).abs() < 1e-6);
        assert_eq!(
            patch_kl(&a, &dist(&[0.2, 0.3, 0.5])),
            Err(LossError::LengthMismatch(2, 3))
        );
    }

    #[test]
    fn weight_rules() {
        assert_eq!(weights_from_norms(&[3.0, 1.0], 1e-12), vec![0.75, 0.25]);
        assert_eq!(weights_from_norms(&[0.0, 0.0], 1e-12), vec![0.0, 0.0]);
        let patches = vec![
            Patch::new(2, 1, vec![3.0, 4.0]),
            Patch::new(2, 1, vec![0.0, 5.0]),
        ];
        assert_eq!(patch_weights(&patches, 1e-12), vec![0.5, 0.5]);
    }

    #[test]
    fn zero_motion_frame() {
        let f = FeatureMap::new(2, 3, 3, (0..18).map(|x| x as f64 * 0.3 - 1.0).collect()).unwrap();
        let flow = FlowField::zeros(3, 3).unwrap();
        let (report, grad) = flow_loss_grad(&f, &flow, None, &LossParams::default()).unwrap();
        assert_eq!(report.total, 0.0);
        assert!(report.weights().all(|w| w == 0.0));
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn single_window() {
        let f = FeatureMap::new(1, 2, 2, vec![1.0, -1.0, 2.0, 0.5]).unwrap();
        let flow =
            FlowField::new(2, 2, vec![1.0, 0.0, -1.0, 0.2], vec![0.0, 1.0, 0.0, 0.1]).unwrap();
        let params = LossParams {
            patch_size: 2,
            stride: 2,
            ..LossParams::default()
        };
        let r = flow_loss(&f, &flow, None, &params).unwrap();
        assert_eq!(r.patches.len(), 1);
        assert_eq!(r.patches[0].weight, 1.0);
        assert_eq!(r.total, r.patches[0].loss);
    }

    #[test]
    fn shape_errors() {
        let f = FeatureMap::new(1, 4, 4, vec![0.0; 16]).unwrap();
        let flow = FlowField::zeros(5, 4).unwrap();
        let err = flow_loss(&f, &flow, None, &LossParams::default()).unwrap_err();
        assert!(matches!(err, LossError::DimMismatch(_)));
        assert!(err.to_string().contains("1x4x4") && err.to_string().contains("4x5"));

        let f = FeatureMap::new(1, 2, 2, vec![0.0; 4]).unwrap();
        let flow = FlowField::zeros(2, 2).unwrap();
        assert!(matches!(
            flow_loss(&f, &flow, None, &LossParams::default()),
            Err(LossError::Grid(GridError::PatchLargerThanGrid { .. }))
        ));
    }

    #[test]
    fn matched_patch_has_zero_loss() {
        // Identical features and identical flow everywhere: both similarity
        // vectors are constant, so both distributions are uniform.
        let f = FeatureMap::new(
            3,
            3,
            3,
            [vec![0.4; 9], vec![-1.0; 9], vec![2.0; 9]].concat(),
        )
        .unwrap();
        let flow = FlowField::from_fn(3, 3, |_, _| (0.6, -0.8)).unwrap();
        let r = flow_loss(&f, &flow, None, &LossParams::default()).unwrap();
        assert!(r.total.abs() < 1e-15);
    }

    #[test]
    fn sampling_is_seeded() {
        let a = sampled_indices(
            1000,
            Sampling::Random {
                count: 200,
                seed: 7,
            },
        );
        let b = sampled_indices(
            1000,
            Sampling::Random {
                count: 200,
                seed: 7,
            },
        );
        assert_eq!(a, b);
        assert_eq!(a.len(), 200);
        assert_eq!(
            sampled_indices(
                10,
                Sampling::Random {
                    count: 200,
                    seed: 7
                }
            )
            .len(),
            10
        );
    }
}
