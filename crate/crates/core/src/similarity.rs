//! Intra-patch similarity: anchor selection, feature cosine similarity,
//! flow kernel similarity and temperature softmax.

use thiserror::Error;

use crate::patch_grid::{ChannelGrid, Patch, DEFAULT_PATCH_SIZE};

/// Default softmax temperature.
pub const DEFAULT_TAU: f64 = 0.1;
/// Default flow-kernel radius.
pub const DEFAULT_SIGMA: f64 = 0.7;
/// Default guard for zero-norm vectors and zero-motion frames.
pub const DEFAULT_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamError {
    #[error("temperature must be positive and finite, got {0}")]
    Tau(f64),
    #[error("kernel radius must be positive and finite, got {0}")]
    Sigma(f64),
    #[error("eps must be positive and finite, got {0}")]
    Eps(f64),
    #[error("patch size and stride must be at least 1 (got K={patch_size}, stride={stride})")]
    Window { patch_size: usize, stride: usize },
    #[error("invalid saliency map: {0}")]
    Saliency(String),
    #[error("not a probability distribution: {0}")]
    Distribution(String),
}

/// Hyperparameters of the objectness loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParams {
    pub patch_size: usize,
    pub stride: usize,
    pub tau: f64,
    pub sigma: f64,
    pub eps: f64,
}

impl Default for LossParams {
    fn default() -> Self {
        Self {
            patch_size: DEFAULT_PATCH_SIZE,
            stride: DEFAULT_PATCH_SIZE,
            tau: DEFAULT_TAU,
            sigma: DEFAULT_SIGMA,
            eps: DEFAULT_EPS,
        }
    }
}

impl LossParams {
    pub fn validate(&self) -> Result<(), ParamError> {
        let positive = |x: f64| x.is_finite() && x > 0.0;
        if self.patch_size == 0 || self.stride == 0 {
            return Err(ParamError::Window {
                patch_size: self.patch_size,
                stride: self.stride,
            });
        }
        if !positive(self.tau) {
            return Err(ParamError::Tau(self.tau));
        }
        if !positive(self.sigma) {
            return Err(ParamError::Sigma(self.sigma));
        }
        if !positive(self.eps) {
            return Err(ParamError::Eps(self.eps));
        }
        Ok(())
    }
}

/// Per-pixel attention mass used to pick each patch's anchor location.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl SaliencyMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self, ParamError> {
        if height == 0 || width == 0 || values.len() != height * width {
            return Err(ParamError::Saliency(format!(
                "{} values do not form a {height}x{width} map",
                values.len()
            )));
        }
        if values.iter().any(|x| !x.is_finite()) {
            return Err(ParamError::Saliency("non-finite value".into()));
        }
        Ok(Self {
            height,
            width,
            values,
        })
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
}

impl ChannelGrid for SaliencyMap {
    fn channels(&self) -> usize {
        1
    }

    fn grid_height(&self) -> usize {
        self.height
    }

    fn grid_width(&self) -> usize {
        self.width
    }

    fn value(&self, _channel: usize, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }
}

/// Similarities between a patch's anchor and each of its K² locations.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityVector(pub Vec<f64>);

impl SimilarityVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Distribution(Vec<f64>);

impl Distribution {
    /// Checks non-negativity and that the entries sum to one within 1e-9.
    pub fn new(probs: Vec<f64>) -> Result<Self, ParamError> {
        if probs.is_empty() {
            return Err(ParamError::Distribution("empty".into()));
        }
        if let Some(p) = probs.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
            return Err(ParamError::Distribution(format!(
                "entry {p} is not a probability"
            )));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(ParamError::Distribution(format!("entries sum to {total}")));
        }
        Ok(Self(probs))
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_value = f64::NEG_INFINITY;
    for (i, x) in values.enumerate() {
        // Strict comparison keeps the lowest index on ties.
        if x > best_value {
            best = i;
            best_value = x;
        }
    }
    best
}

/// Location with the largest saliency; ties go to the lowest index.
pub fn select_salient(saliency_patch: &[f64]) -> usize {
    argmax(saliency_patch.iter().copied())
}

/// Location with the largest flow magnitude, for use when no saliency map is
/// available. Ties go to the lowest index.
pub fn fallback_salient(flow_patch: &Patch) -> usize {
    argmax((0..flow_patch.locations()).map(|i| {
        let [a, b] = flow_patch.flow_at(i);
        a * a + b * b
    }))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Scales `v` to unit length, or by `1 / eps` when its norm is below `eps`.
pub(crate) fn unit(v: &[f64], eps: f64) -> Vec<f64> {
    let d = norm(v).max(eps);
    v.iter().map(|x| x / d).collect()
}

/// Cosine similarity between the anchor feature and every location.
pub fn feature_similarity(feature_patch: &Patch, salient: usize, eps: f64) -> SimilarityVector {
    let units: Vec<Vec<f64>> = (0..feature_patch.locations())
        .map(|i| unit(&feature_patch.vector(i), eps))
        .collect();
    let anchor = &units[salient];
    SimilarityVector(units.iter().map(|u| dot(anchor, u)).collect())
}

/// Cosine of the angle between two 2-vectors clamped to `[0, 1]`; zero if
/// either has norm below `eps`.
pub fn saturated_cosine(x: [f64; 2], y: [f64; 2], eps: f64) -> f64 {
    let nx = x[0].hypot(x[1]);
    let ny = y[0].hypot(y[1]);
    if nx < eps || ny < eps {
        return 0.0;
    }
    ((x[0] * y[0] + x[1] * y[1]) / (nx * ny)).clamp(0.0, 1.0)
}

/// Flow kernel `|y| * exp((satcos(x, y) - 1) / sigma)`.
///
/// Stationary pixels (`y = 0`) score zero regardless of `x`; pixels moving
/// against the anchor bottom out at `|y| * exp(-1 / sigma)`.
pub fn rbf_similarity(x: [f64; 2], y: [f64; 2], sigma: f64) -> f64 {
    rbf_similarity_eps(x, y, sigma, DEFAULT_EPS)
}

pub fn rbf_similarity_eps(x: [f64; 2], y: [f64; 2], sigma: f64, eps: f64) -> f64 {
    let c = saturated_cosine(x, y, eps);
    y[0].hypot(y[1]) * ((c - 1.0) / sigma).exp()
}

pub fn flow_similarity(
    flow_patch: &Patch,
    salient: usize,
    sigma: f64,
    eps: f64,
) -> SimilarityVector {
    let anchor = flow_patch.flow_at(salient);
    SimilarityVector(
        (0..flow_patch.locations())
            .map(|i| rbf_similarity_eps(anchor, flow_patch.flow_at(i), sigma, eps))
            .collect(),
    )
}

/// `softmax(z / tau)` with max-shift.
pub fn softmax_temp(z: &SimilarityVector, tau: f64) -> Distribution {
    let logits: Vec<f64> = z.0.iter().map(|x| x / tau).collect();
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let total: f64 = exps.iter().sum();
    Distribution(exps.into_iter().map(|e| e / total).collect())
}
