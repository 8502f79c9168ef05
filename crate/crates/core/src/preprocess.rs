//! Background-motion removal and flow-norm maps.

use crate::flow_codec::FlowField;

/// Default guard for the normalization denominator in [`stabilize`].
pub const DEFAULT_STABILIZE_EPS: f64 = 1e-12;

/// Non-negative per-pixel scalar plane.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl ScalarMap {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Largest value in the map.
    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }
}

/// Neumaier-compensated sum, accumulated in slice order.
pub(crate) fn compensated_sum(xs: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut carry = 0.0;
    for &x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            carry += (sum - t) + x;
        } else {
            carry += (x - t) + sum;
        }
        sum = t;
    }
    sum + carry
}

/// Subtracts the per-channel mean flow and divides by the largest absolute
/// component of the centered field.
///
/// Every output component lies in `[-1, 1]`. Means are computed with
/// compensated summation in row-major order. If the centered field's largest
/// component is below `eps` the result is the zero field.
pub fn stabilize(flow: &FlowField, eps: f64) -> FlowField {
    let n = flow.len() as f64;
    let mean_u = compensated_sum(flow.u()) / n;
    let mean_v = compensated_sum(flow.v()) / n;

    let mut u: Vec<f64> = flow.u().iter().map(|x| x - mean_u).collect();
    let mut v: Vec<f64> = flow.v().iter().map(|x| x - mean_v).collect();
    let peak = u.iter().chain(&v).fold(0.0f64, |m, x| m.max(x.abs()));

    if peak < eps {
        u.iter_mut().chain(v.iter_mut()).for_each(|x| *x = 0.0);
    } else {
        u.iter_mut().chain(v.iter_mut()).for_each(|x| *x /= peak);
    }
    FlowField::new(flow.width(), flow.height(), u, v).expect("stabilized flow keeps its shape")
}

/// Per-pixel Euclidean norm of the flow.
pub fn flow_norm_map(flow: &FlowField) -> ScalarMap {
    ScalarMap {
        width: flow.width(),
        height: flow.height(),
        values: flow
            .u()
            .iter()
            .zip(flow.v())
            .map(|(a, b)| a.hypot(*b))
            .collect(),
    }
}
