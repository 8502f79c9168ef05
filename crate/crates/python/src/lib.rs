//! Python bindings. Arrays cross the boundary as flat row-major lists.

use flowloss_core::flow_codec as codec;
use flowloss_core::{self as core, LossParams, LossReport};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict, PyList};

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Dense optical flow with `u` and `v` planes of `width * height` samples.
#[pyclass(name = "FlowField", module = "flowloss", frozen)]
pub struct PyFlowField(core::FlowField);

#[pymethods]
impl PyFlowField {
    #[new]
    fn new(width: usize, height: usize, u: Vec<f64>, v: Vec<f64>) -> PyResult<Self> {
        core::FlowField::new(width, height, u, v)
            .map(Self)
            .map_err(value_error)
    }

    #[getter]
    fn width(&self) -> usize {
        self.0.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.0.height()
    }

    #[getter]
    fn u(&self) -> Vec<f64> {
        self.0.u().to_vec()
    }

    #[getter]
    fn v(&self) -> Vec<f64> {
        self.0.v().to_vec()
    }

    fn __repr__(&self) -> String {
        format!(
            "FlowField(width={}, height={})",
            self.0.width(),
            self.0.height()
        )
    }
}

/// Channel-major `C x H x W` feature tensor.
#[pyclass(name = "FeatureMap", module = "flowloss", frozen)]
pub struct PyFeatureMap(core::FeatureMap);

#[pymethods]
impl PyFeatureMap {
    #[new]
    fn new(channels: usize, height: usize, width: usize, values: Vec<f64>) -> PyResult<Self> {
        core::FeatureMap::new(channels, height, width, values)
            .map(Self)
            .map_err(value_error)
    }

    #[getter]
    fn shape(&self) -> (usize, usize, usize) {
        self.0.shape()
    }

    #[getter]
    fn values(&self) -> Vec<f64> {
        self.0.values().to_vec()
    }
}

/// Per-pixel saliency used to pick each patch's anchor.
#[pyclass(name = "SaliencyMap", module = "flowloss", frozen)]
pub struct PySaliencyMap(core::SaliencyMap);

#[pymethods]
impl PySaliencyMap {
    #[new]
    fn new(height: usize, width: usize, values: Vec<f64>) -> PyResult<Self> {
        core::SaliencyMap::new(height, width, values)
            .map(Self)
            .map_err(value_error)
    }
}

#[pyfunction]
#[pyo3(signature = (flow, eps = 1e-12))]
fn stabilize(flow: &PyFlowField, eps: f64) -> PyFlowField {
    PyFlowField(core::stabilize(&flow.0, eps))
}

#[pyfunction]
fn flow_norm_map(flow: &PyFlowField) -> Vec<f64> {
    core::flow_norm_map(&flow.0).values().to_vec()
}

fn params(k: usize, stride: Option<usize>, tau: f64, sigma: f64) -> LossParams {
    LossParams {
        patch_size: k,
        stride: stride.unwrap_or(k),
        tau,
        sigma,
        ..LossParams::default()
    }
}

fn report_dict<'py>(py: Python<'py>, report: &LossReport) -> PyResult<Bound<'py, PyDict>> {
    let patches = PyList::empty(py);
    for p in &report.patches {
        let d = PyDict::new(py);
        d.set_item("origin", (p.window.row, p.window.col))?;
        d.set_item("weight", p.weight)?;
        d.set_item("loss", p.loss)?;
        d.set_item("salient_index", p.salient)?;
        patches.append(d)?;
    }
    let out = PyDict::new(py);
    out.set_item("total", report.total)?;
    out.set_item("patches", patches)?;
    Ok(out)
}

/// Loss of `features` against an already stabilized `flow`.
#[pyfunction]
#[pyo3(signature = (features, flow, saliency = None, k = 3, stride = None, tau = 0.1, sigma = 0.7))]
#[allow(clippy::too_many_arguments)]
fn flow_loss<'py>(
    py: Python<'py>,
    features: &PyFeatureMap,
    flow: &PyFlowField,
    saliency: Option<PyRef<'py, PySaliencyMap>>,
    k: usize,
    stride: Option<usize>,
    tau: f64,
    sigma: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let p = params(k, stride, tau, sigma);
    let report = core::flow_loss(&features.0, &flow.0, saliency.as_deref().map(|s| &s.0), &p)
        .map_err(value_error)?;
    report_dict(py, &report)
}

/// Like `flow_loss`, also returning the gradient with respect to the features.
#[pyfunction]
#[pyo3(signature = (features, flow, saliency = None, k = 3, stride = None, tau = 0.1, sigma = 0.7))]
#[allow(clippy::too_many_arguments)]
fn flow_loss_grad<'py>(
    py: Python<'py>,
    features: &PyFeatureMap,
    flow: &PyFlowField,
    saliency: Option<PyRef<'py, PySaliencyMap>>,
    k: usize,
    stride: Option<usize>,
    tau: f64,
    sigma: f64,
) -> PyResult<(Bound<'py, PyDict>, Vec<f64>)> {
    let p = params(k, stride, tau, sigma);
    let (report, grad) =
        core::flow_loss_grad(&features.0, &flow.0, saliency.as_deref().map(|s| &s.0), &p)
            .map_err(value_error)?;
    Ok((report_dict(py, &report)?, grad))
}

#[pyfunction]
fn read_flo(data: &[u8]) -> PyResult<PyFlowField> {
    codec::read_flo(data).map(PyFlowField).map_err(value_error)
}

#[pyfunction]
fn write_flo<'py>(py: Python<'py>, flow: &PyFlowField) -> PyResult<Bound<'py, PyBytes>> {
    let bytes = codec::write_flo(&flow.0).map_err(value_error)?;
    Ok(PyBytes::new(py, &bytes))
}

/// Signed 16-bit quantization; returns `(qu, qv)`.
#[pyfunction]
#[pyo3(signature = (flow, scale = codec::DEFAULT_SCALE))]
fn quantize(flow: &PyFlowField, scale: u32) -> PyResult<(Vec<i16>, Vec<i16>)> {
    if scale == 0 {
        return Err(PyValueError::new_err("scale must be at least 1"));
    }
    let q = codec::quantize(&flow.0, scale);
    Ok((q.qu().to_vec(), q.qv().to_vec()))
}

/// Packs quantized components into 32-bit words, `u` in the high half.
#[pyfunction]
#[pyo3(signature = (flow, scale = codec::DEFAULT_SCALE))]
fn pack(flow: &PyFlowField, scale: u32) -> PyResult<Vec<u32>> {
    if scale == 0 {
        return Err(PyValueError::new_err("scale must be at least 1"));
    }
    Ok(codec::pack(&codec::quantize(&flow.0, scale))
        .words()
        .to_vec())
}

#[pyfunction]
#[pyo3(signature = (flow, scale = codec::DEFAULT_SCALE))]
fn encode_tiff<'py>(
    py: Python<'py>,
    flow: &PyFlowField,
    scale: u32,
) -> PyResult<Bound<'py, PyBytes>> {
    if scale == 0 {
        return Err(PyValueError::new_err("scale must be at least 1"));
    }
    let bytes = codec::encode_tiff(&codec::pack(&codec::quantize(&flow.0, scale)), scale)
        .map_err(value_error)?;
    Ok(PyBytes::new(py, &bytes))
}

/// Decodes a packed-flow TIFF back into a dequantized flow.
#[pyfunction]
fn decode_tiff(data: &[u8]) -> PyResult<PyFlowField> {
    let (packed, scale) = codec::decode_tiff(data).map_err(value_error)?;
    let q = codec::unpack(&packed, scale).map_err(value_error)?;
    Ok(PyFlowField(codec::dequantize(&q)))
}

#[pymodule]
fn flowloss(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyFlowField>()?;
    m.add_class::<PyFeatureMap>()?;
    m.add_class::<PySaliencyMap>()?;
    m.add_function(wrap_pyfunction!(stabilize, m)?)?;
    m.add_function(wrap_pyfunction!(flow_norm_map, m)?)?;
    m.add_function(wrap_pyfunction!(flow_loss, m)?)?;
    m.add_function(wrap_pyfunction!(flow_loss_grad, m)?)?;
    m.add_function(wrap_pyfunction!(read_flo, m)?)?;
    m.add_function(wrap_pyfunction!(write_flo, m)?)?;
    m.add_function(wrap_pyfunction!(quantize, m)?)?;
    m.add_function(wrap_pyfunction!(pack, m)?)?;
    m.add_function(wrap_pyfunction!(encode_tiff, m)?)?;
    m.add_function(wrap_pyfunction!(decode_tiff, m)?)?;
    Ok(())
}
