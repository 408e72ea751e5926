//! Python bindings: whole-group scoring and whole-mask box extraction.
//!
//! Records cross the boundary as plain dicts and lists with the same field
//! names as the `fgreward` CLI's JSON files.

use fgreward_core::mask2box::{to_boxes, BinaryMask};
use fgreward_core::scoring::score_group_in;
use fgreward_core::{ResponseRecord, RewardConfig, Sample};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

/// Scores one group. Inputs and output are JSON texts.
pub fn score_group_json(
    samples: &str,
    responses: &str,
    config: Option<&str>,
) -> Result<String, String> {
    let samples: Vec<Sample> =
        serde_json::from_str(samples).map_err(|e| format!("samples: {e}"))?;
    let responses: Vec<ResponseRecord> =
        serde_json::from_str(responses).map_err(|e| format!("responses: {e}"))?;
    let cfg: RewardConfig = match config {
        Some(c) => serde_json::from_str(c).map_err(|e| format!("config: {e}"))?,
        None => RewardConfig::default(),
    };
    cfg.validate().map_err(|e| e.to_string())?;
    let records = score_group_in(&samples, &responses, &cfg).map_err(|e| e.to_string())?;
    serde_json::to_string(&records).map_err(|e| e.to_string())
}

pub fn mask_boxes(
    width: usize,
    height: usize,
    bytes: &[u8],
    kernel: usize,
    iterations: usize,
    min_area: f64,
) -> Result<Vec<[f64; 4]>, String> {
    let mask = BinaryMask::from_bytes(width, height, bytes).map_err(|e| e.to_string())?;
    let boxes = to_boxes(&mask, kernel, iterations, min_area).map_err(|e| e.to_string())?;
    Ok(boxes.into_iter().map(|b| b.to_array()).collect())
}

fn dumps(obj: &Bound<'_, PyAny>) -> PyResult<String> {
    obj.py()
        .import("json")?
        .call_method1("dumps", (obj,))?
        .extract()
}

/// score_group(samples, responses, config=None) -> list[dict]
///
/// `samples` is a list of sample dicts, `responses` the group's response
/// dicts (at least two, all for one sample) and `config` an optional dict of
/// reward settings. Returns one scored record per response.
#[pyfunction]
#[pyo3(signature = (samples, responses, config=None))]
fn score_group<'py>(
    py: Python<'py>,
    samples: &Bound<'py, PyAny>,
    responses: &Bound<'py, PyAny>,
    config: Option<&Bound<'py, PyAny>>,
) -> PyResult<Bound<'py, PyAny>> {
    let samples = dumps(samples)?;
    let responses = dumps(responses)?;
    let config = config.map(dumps).transpose()?;
    let out = py
        .detach(|| score_group_json(&samples, &responses, config.as_deref()))
        .map_err(PyValueError::new_err)?;
    py.import("json")?.call_method1("loads", (out,))
}

/// mask_to_boxes(width, height, data, kernel=5, iterations=1, min_area=0.0)
///
/// `data` holds `width * height` row-major 8-bit gray values; values above
/// 127 are foreground. Returns `[x1, y1, x2, y2]` lists sorted by `(y1, x1)`.
#[pyfunction]
#[pyo3(signature = (width, height, data, kernel=5, iterations=1, min_area=0.0))]
fn mask_to_boxes(
    py: Python<'_>,
    width: usize,
    height: usize,
    data: Vec<u8>,
    kernel: usize,
    iterations: usize,
    min_area: f64,
) -> PyResult<Vec<[f64; 4]>> {
    py.detach(|| mask_boxes(width, height, &data, kernel, iterations, min_area))
        .map_err(PyValueError::new_err)
}

#[pymodule]
fn fgreward(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(score_group, m)?)?;
    m.add_function(wrap_pyfunction!(mask_to_boxes, m)?)?;
    Ok(())
}
