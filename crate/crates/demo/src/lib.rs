//! Browser bindings. Each export is a thin wrapper over a plain function so
//! the logic runs and is tested natively; only the wrappers touch JS.

use wasm_bindgen::prelude::*;

use scst_core::moco::{infonce_patch_loss, KeySource, MemoryQueue, PatchFeatureGrid, Temperature};
use scst_core::scan::{continuity_report, generate_path, sweep_path, Direction, ScanPattern, VolumeShape};
use scst_core::ssm::{scan_sequential, HiddenState, SelectiveInputs, SsmParams};

/// Largest volume the page will draw.
pub const MAX_VOXELS: usize = 4096;

/// Visiting order of a `t×h×w` volume followed by its violation count as
/// the final element.
pub fn scan_path_order(t: usize, h: usize, w: usize, pattern: &str) -> Result<Vec<u32>, String> {
    let shape = VolumeShape::new(t, h, w).map_err(|e| e.to_string())?;
    if shape.voxels() > MAX_VOXELS {
        return Err(format!("{t}x{h}x{w} exceeds {MAX_VOXELS} voxels"));
    }
    let path = match pattern {
        "sweep-forward" => sweep_path(shape, Direction::Forward),
        "sweep-reversed" => sweep_path(shape, Direction::Reversed),
        name => ScanPattern::parse(name).and_then(|p| generate_path(shape, p)),
    }
    .map_err(|e| e.to_string())?;
    let report = continuity_report(&path, shape).map_err(|e| e.to_string())?;
    let mut out: Vec<u32> = path.order().iter().map(|&i| i as u32).collect();
    out.push(report.violations as u32);
    Ok(out)
}

/// Output of a one-state system (`b = c = 1`, `d = 0`) driven by a unit step.
pub fn step_response(a: f64, delta: f64, len: usize) -> Result<Vec<f64>, String> {
    if !(a < 0.0) || !(delta > 0.0) || len == 0 || len > 10_000 {
        return Err("need a < 0, delta > 0 and 1 <= len <= 10000".into());
    }
    let params = SsmParams { a: vec![a], b_static: vec![1.0], c_static: vec![1.0], d: 0.0, delta_bias: 0.0 };
    let sel = SelectiveInputs::constant(&[1.0], &[1.0], delta, len);
    let out = scan_sequential(&params, &sel, &vec![1.0; len], &HiddenState::zeros(1)).map_err(|e| e.to_string())?;
    Ok(out.y)
}

/// Patch loss against `negatives` orthogonal keys as the query–positive
/// cosine sweeps from −1 to 1 over `points` samples.
pub fn infonce_vs_similarity(negatives: usize, tau: f64, points: usize) -> Result<Vec<f64>, String> {
    if negatives == 0 || negatives > 1024 || !(2..=1000).contains(&points) {
        return Err("need 1..=1024 negatives and 2..=1000 points".into());
    }
    let tau = Temperature::new(tau).map_err(|e| e.to_string())?;
    let dim = negatives + 2;
    let basis = |i: usize| {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        v
    };
    let mut queue = MemoryQueue::new(negatives, dim).map_err(|e| e.to_string())?;
    queue.enqueue(&(2..dim).map(basis).collect::<Vec<_>>(), KeySource::Hr).map_err(|e| e.to_string())?;
    let q = PatchFeatureGrid { grid: 1, dim, features: basis(0) };
    (0..points)
        .map(|i| {
            let s = -1.0 + 2.0 * i as f64 / (points - 1) as f64;
            let mut k = vec![0.0; dim];
            k[0] = s;
            k[1] = (1.0 - s * s).max(0.0).sqrt();
            infonce_patch_loss(&q, &PatchFeatureGrid { grid: 1, dim, features: k }, &queue, tau).map_err(|e| e.to_string())
        })
        .collect()
}

#[wasm_bindgen]
pub fn scan_path(t: usize, h: usize, w: usize, pattern: &str) -> Result<Vec<u32>, JsError> {
    scan_path_order(t, h, w, pattern).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn ssm_step_response(a: f64, delta: f64, len: usize) -> Result<Vec<f64>, JsError> {
    step_response(a, delta, len).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn infonce_curve(negatives: usize, tau: f64, points: usize) -> Result<Vec<f64>, JsError> {
    infonce_vs_similarity(negatives, tau, points).map_err(|e| JsError::new(&e))
}
