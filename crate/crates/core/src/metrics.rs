//! PSNR and warping error against supplied flows.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::{Real, Tensor};

/// Reported for identical inputs instead of infinity.
pub const PSNR_CAP: f64 = 99.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricValue {
    pub value: f64,
    /// Elements (PSNR) or valid pixel positions (warping error) averaged over.
    pub n_valid: usize,
}

/// `10·log10(peak² / MSE)`, capped at [`PSNR_CAP`] once `MSE < peak²·10^−9.9`.
pub fn psnr<T: Real>(a: &Tensor<T>, b: &Tensor<T>, peak: f64) -> Result<MetricValue> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!("psnr inputs differ in shape: {:?} vs {:?}", a.dims(), b.dims())));
    }
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(Error::Invalid(format!("peak must be positive, got {peak}")));
    }
    if a.is_empty() {
        return Err(Error::Shape("psnr of empty tensors".into()));
    }
    let mse = a.data().iter().zip(b.data()).map(|(&x, &y)| (x.as_f64() - y.as_f64()).powi(2)).sum::<f64>()
        / a.len() as f64;
    if !mse.is_finite() {
        return Err(Error::NonFinite("psnr inputs".into()));
    }
    let value = if mse < peak * peak * 10f64.powf(-9.9) { PSNR_CAP } else { 10.0 * (peak * peak / mse).log10() };
    Ok(MetricValue { value, n_valid: a.len() })
}

/// Samples `frame` (`C×H×W`) at `p − flow(p)` for every pixel `p`, with
/// `flow` given as `2×H×W` (dy, dx). Returns the warped frame and a mask
/// that is false where the sample point leaves the image; those pixels are
/// left at zero.
pub fn bilinear_warp<T: Real>(frame: &Tensor<T>, flow: &Tensor<T>) -> Result<(Tensor<T>, Vec<bool>)> {
    let [c, h, w] = match *frame.dims() {
        [c, h, w] => [c, h, w],
        _ => return Err(Error::Shape(format!("expected a C×H×W frame, got {:?}", frame.dims()))),
    };
    flow.ensure_dims(&[2, h, w], "flow")?;
    flow.ensure_finite("flow")?;
    let plane = h * w;
    let (fd, src) = (flow.data(), frame.data());
    let mut out = Tensor::zeros(vec![c, h, w]);
    let mut mask = vec![false; plane];
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let sy = y as f64 - fd[p].as_f64();
            let sx = x as f64 - fd[plane + p].as_f64();
            if sy < 0.0 || sx < 0.0 || sy > (h - 1) as f64 || sx > (w - 1) as f64 {
                continue;
            }
            mask[p] = true;
            let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
            let (fy, fx) = (sy - y0 as f64, sx - x0 as f64);
            let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
            for ch in 0..c {
                let at = |yy: usize, xx: usize| src[ch * plane + yy * w + xx].as_f64();
                let v = if fy == 0.0 && fx == 0.0 {
                    at(y0, x0)
                } else {
                    (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x1))
                        + fy * ((1.0 - fx) * at(y1, x0) + fx * at(y1, x1))
                };
                out[ch * plane + p] = T::lit(v);
            }
        }
    }
    Ok((out, mask))
}

fn frame<T: Real>(video: &Tensor<T>, t: usize) -> Tensor<T> {
    let d = video.dims();
    let (c, frames, plane) = (d[0], d[1], d[2] * d[3]);
    let data = (0..c)
        .flat_map(|ch| video.data()[(ch * frames + t) * plane..(ch * frames + t + 1) * plane].iter().copied())
        .collect();
    Tensor::new(vec![c, d[2], d[3]], data).expect("frame slice")
}

/// Mean of `(frame_{t+1}(p) − warp(frame_t, flow_t)(p))²` over channels,
/// frame pairs and pixels whose sample point stays inside the frame.
/// `video` is `C×T×H×W`; `flows` is `(T−1)×2×H×W` with (dy, dx) moving
/// content of frame `t` into frame `t+1`.
pub fn warping_error<T: Real>(video: &Tensor<T>, flows: &Tensor<T>) -> Result<MetricValue> {
    let [c, t, h, w] = match *video.dims() {
        [c, t, h, w] => [c, t, h, w],
        _ => return Err(Error::Shape(format!("expected a C×T×H×W video, got {:?}", video.dims()))),
    };
    if t < 2 {
        return Err(Error::Shape("warping error needs at least two frames".into()));
    }
    flows.ensure_dims(&[t - 1, 2, h, w], "flows")?;
    let plane = h * w;
    let per_pair: Vec<Result<(f64, usize)>> = (0..t - 1)
        .into_par_iter()
        .map(|k| {
            let flow = Tensor::new(vec![2, h, w], flows.data()[k * 2 * plane..(k + 1) * 2 * plane].to_vec())?;
            let (warped, mask) = bilinear_warp(&frame(video, k), &flow)?;
            let next = frame(video, k + 1);
            let mut sum = 0.0;
            for ch in 0..c {
                for (p, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
                    let d = next[ch * plane + p].as_f64() - warped[ch * plane + p].as_f64();
                    sum += d * d;
                }
            }
            Ok((sum, mask.iter().filter(|&&m| m).count()))
        })
        .collect();
    let (mut total, mut n_valid) = (0.0, 0);
    for r in per_pair {
        let (s, n) = r?;
        total += s;
        n_valid += n;
    }
    if n_valid == 0 {
        return Err(Error::Invalid("no pixel stays inside the frame under these flows".into()));
    }
    let value = total / (n_valid * c) as f64;
    if !value.is_finite() {
        return Err(Error::NonFinite("warping error".into()));
    }
    Ok(MetricValue { value, n_valid })
}
