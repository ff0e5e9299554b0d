//! A seeded, timing-free run of every module's invariant checks. The report
//! contains no clocks or addresses, so equal seeds give equal bytes.

use serde::Serialize;

use crate::error::Result;
use crate::layers::Conv3d;
use crate::mamba3d::{
    dwconv3d_backward, dwconv3d_forward, mamba3d_backward, mamba3d_forward, mamba3d_forward_traced, Mamba3dConfig,
    WeightSharing,
};
use crate::metrics::{psnr, warping_error};
use crate::moco::{
    contrastive_grads, infonce_backward, infonce_patch_loss, momentum_update, ContrastiveConfig, EncoderPair,
    EncoderWeights, KeySource, MemoryQueue, PatchFeatureGrid, Temperature,
};
use crate::numerics::{finite_diff_flat, max_rel_error, Rng, Tensor};
use crate::params::ParamSet;
use crate::scan::{
    continuity_report, gather_sequence, generate_path, scatter_sequence, sweep_path, Direction, ScanPattern,
    VolumeShape,
};
use crate::ssm::{
    scan_parallel, scan_sequential, selective_inputs, selective_scan_traced, ssm_backward, HiddenState,
    SelectiveInputs, SelectiveProj, SsmParams,
};
use crate::train::{
    denoiser_backward, denoiser_forward_traced, denoising_loss, mix_ratio, mse_with_grad, synth_video, CondLabel,
    Conditioning, DenoiserWeights, ModelDims, Motion, Stage, StageConfig, SynthConfig,
};

/// One named check: passes when `value <= bound`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub bound: f64,
    pub passed: bool,
}

impl Check {
    pub fn new(name: &str, value: f64, bound: f64) -> Self {
        Check { name: name.into(), value, bound, passed: value <= bound }
    }

    /// Zero-or-one mismatch flag for exact checks.
    fn exact(name: &str, ok: bool) -> Self {
        Check::new(name, if ok { 0.0 } else { 1.0 }, 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelftestReport {
    pub seed: u64,
    pub passed: bool,
    pub checks: Vec<Check>,
}

pub const GRAD_TOLERANCE: f64 = 1e-3;

fn weighted_sum(out: &Tensor<f64>, w: &Tensor<f64>) -> f64 {
    out.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
}

fn ssm_grad_error(rng: &mut Rng) -> Result<f64> {
    let (len, n) = (8, 4);
    let mut params = SsmParams::<f64>::init(n, rng);
    params.d = rng.normal();
    let proj = SelectiveProj::init(n, 0.5, rng);
    let x: Vec<f64> = (0..len).map(|_| rng.normal()).collect();
    let h0: Vec<f64> = (0..n).map(|_| 0.5 * rng.normal()).collect();
    let w: Vec<f64> = (0..len).map(|_| rng.normal()).collect();

    let (_, trace) = selective_scan_traced(&params, &proj, &x, &HiddenState { h: h0.clone() })?;
    let g = ssm_backward(&params, &proj, &x, &trace, &w)?;
    let mut analytic = g.x.clone();
    analytic.extend(g.params.flatten());
    analytic.extend(g.proj.flatten());
    let mut x0 = x.clone();
    x0.extend(params.flatten());
    x0.extend(proj.flatten());
    let np = params.num_params();
    let numeric = finite_diff_flat(
        |p| {
            let p = p.data();
            let mut pp = params.clone();
            pp.load_flat(&p[len..len + np]).expect("layout");
            let mut qq = proj.clone();
            qq.load_flat(&p[len + np..]).expect("layout");
            let (y, _) = selective_scan_traced(&pp, &qq, &p[..len], &HiddenState { h: h0.clone() }).expect("scan");
            y.iter().zip(&w).map(|(a, b)| a * b).sum()
        },
        &x0,
        1e-5,
    )?;
    Ok(max_rel_error(&analytic, &numeric))
}

fn dwconv_grad_error(rng: &mut Rng) -> Result<f64> {
    let mut conv = Conv3d::<f64>::init(2, 2, [3, 3, 3], 2, [1, 1, 1], rng)?;
    conv.bias = rng.normal_tensor(vec![2], 0.5);
    let v = rng.normal_tensor::<f64>(vec![2, 2, 3, 3], 1.0);
    let wts = rng.normal_tensor::<f64>(vec![2, 2, 3, 3], 1.0);
    let (dv, gconv) = dwconv3d_backward(&v, &conv, &wts)?;
    let n_in = v.len();
    let mut x0 = v.data().to_vec();
    x0.extend(conv.flatten());
    let numeric = finite_diff_flat(
        |p| {
            let input = Tensor::new(v.dims().to_vec(), p.data()[..n_in].to_vec()).expect("layout");
            let mut c = conv.clone();
            c.load_flat(&p.data()[n_in..]).expect("layout");
            weighted_sum(&dwconv3d_forward(&input, &c).expect("conv"), &wts)
        },
        &x0,
        1e-5,
    )?;
    let mut analytic = dv.into_data();
    analytic.extend(gconv.flatten());
    Ok(max_rel_error(&analytic, &numeric))
}

fn block_grad_error(rng: &mut Rng) -> Result<f64> {
    let cfg = Mamba3dConfig::<f64>::init(2, 2, [3, 3, 3], &ScanPattern::ALL, WeightSharing::Independent, rng)?;
    let v = rng.normal_tensor::<f64>(vec![2, 2, 2, 3], 1.0);
    let wts = rng.normal_tensor::<f64>(vec![2, 2, 2, 3], 1.0);
    let (_, trace) = mamba3d_forward_traced(&v, &cfg)?;
    let g = mamba3d_backward(&v, &cfg, &trace, &wts)?;
    let n_in = v.len();
    let mut x0 = v.data().to_vec();
    x0.extend(cfg.flatten());
    let numeric = finite_diff_flat(
        |p| {
            let input = Tensor::new(v.dims().to_vec(), p.data()[..n_in].to_vec()).expect("layout");
            let mut c = cfg.clone();
            c.load_flat(&p.data()[n_in..]).expect("layout");
            weighted_sum(&mamba3d_forward(&input, &c).expect("block"), &wts)
        },
        &x0,
        1e-5,
    )?;
    let mut analytic = g.input.into_data();
    analytic.extend(g.weights.flatten());
    Ok(max_rel_error(&analytic, &numeric))
}

fn unit_grid(rng: &mut Rng, grid: usize, dim: usize) -> PatchFeatureGrid<f64> {
    PatchFeatureGrid { grid, dim, features: (0..grid * grid).flat_map(|_| rng.unit_vector::<f64>(dim)).collect() }
}

fn infonce_grad_error(rng: &mut Rng) -> Result<f64> {
    let queue = MemoryQueue::random(12, 5, rng)?;
    let q = unit_grid(rng, 2, 5);
    let k = unit_grid(rng, 2, 5);
    let tau = Temperature::new(0.5)?;
    let g = infonce_backward(&q, &k, &queue, tau, 1.0)?;
    let numeric = finite_diff_flat(
        |x| {
            let qq = PatchFeatureGrid { grid: 2, dim: 5, features: x.data().to_vec() };
            infonce_patch_loss(&qq, &k, &queue, tau).expect("loss")
        },
        &q.features,
        1e-5,
    )?;
    Ok(max_rel_error(&g.features, &numeric))
}

fn encoder_grad_error(rng: &mut Rng) -> Result<f64> {
    let query = EncoderWeights::<f64>::init(2, 3, 4, [1, 2, 1], rng)?;
    let mut pair = EncoderPair::new(query, 0.9);
    pair.key = EncoderWeights::init(2, 3, 4, [1, 2, 1], rng)?;
    let queue = MemoryQueue::random(10, 4, rng)?;
    let hr: Tensor<f64> = rng.uniform_tensor(vec![2, 8, 8], 0.0, 1.0);
    let lr = hr.map(|v| 0.8 * v + 0.1);
    let cfg = ContrastiveConfig { tau: Temperature::new(0.2)?, grid: 2, lr: 0.1 };
    let g = contrastive_grads(&pair, &lr, &hr, &queue, &cfg)?;
    let numeric = finite_diff_flat(
        |x| {
            let mut p = pair.clone();
            p.query.load_flat(x.data()).expect("layout");
            contrastive_grads(&p, &lr, &hr, &queue, &cfg).expect("grads").loss
        },
        &pair.query.flatten(),
        1e-5,
    )?;
    Ok(max_rel_error(&g.query.flatten(), &numeric))
}

fn denoiser_grad_error(rng: &mut Rng, with_block: bool) -> Result<f64> {
    let dims = ModelDims { channels: 2, features: 3, time_dim: 4, state_dim: 2, embed_dim: 4 };
    let w = DenoiserWeights::<f64>::init(&dims, rng)?;
    let x_t = rng.normal_tensor::<f64>(vec![2, 2, 3, 3], 1.0);
    let eps = rng.normal_tensor::<f64>(vec![2, 2, 3, 3], 1.0);
    let ctrl = rng.normal_tensor::<f64>(vec![3, 2, 3, 3], 0.5);
    let cond = Conditioning { t: 17, label: Some(CondLabel::SuperResolution), control: Some(&ctrl), with_block };
    let (pred, trace) = denoiser_forward_traced(&w, &x_t, &cond)?;
    let (_, dpred) = mse_with_grad(&pred, &eps)?;
    let (g, dctrl) = denoiser_backward(&w, &trace, &dpred)?;
    let n = w.num_params();
    let mut x0 = w.flatten();
    x0.extend_from_slice(ctrl.data());
    let numeric = finite_diff_flat(
        |p| {
            let mut ww = w.clone();
            ww.load_flat(&p.data()[..n]).expect("layout");
            let c = Tensor::new(ctrl.dims().to_vec(), p.data()[n..].to_vec()).expect("layout");
            denoising_loss(&ww, &x_t, &Conditioning { control: Some(&c), ..cond }, &eps).expect("loss")
        },
        &x0,
        1e-5,
    )?;
    let mut analytic = g.flatten();
    analytic.extend_from_slice(dctrl.data());
    Ok(max_rel_error(&analytic, &numeric))
}

/// Central finite differences against every backward pass, in f64.
pub fn gradient_suite(seed: u64) -> Result<Vec<Check>> {
    let rng = Rng::new(seed);
    Ok(vec![
        Check::new("grad.selective_scan", ssm_grad_error(&mut rng.fork(1))?, GRAD_TOLERANCE),
        Check::new("grad.dwconv3d", dwconv_grad_error(&mut rng.fork(2))?, GRAD_TOLERANCE),
        Check::new("grad.mamba3d_block", block_grad_error(&mut rng.fork(3))?, GRAD_TOLERANCE),
        Check::new("grad.infonce", infonce_grad_error(&mut rng.fork(4))?, GRAD_TOLERANCE),
        Check::new("grad.query_encoder", encoder_grad_error(&mut rng.fork(5))?, GRAD_TOLERANCE),
        Check::new("grad.denoiser_with_block", denoiser_grad_error(&mut rng.fork(6), true)?, GRAD_TOLERANCE),
        Check::new("grad.denoiser_bypass", denoiser_grad_error(&mut rng.fork(7), false)?, GRAD_TOLERANCE),
    ])
}

fn scan_checks(rng: &mut Rng) -> Result<Vec<Check>> {
    let mut bad = 0usize;
    for t in 1..=4 {
        for h in 1..=4 {
            for w in 1..=4 {
                let shape = VolumeShape::new(t, h, w)?;
                for p in ScanPattern::ALL {
                    bad += continuity_report(&generate_path(shape, p)?, shape)?.violations;
                }
            }
        }
    }
    let shape = VolumeShape::new(2, 3, 4)?;
    let sweep = continuity_report(&sweep_path(shape, Direction::Forward)?, shape)?.violations;

    let mut mismatches = 0usize;
    for _ in 0..20 {
        let (t, h, w) = (1 + rng.below(4), 1 + rng.below(4), 1 + rng.below(4));
        let shape = VolumeShape::new(t, h, w)?;
        let v: Tensor<f32> = rng.normal_tensor(vec![2, t, h, w], 1.0);
        for p in ScanPattern::ALL {
            let path = generate_path(shape, p)?;
            let back = scatter_sequence(&gather_sequence(&v, &path)?, &path, shape)?;
            mismatches += back.data().iter().zip(v.data()).filter(|(a, b)| a.to_bits() != b.to_bits()).count();
        }
    }
    Ok(vec![
        Check::new("scan.continuous_violations", bad as f64, 0.0),
        Check::exact("scan.sweep_2x3x4_violations_is_5", sweep == 5),
        Check::new("scan.roundtrip_mismatches", mismatches as f64, 0.0),
    ])
}

fn ssm_checks(rng: &mut Rng) -> Result<Vec<Check>> {
    let params = SsmParams { a: vec![-1.0], b_static: vec![1.0], c_static: vec![1.0], d: 0.0, delta_bias: 0.0 };
    let sel = SelectiveInputs::constant(&[1.0], &[1.0], 0.1, 100);
    let out = scan_sequential(&params, &sel, &[1.0f64; 100], &HiddenState::zeros(1))?;
    let zoh = out
        .y
        .iter()
        .enumerate()
        .map(|(i, y)| (y - (1.0 - (-0.1 * (i + 1) as f64).exp())).abs())
        .fold(0.0, f64::max);

    let mut dev = 0.0f64;
    for (i, len) in [1usize, 2, 3, 16, 257].into_iter().enumerate() {
        let mut r = rng.fork(i as u64);
        let p = SsmParams::<f32>::init(4, &mut r);
        let proj = SelectiveProj::init(4, 0.3, &mut r);
        let x: Vec<f32> = (0..len).map(|_| r.normal() as f32).collect();
        let sel = selective_inputs(&p, &proj, &x)?;
        let h0 = HiddenState::zeros(4);
        let a = scan_sequential(&p, &sel, &x, &h0)?;
        let b = scan_parallel(&p, &sel, &x, &h0)?;
        for (u, v) in a.y.iter().zip(&b.y) {
            dev = dev.max((u - v).abs() as f64);
        }
    }
    Ok(vec![Check::new("ssm.zoh_oracle", zoh, 1e-6), Check::new("ssm.parallel_vs_sequential", dev, 1e-5)])
}

fn basis(dim: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    v[i] = 1.0;
    v
}

fn moco_checks(rng: &mut Rng) -> Result<Vec<Check>> {
    let tau = Temperature::DEFAULT;
    let mut equal = 0.0f64;
    for n in [1usize, 8, 1023] {
        let mut queue = MemoryQueue::new(n, 2)?;
        queue.enqueue(&vec![basis(2, 0); n], KeySource::Hr)?;
        let q = PatchFeatureGrid { grid: 1, dim: 2, features: basis(2, 0) };
        equal = equal.max((infonce_patch_loss(&q, &q, &queue, tau)? - ((n + 1) as f64).ln()).abs());
    }
    let mut queue = MemoryQueue::new(8, 9)?;
    queue.enqueue(&(1..9).map(|i| basis(9, i)).collect::<Vec<_>>(), KeySource::Hr)?;
    let q = PatchFeatureGrid { grid: 1, dim: 9, features: basis(9, 0) };
    let separated = infonce_patch_loss(&q, &q, &queue, tau)?;
    let closed = (8.0 * (-1.0 / tau.get()).exp()).ln_1p();

    let queue = MemoryQueue::random(32, 6, rng)?;
    let q = unit_grid(rng, 2, 6);
    let k = unit_grid(rng, 2, 6);
    let base = infonce_patch_loss(&q, &k, &queue, tau)?;
    let mut perm: Vec<usize> = (0..32).collect();
    rng.shuffle(&mut perm);
    let permuted = (infonce_patch_loss(&q, &k, &queue.permuted(&perm), tau)? - base).abs();

    let ones = {
        let mut e = EncoderWeights::<f64>::init(1, 2, 2, [1, 1, 1], rng)?;
        e.visit_mut(&mut |s| s.fill(1.0));
        e
    };
    let mut zeros = ones.clone();
    zeros.zero();
    let mut key = zeros.clone();
    momentum_update(&ones, &mut key, 1.0)?;
    let mut ema_ok = key == zeros;
    momentum_update(&ones, &mut key, 0.0)?;
    ema_ok &= key == ones;

    let mut fifo = MemoryQueue::new(2, 3)?;
    fifo.enqueue(&[basis(3, 0), basis(3, 1), basis(3, 2)], KeySource::Hr)?;
    let kept: Vec<Vec<f64>> = fifo.keys().map(<[f64]>::to_vec).collect();

    let query = EncoderWeights::<f64>::init(2, 3, 4, [1, 2, 1], rng)?;
    let pair = EncoderPair::new(query, 0.9);
    let hr: Tensor<f64> = rng.uniform_tensor(vec![2, 8, 8], 0.0, 1.0);
    let lr = hr.map(|v| 0.5 * v);
    let queue = MemoryQueue::random(10, 4, rng)?;
    let before = (pair.key.fingerprint(), queue.clone());
    contrastive_grads(&pair, &lr, &hr, &queue, &ContrastiveConfig { grid: 2, ..Default::default() })?;
    let untouched = pair.key.fingerprint() == before.0 && queue == before.1;

    Ok(vec![
        Check::new("infonce.equal_logits", equal, 1e-9),
        Check::new("infonce.separated_closed_form", (separated - closed).abs(), 1e-12),
        Check::new("infonce.queue_permutation", permuted, 1e-12),
        Check::exact("ema.arithmetic", ema_ok),
        Check::exact("queue.fifo_eviction", kept == vec![basis(3, 1), basis(3, 2)]),
        Check::exact("key_encoder.no_gradient_flow", untouched),
    ])
}

fn schedule_checks() -> Result<Vec<Check>> {
    let one = StageConfig::new(Stage::One, 100);
    let two = StageConfig::new(Stage::Two, 100);
    let three = StageConfig::new(Stage::Three, 100);
    let ok = mix_ratio(&one, 0)? == 1.0
        && mix_ratio(&one, 99)? == 0.3
        && mix_ratio(&two, 0)? == 0.5
        && mix_ratio(&two, 99)? == 0.5
        && mix_ratio(&three, 0)? == 0.0
        && mix_ratio(&three, 99)? == 0.0;
    Ok(vec![Check::exact("schedule.mix_ratio_endpoints", ok)])
}

fn metric_checks(rng: &mut Rng) -> Result<Vec<Check>> {
    let a = Tensor::<f64>::zeros(vec![3, 4, 4]);
    let b = Tensor::<f64>::full(vec![3, 4, 4], 1.0);
    let half = Tensor::<f64>::full(vec![3, 4, 4], 0.5);
    let zero_db = psnr(&a, &b, 1.0)?.value.abs();
    let six_db = (psnr(&a, &half, 1.0)?.value - 20.0 * 2f64.log10()).abs();
    let frame: Tensor<f64> = rng.uniform_tensor(vec![2, 1, 5, 6], 0.0, 1.0);
    // Channel-major: repeat each channel's frame along T.
    let mut video = vec![0.0; 2 * 3 * 30];
    for ch in 0..2 {
        for t in 0..3 {
            video[(ch * 3 + t) * 30..(ch * 3 + t + 1) * 30].copy_from_slice(&frame.data()[ch * 30..(ch + 1) * 30]);
        }
    }
    let video = Tensor::new(vec![2, 3, 5, 6], video)?;
    let static_we = warping_error(&video, &Tensor::zeros(vec![2, 2, 5, 6]))?.value;
    let cfg = SynthConfig { channels: 3, frames: 4, height: 12, width: 10, motion: Some(Motion { dx: 1.0, dy: -1.0 }) };
    let clip = synth_video::<f64>(rng, &cfg)?;
    let moving_we = warping_error(&clip.video, &clip.flows)?.value;
    Ok(vec![
        Check::new("psnr.zero_db", zero_db, 1e-4),
        Check::new("psnr.half_peak", six_db, 1e-4),
        Check::new("we.static_video", static_we, 0.0),
        Check::new("we.synthetic_motion", moving_we, 1e-10),
    ])
}

pub fn selftest(seed: u64) -> Result<SelftestReport> {
    let rng = Rng::new(seed);
    let mut checks = scan_checks(&mut rng.fork(10))?;
    checks.extend(ssm_checks(&mut rng.fork(11))?);
    checks.extend(gradient_suite(seed)?);
    checks.extend(moco_checks(&mut rng.fork(12))?);
    checks.extend(schedule_checks()?);
    checks.extend(metric_checks(&mut rng.fork(13))?);
    Ok(SelftestReport { seed, passed: checks.iter().all(|c| c.passed), checks })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selftest_passes_and_is_deterministic() {
        let a = selftest(7).unwrap();
        for c in &a.checks {
            assert!(c.passed, "{c:?}");
        }
        assert_eq!(a, selftest(7).unwrap());
    }
}
