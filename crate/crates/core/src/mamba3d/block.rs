use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{volume_dims, Activation, Conv3d};
use crate::numerics::{Real, Rng, Tensor};
use crate::params::ParamSet;
use crate::scan::{gather_sequence, generate_path, scatter_sequence, sweep_path, ScanPath, ScanPattern, VolumeShape};
use crate::ssm::{selective_scan_traced, ssm_backward, HiddenState, SelectiveProj, SelectiveTrace, SsmParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum MergeRule {
    Sum,
    #[default]
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum WeightSharing {
    /// Every branch owns its SSM weights.
    #[default]
    Independent,
    /// A pattern and its flipped counterpart share one weight set.
    TiedFlips,
}

/// How each branch orders the voxels it scans.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum ScanKind {
    /// Serpentine paths with no jumps, one per pattern.
    #[default]
    Continuous,
    /// Row-major sweeps that reset at every row and frame; only the
    /// pattern's direction is used.
    Sweep,
}

/// SSM weights for every channel of one branch.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchWeights<T> {
    pub ssm: Vec<SsmParams<T>>,
    pub proj: Vec<SelectiveProj<T>>,
}

impl<T: Real> BranchWeights<T> {
    pub fn zeros(channels: usize, n: usize) -> Self {
        BranchWeights {
            ssm: (0..channels).map(|_| SsmParams::zeros(n)).collect(),
            proj: (0..channels).map(|_| SelectiveProj::zeros(n)).collect(),
        }
    }

    pub fn init(channels: usize, n: usize, rng: &mut Rng) -> Self {
        BranchWeights {
            ssm: (0..channels).map(|_| SsmParams::init(n, rng)).collect(),
            proj: (0..channels).map(|_| SelectiveProj::init(n, 0.1, rng)).collect(),
        }
    }
}

impl<T: Real> ParamSet<T> for BranchWeights<T> {
    fn visit(&self, f: &mut dyn FnMut(&[T])) {
        self.ssm.visit(f);
        self.proj.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [T])) {
        self.ssm.visit_mut(f);
        self.proj.visit_mut(f);
    }
}

/// One scan branch: a traversal pattern and the index of its weight set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Branch {
    pub pattern: ScanPattern,
    pub weights: usize,
}

/// Weights and structure of a 3D-Mamba block:
/// `out = v + W_o · merge_k scatter_k(ssm_k(gather_k(act(dwconv(v)))))`,
/// where the optional `C×C` output projection `W_o` mixes channels per voxel
/// and defaults to the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct Mamba3dConfig<T> {
    pub channels: usize,
    pub state_dim: usize,
    /// Depthwise convolution (`groups == channels`).
    pub conv: Conv3d<T>,
    pub activation: Activation,
    pub merge: MergeRule,
    pub scan: ScanKind,
    pub branches: Vec<Branch>,
    pub weights: Vec<BranchWeights<T>>,
    pub out_proj: Option<Tensor<T>>,
}

fn assign_branches(patterns: &[ScanPattern], sharing: WeightSharing) -> Result<(Vec<Branch>, usize)> {
    if patterns.is_empty() {
        return Err(Error::Invalid("a 3D-Mamba block needs at least one scan pattern".into()));
    }
    let mut owners: Vec<ScanPattern> = Vec::new();
    let mut branches = Vec::with_capacity(patterns.len());
    for &pattern in patterns {
        let shared = match sharing {
            WeightSharing::Independent => None,
            WeightSharing::TiedFlips => owners.iter().position(|&o| o == pattern.flipped() || o == pattern),
        };
        let weights = shared.unwrap_or_else(|| {
            owners.push(pattern);
            owners.len() - 1
        });
        branches.push(Branch { pattern, weights });
    }
    Ok((branches, owners.len()))
}

impl<T: Real> Mamba3dConfig<T> {
    /// Randomly initialized block.
    pub fn init(
        channels: usize,
        state_dim: usize,
        kernel: [usize; 3],
        patterns: &[ScanPattern],
        sharing: WeightSharing,
        rng: &mut Rng,
    ) -> Result<Self> {
        let (branches, n_sets) = assign_branches(patterns, sharing)?;
        let conv = Conv3d::init(channels, channels, kernel, channels, [1, 1, 1], rng)?;
        let weights = (0..n_sets).map(|_| BranchWeights::init(channels, state_dim, rng)).collect();
        Ok(Mamba3dConfig {
            channels,
            state_dim,
            conv,
            activation: Activation::Silu,
            merge: MergeRule::Mean,
            scan: ScanKind::Continuous,
            branches,
            weights,
            out_proj: Some(Tensor::from_fn(vec![channels, channels], |i| {
                if i % (channels + 1) == 0 { T::one() } else { T::zero() }
            })),
        })
    }

    /// All-zero weights: the block is the identity map.
    pub fn zeros(
        channels: usize,
        state_dim: usize,
        kernel: [usize; 3],
        patterns: &[ScanPattern],
        sharing: WeightSharing,
    ) -> Result<Self> {
        let (branches, n_sets) = assign_branches(patterns, sharing)?;
        let conv = Conv3d::zeros(channels, channels, kernel, channels);
        conv.validate()?;
        Ok(Mamba3dConfig {
            channels,
            state_dim,
            conv,
            activation: Activation::Silu,
            merge: MergeRule::Mean,
            scan: ScanKind::Continuous,
            branches,
            weights: (0..n_sets).map(|_| BranchWeights::zeros(channels, state_dim)).collect(),
            out_proj: None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.conv.validate()?;
        if self.conv.groups != self.channels || self.conv.c_in() != self.channels || self.conv.c_out() != self.channels {
            return Err(Error::Shape(format!("depthwise conv must map {0}→{0} channels in {0} groups", self.channels)));
        }
        if self.branches.is_empty() {
            return Err(Error::Invalid("no scan branches".into()));
        }
        for b in &self.branches {
            if b.weights >= self.weights.len() {
                return Err(Error::Invalid(format!("branch {:?} points at missing weight set", b.pattern)));
            }
        }
        if let Some(p) = &self.out_proj {
            p.ensure_dims(&[self.channels, self.channels], "output projection")?;
        }
        for w in &self.weights {
            if w.ssm.len() != self.channels || w.proj.len() != self.channels {
                return Err(Error::Shape("branch weights do not cover every channel".into()));
            }
            for p in &w.ssm {
                p.validate()?;
                if p.state_dim() != self.state_dim {
                    return Err(Error::Shape(format!("state dim {} vs {}", p.state_dim(), self.state_dim)));
                }
            }
        }
        Ok(())
    }

    fn merge_scale(&self) -> T {
        match self.merge {
            MergeRule::Sum => T::one(),
            MergeRule::Mean => T::one() / T::lit(self.branches.len() as f64),
        }
    }

    pub fn cast<U: Real>(&self) -> Mamba3dConfig<U> {
        Mamba3dConfig {
            channels: self.channels,
            state_dim: self.state_dim,
            conv: self.conv.cast(),
            activation: self.activation,
            merge: self.merge,
            scan: self.scan,
            branches: self.branches.clone(),
            weights: self
                .weights
                .iter()
                .map(|w| BranchWeights {
                    ssm: w.ssm.iter().map(SsmParams::cast).collect(),
                    proj: w.proj.iter().map(SelectiveProj::cast).collect(),
                })
                .collect(),
            out_proj: self.out_proj.as_ref().map(Tensor::cast),
        }
    }
}

impl<T: Real> ParamSet<T> for Mamba3dConfig<T> {
    fn visit(&self, f: &mut dyn FnMut(&[T])) {
        self.conv.visit(f);
        self.weights.visit(f);
        if let Some(p) = &self.out_proj {
            f(p.data());
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [T])) {
        self.conv.visit_mut(f);
        self.weights.visit_mut(f);
        if let Some(p) = &mut self.out_proj {
            f(p.data_mut());
        }
    }
}

/// Depthwise 3-D convolution with zero padding.
pub fn dwconv3d_forward<T: Real>(v: &Tensor<T>, conv: &Conv3d<T>) -> Result<Tensor<T>> {
    let [c, ..] = volume_dims(v, "dwconv input")?;
    if conv.groups != c || conv.c_out() != c {
        return Err(Error::Shape(format!("depthwise conv for {} channels applied to {c}", conv.c_out())));
    }
    conv.forward(v)
}

/// Returns `(∂L/∂v, ∂L/∂kernels)`.
pub fn dwconv3d_backward<T: Real>(v: &Tensor<T>, conv: &Conv3d<T>, dout: &Tensor<T>) -> Result<(Tensor<T>, Conv3d<T>)> {
    let [c, ..] = volume_dims(v, "dwconv input")?;
    if conv.groups != c || conv.c_out() != c {
        return Err(Error::Shape(format!("depthwise conv for {} channels applied to {c}", conv.c_out())));
    }
    conv.backward(v, dout)
}

struct BranchTrace<T> {
    path: ScanPath,
    /// `C×L` gathered sequences.
    seq: Tensor<T>,
    traces: Vec<SelectiveTrace<T>>,
}

/// Intermediate values of a forward pass, consumed by [`mamba3d_backward`].
pub struct Mamba3dTrace<T> {
    shape: VolumeShape,
    conv_out: Tensor<T>,
    /// Merged branch output, kept when an output projection follows.
    merged: Option<Tensor<T>>,
    branches: Vec<BranchTrace<T>>,
}

/// `out[co, p] += Σ_ci w[co, ci] · m[ci, p]`.
fn mix_channels<T: Real>(w: &Tensor<T>, m: &Tensor<T>, out: &mut Tensor<T>, transpose: bool) {
    let c = w.dims()[0];
    let vol = m.len() / c;
    let (wd, md) = (w.data(), m.data());
    let od = out.data_mut();
    for co in 0..c {
        for ci in 0..c {
            let k = if transpose { wd[ci * c + co] } else { wd[co * c + ci] };
            if k == T::zero() {
                continue;
            }
            for (o, &x) in od[co * vol..(co + 1) * vol].iter_mut().zip(&md[ci * vol..(ci + 1) * vol]) {
                *o = *o + k * x;
            }
        }
    }
}

fn check_input<T: Real>(v: &Tensor<T>, cfg: &Mamba3dConfig<T>) -> Result<VolumeShape> {
    cfg.validate()?;
    let [c, t, h, w] = volume_dims(v, "block input")?;
    if c != cfg.channels {
        return Err(Error::Shape(format!("block has {} channels, input {c}", cfg.channels)));
    }
    v.ensure_finite("block input")?;
    VolumeShape::new(t, h, w)
}

fn run_branch<T: Real>(
    cfg: &Mamba3dConfig<T>,
    branch: &Branch,
    act: &Tensor<T>,
    shape: VolumeShape,
) -> Result<(Tensor<T>, BranchTrace<T>)> {
    let path = match cfg.scan {
        ScanKind::Continuous => generate_path(shape, branch.pattern)?,
        ScanKind::Sweep => sweep_path(shape, branch.pattern.direction)?,
    };
    let seq = gather_sequence(act, &path)?;
    let len = shape.voxels();
    let w = &cfg.weights[branch.weights];
    let mut ys = Vec::with_capacity(cfg.channels * len);
    let mut traces = Vec::with_capacity(cfg.channels);
    for ch in 0..cfg.channels {
        let x = &seq.data()[ch * len..(ch + 1) * len];
        let (y, tr) = selective_scan_traced(&w.ssm[ch], &w.proj[ch], x, &HiddenState::zeros(cfg.state_dim))?;
        ys.extend(y);
        traces.push(tr);
    }
    let out = scatter_sequence(&Tensor::new(vec![cfg.channels, len], ys)?, &path, shape)?;
    Ok((out, BranchTrace { path, seq, traces }))
}

/// Forward pass that also returns the trace needed by [`mamba3d_backward`].
pub fn mamba3d_forward_traced<T: Real>(v: &Tensor<T>, cfg: &Mamba3dConfig<T>) -> Result<(Tensor<T>, Mamba3dTrace<T>)> {
    let shape = check_input(v, cfg)?;
    let conv_out = dwconv3d_forward(v, &cfg.conv)?;
    let act = cfg.activation.apply(&conv_out);
    let results: Vec<Result<(Tensor<T>, BranchTrace<T>)>> =
        cfg.branches.par_iter().map(|b| run_branch(cfg, b, &act, shape)).collect();
    let scale = cfg.merge_scale();
    let mut merged = Tensor::zeros(v.dims().to_vec());
    let mut branches = Vec::with_capacity(results.len());
    for r in results {
        let (y, tr) = r?;
        merged.axpy(scale, &y);
        branches.push(tr);
    }
    let mut out = v.clone();
    let merged = match &cfg.out_proj {
        Some(w) => {
            mix_channels(w, &merged, &mut out, false);
            Some(merged)
        }
        None => {
            out.axpy(T::one(), &merged);
            None
        }
    };
    out.ensure_finite("block output")?;
    Ok((out, Mamba3dTrace { shape, conv_out, merged, branches }))
}

pub fn mamba3d_forward<T: Real>(v: &Tensor<T>, cfg: &Mamba3dConfig<T>) -> Result<Tensor<T>> {
    Ok(mamba3d_forward_traced(v, cfg)?.0)
}

/// Gradients of a block with respect to its input and every weight.
#[derive(Debug, Clone)]
pub struct Mamba3dGrads<T> {
    pub input: Tensor<T>,
    /// Same layout as the config; only the weight buffers are meaningful.
    pub weights: Mamba3dConfig<T>,
}

pub fn mamba3d_backward<T: Real>(
    v: &Tensor<T>,
    cfg: &Mamba3dConfig<T>,
    trace: &Mamba3dTrace<T>,
    dout: &Tensor<T>,
) -> Result<Mamba3dGrads<T>> {
    let shape = check_input(v, cfg)?;
    if trace.shape != shape || trace.branches.len() != cfg.branches.len() || trace.conv_out.dims() != v.dims() {
        return Err(Error::MissingPrerequisite("block trace does not match this input and config".into()));
    }
    dout.ensure_dims(v.dims(), "block dout")?;
    let len = shape.voxels();
    let c = cfg.channels;
    let scale = cfg.merge_scale();
    let mut gproj = None;
    let dmerged = match (&cfg.out_proj, &trace.merged) {
        (Some(w), Some(m)) => {
            let mut dm = Tensor::zeros(v.dims().to_vec());
            mix_channels(w, dout, &mut dm, true);
            let vol = len;
            gproj = Some(Tensor::from_fn(vec![c, c], |i| {
                let (co, ci) = (i / c, i % c);
                let (g, x) = (&dout.data()[co * vol..(co + 1) * vol], &m.data()[ci * vol..(ci + 1) * vol]);
                g.iter().zip(x).map(|(&a, &b)| a * b).sum()
            }));
            dm
        }
        (None, None) => dout.clone(),
        _ => return Err(Error::MissingPrerequisite("block trace and config disagree on the output projection".into())),
    };
    let scaled_dout = dmerged.map(|g| g * scale);

    let per_branch: Vec<Result<(Tensor<T>, BranchWeights<T>)>> = cfg
        .branches
        .par_iter()
        .zip(&trace.branches)
        .map(|(branch, bt)| {
            let w = &cfg.weights[branch.weights];
            // Adjoint of scatter is gather along the same path.
            let dy = gather_sequence(&scaled_dout, &bt.path)?;
            let mut dseq = Vec::with_capacity(c * len);
            let mut gw = BranchWeights::zeros(c, cfg.state_dim);
            for ch in 0..c {
                let x = &bt.seq.data()[ch * len..(ch + 1) * len];
                let g = ssm_backward(&w.ssm[ch], &w.proj[ch], x, &bt.traces[ch], &dy.data()[ch * len..(ch + 1) * len])?;
                dseq.extend(g.x);
                gw.ssm[ch] = g.params;
                gw.proj[ch] = g.proj;
            }
            let dact = scatter_sequence(&Tensor::new(vec![c, len], dseq)?, &bt.path, shape)?;
            Ok((dact, gw))
        })
        .collect();

    let mut grads = cfg.clone();
    grads.zero();
    let mut dact = Tensor::zeros(v.dims().to_vec());
    for (branch, r) in cfg.branches.iter().zip(per_branch) {
        let (da, gw) = r?;
        dact.axpy(T::one(), &da);
        let mut acc = grads.weights[branch.weights].flatten();
        for (a, g) in acc.iter_mut().zip(gw.flatten()) {
            *a = *a + g;
        }
        grads.weights[branch.weights].load_flat(&acc)?;
    }
    let dconv = cfg.activation.backward(&trace.conv_out, &dact);
    let (mut dv, gconv) = dwconv3d_backward(v, &cfg.conv, &dconv)?;
    grads.conv = gconv;
    grads.out_proj = gproj;
    dv.axpy(T::one(), dout);
    Ok(Mamba3dGrads { input: dv, weights: grads })
}
