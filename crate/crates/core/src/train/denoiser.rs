//! Small noise-prediction network: two convolutions, an optional scan block
//! at the bottleneck with additive timestep/label/control conditioning, and
//! two output convolutions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{Activation, Conv3d, ConvStack, ConvStackTrace};
use crate::mamba3d::{mamba3d_backward, mamba3d_forward_traced, Mamba3dConfig, Mamba3dTrace, WeightSharing};
use crate::moco::{EncoderPair, EncoderWeights};
use crate::numerics::{Real, Rng, Tensor};
use crate::params::ParamSet;
use crate::scan::ScanPattern;

/// Binary conditioning label: is the control input a clean clip or a degraded one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CondLabel {
    Reconstruction = 0,
    SuperResolution = 1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDims {
    pub channels: usize,
    pub features: usize,
    pub time_dim: usize,
    pub state_dim: usize,
    /// Contrastive embedding size of the control encoder head.
    pub embed_dim: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims { channels: 3, features: 8, time_dim: 8, state_dim: 4, embed_dim: 16 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserWeights<T> {
    pub conv_in: ConvStack<T>,
    /// `F×E` projection of the sinusoidal timestep features.
    pub time: Tensor<T>,
    /// `2×F`, one row per [`CondLabel`].
    pub label: Tensor<T>,
    pub block: Mamba3dConfig<T>,
    pub conv_out: ConvStack<T>,
}

fn stack<T: Real>(channels: &[usize], rng: &mut Rng) -> Result<ConvStack<T>> {
    let layers = channels
        .windows(2)
        .map(|c| Conv3d::init(c[0], c[1], [3, 3, 3], 1, [1, 1, 1], rng))
        .collect::<Result<_>>()?;
    Ok(ConvStack { layers, activation: Activation::Silu })
}

impl<T: Real> DenoiserWeights<T> {
    pub fn init(dims: &ModelDims, rng: &mut Rng) -> Result<Self> {
        let ModelDims { channels: c, features: f, time_dim: e, state_dim: n, .. } = *dims;
        if c == 0 || f == 0 || e == 0 || e % 2 != 0 {
            return Err(Error::Invalid(format!("bad model dims {dims:?}; time_dim must be even")));
        }
        let conv_in = stack(&[c, f, f], rng)?;
        let time = rng.normal_tensor(vec![f, e], (1.0 / e as f64).sqrt());
        let label = Tensor::zeros(vec![2, f]);
        let block = Mamba3dConfig::init(f, n, [3, 3, 3], &ScanPattern::ALL, WeightSharing::Independent, rng)?;
        let mut conv_out = stack(&[f, f, c], rng)?;
        conv_out.layers[1].weight.scale(T::lit(0.5));
        Ok(DenoiserWeights { conv_in, time, label, block, conv_out })
    }

    pub fn features(&self) -> usize {
        self.time.dims()[0]
    }

    pub fn cast<U: Real>(&self) -> DenoiserWeights<U> {
        DenoiserWeights {
            conv_in: self.conv_in.cast(),
            time: self.time.cast(),
            label: self.label.cast(),
            block: self.block.cast(),
            conv_out: self.conv_out.cast(),
        }
    }
}

impl<T: Real> ParamSet<T> for DenoiserWeights<T> {
    fn visit(&self, f: &mut dyn FnMut(&[T])) {
        self.conv_in.visit(f);
        f(self.time.data());
        f(self.label.data());
        self.block.visit(f);
        self.conv_out.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [T])) {
        self.conv_in.visit_mut(f);
        f(self.time.data_mut());
        f(self.label.data_mut());
        self.block.visit_mut(f);
        self.conv_out.visit_mut(f);
    }
}

/// `[sin(t·ω_k), cos(t·ω_k)]` with `ω_k = 1000^{−k/(E/2)}`.
pub fn timestep_features(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for k in 0..half {
        let w = (-(1000f64.ln()) * k as f64 / half as f64).exp();
        out[k] = (t as f64 * w).sin();
        out[half + k] = (t as f64 * w).cos();
    }
    out
}

/// Everything the denoiser sees besides the noised clip.
#[derive(Debug, Clone, Copy)]
pub struct Conditioning<'a, T> {
    pub t: usize,
    pub label: Option<CondLabel>,
    /// `F×T×H×W` features from the control encoder.
    pub control: Option<&'a Tensor<T>>,
    pub with_block: bool,
}

pub struct DenoiserTrace<T> {
    conv_in: ConvStackTrace<T>,
    bottleneck: Tensor<T>,
    block: Option<Mamba3dTrace<T>>,
    conv_out: ConvStackTrace<T>,
    t_feats: Vec<T>,
    label: Option<CondLabel>,
}

pub fn denoiser_forward_traced<T: Real>(
    w: &DenoiserWeights<T>,
    x_t: &Tensor<T>,
    cond: &Conditioning<'_, T>,
) -> Result<(Tensor<T>, DenoiserTrace<T>)> {
    let (mut h, conv_in) = w.conv_in.forward_traced(x_t)?;
    let f = w.features();
    if h.dims()[0] != f {
        return Err(Error::Shape(format!("bottleneck has {} channels, embeddings {f}", h.dims()[0])));
    }
    let t_feats: Vec<T> = timestep_features(cond.t, w.time.dims()[1]).into_iter().map(T::lit).collect();
    let e = t_feats.len();
    let mut bias: Vec<T> =
        (0..f).map(|i| w.time.data()[i * e..(i + 1) * e].iter().zip(&t_feats).map(|(&a, &b)| a * b).sum()).collect();
    if let Some(l) = cond.label {
        for (b, &v) in bias.iter_mut().zip(&w.label.data()[l as usize * f..(l as usize + 1) * f]) {
            *b = *b + v;
        }
    }
    let vol = h.len() / f;
    for (i, v) in h.data_mut().iter_mut().enumerate() {
        *v = *v + bias[i / vol];
    }
    if let Some(ctrl) = cond.control {
        ctrl.ensure_dims(h.dims(), "control features")?;
        h.axpy(T::one(), ctrl);
    }
    let (g, block) = if cond.with_block {
        let (g, tr) = mamba3d_forward_traced(&h, &w.block)?;
        (g, Some(tr))
    } else {
        (h.clone(), None)
    };
    let (pred, conv_out) = w.conv_out.forward_traced(&g)?;
    Ok((pred, DenoiserTrace { conv_in, bottleneck: h, block, conv_out, t_feats, label: cond.label }))
}

/// Gradients of the denoiser weights, and of the injected control features.
pub fn denoiser_backward<T: Real>(
    w: &DenoiserWeights<T>,
    trace: &DenoiserTrace<T>,
    dpred: &Tensor<T>,
) -> Result<(DenoiserWeights<T>, Tensor<T>)> {
    let (dg, conv_out) = w.conv_out.backward(&trace.conv_out, dpred)?;
    let (dh, block) = match &trace.block {
        Some(tr) => {
            let g = mamba3d_backward(&trace.bottleneck, &w.block, tr, &dg)?;
            (g.input, g.weights)
        }
        None => {
            let mut zero = w.block.clone();
            zero.zero();
            (dg, zero)
        }
    };
    let f = w.features();
    let vol = dh.len() / f;
    let dbias: Vec<T> = dh.data().chunks(vol).map(|c| c.iter().copied().sum()).collect();
    let e = trace.t_feats.len();
    let time = Tensor::from_fn(vec![f, e], |i| dbias[i / e] * trace.t_feats[i % e]);
    let mut label = Tensor::zeros(vec![2, f]);
    if let Some(l) = trace.label {
        label.data_mut()[l as usize * f..(l as usize + 1) * f].copy_from_slice(&dbias);
    }
    let (_, conv_in) = w.conv_in.backward(&trace.conv_in, &dh)?;
    Ok((DenoiserWeights { conv_in, time, label, block, conv_out }, dh))
}

/// Mean squared error and its gradient with respect to `pred`.
pub fn mse_with_grad<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    target.ensure_dims(pred.dims(), "noise target")?;
    let n = T::lit(pred.len() as f64);
    let diff: Vec<T> = pred.data().iter().zip(target.data()).map(|(&a, &b)| a - b).collect();
    let loss = diff.iter().map(|&d| d * d).sum::<T>() / n;
    let two_n = T::lit(2.0) / n;
    Ok((loss, Tensor::new(pred.dims().to_vec(), diff.into_iter().map(|d| d * two_n).collect())?))
}

/// `mean((D(x_t, t, c) − ε)²)`.
pub fn denoising_loss<T: Real>(
    w: &DenoiserWeights<T>,
    x_t: &Tensor<T>,
    cond: &Conditioning<'_, T>,
    eps_target: &Tensor<T>,
) -> Result<T> {
    let (pred, _) = denoiser_forward_traced(w, x_t, cond)?;
    Ok(mse_with_grad(&pred, eps_target)?.0)
}

/// Denoiser plus the control encoder pair feeding it.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel<T> {
    pub dims: ModelDims,
    pub denoiser: DenoiserWeights<T>,
    pub control: EncoderPair<T>,
    /// Highest stage completed so far; 0 for fresh weights.
    pub completed_stage: u8,
}

impl<T: Real> ToyModel<T> {
    pub fn init(dims: ModelDims, momentum: f64, rng: &mut Rng) -> Result<Self> {
        let denoiser = DenoiserWeights::init(&dims, rng)?;
        let mut encoder = EncoderWeights::init(dims.channels, dims.features, dims.embed_dim, [1, 1, 1], rng)?;
        // Start the injected features small so the untrained control path is mild.
        encoder.body.layers[2].weight.scale(T::lit(0.1));
        Ok(ToyModel { dims, denoiser, control: EncoderPair::new(encoder, momentum), completed_stage: 0 })
    }

    pub fn cast<U: Real>(&self) -> ToyModel<U> {
        ToyModel {
            dims: self.dims,
            denoiser: self.denoiser.cast(),
            control: EncoderPair {
                query: self.control.query.cast(),
                key: self.control.key.cast(),
                momentum: self.control.momentum,
            },
            completed_stage: self.completed_stage,
        }
    }
}

impl<T: Real> ParamSet<T> for ToyModel<T> {
    fn visit(&self, f: &mut dyn FnMut(&[T])) {
        self.denoiser.visit(f);
        self.control.query.visit(f);
        self.control.key.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [T])) {
        self.denoiser.visit_mut(f);
        self.control.query.visit_mut(f);
        self.control.key.visit_mut(f);
    }
}
