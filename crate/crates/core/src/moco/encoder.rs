use crate::error::{Error, Result};
use crate::layers::{Activation, Conv3d, ConvStack, ConvStackTrace};
use crate::moco::{KeySource, MemoryQueue, PatchFeatureGrid, Temperature};
use crate::moco::{infonce_backward, infonce_patch_loss};
use crate::numerics::{Real, Rng, Tensor};
use crate::params::ParamSet;

/// Feature extractor plus the linear patch projection `D×F`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderWeights<T> {
    pub body: ConvStack<T>,
    pub head: Tensor<T>,
}

impl<T: Real> EncoderWeights<T> {
    /// Three `1×3×3` convolutions; `strides` gives the spatial stride of each.
    pub fn init(c_in: usize, features: usize, dim: usize, strides: [usize; 3], rng: &mut Rng) -> Result<Self> {
        let mut layers = Vec::with_capacity(3);
        let mut c = c_in;
        for s in strides {
            layers.push(Conv3d::init(c, features, [1, 3, 3], 1, [1, s, s], rng)?);
            c = features;
        }
        let std = (1.0 / features as f64).sqrt();
        Ok(EncoderWeights {
            body: ConvStack { layers, activation: Activation::Silu },
            head: rng.normal_tensor(vec![dim, features], std),
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.head.dims()[0]
    }

    pub fn cast<U: Real>(&self) -> EncoderWeights<U> {
        EncoderWeights { body: self.body.cast(), head: self.head.cast() }
    }

    /// `C×H×W` frame to `F×H'×W'` feature map.
    fn features(&self, frame: &Tensor<T>) -> Result<(Tensor<T>, ConvStackTrace<T>)> {
        let [c, h, w] = frame_dims(frame)?;
        let x = frame.clone().reshape(vec![c, 1, h, w])?;
        let (out, trace) = self.body.forward_traced(&x)?;
        let d = out.dims().to_vec();
        Ok((out.reshape(vec![d[0], d[2], d[3]])?, trace))
    }

    /// Unit-norm patch embeddings of one frame.
    pub fn encode(&self, frame: &Tensor<T>, grid: usize) -> Result<PatchFeatureGrid<T>> {
        let (map, _) = self.features(frame)?;
        Ok(patch_features(&map, grid, &self.head)?.0)
    }
}

impl<T: Real> ParamSet<T> for EncoderWeights<T> {
    fn visit(&self, f: &mut dyn FnMut(&[T])) {
        self.body.visit(f);
        f(self.head.data());
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [T])) {
        self.body.visit_mut(f);
        f(self.head.data_mut());
    }
}

fn frame_dims<T: Real>(frame: &Tensor<T>) -> Result<[usize; 3]> {
    match *frame.dims() {
        [c, h, w] => Ok([c, h, w]),
        _ => Err(Error::Shape(format!("expected a C×H×W frame, got {:?}", frame.dims()))),
    }
}

/// Cell `i` of `P` along an axis of length `n` covers `[⌊i·n/P⌋, ⌊(i+1)·n/P⌋)`.
fn cell(i: usize, n: usize, p: usize) -> std::ops::Range<usize> {
    i * n / p..(i + 1) * n / p
}

/// Values kept by [`patch_features`] for its backward pass.
#[derive(Debug, Clone)]
pub struct PatchTrace<T> {
    map_dims: [usize; 3],
    pooled: Vec<T>,
    features: Vec<T>,
    norms: Vec<T>,
}

/// Average-pools an `F×H'×W'` map over a `P×P` grid of non-overlapping
/// cells, projects each cell with `head` (`D×F`) and L2-normalizes.
pub fn patch_features<T: Real>(
    map: &Tensor<T>,
    grid: usize,
    head: &Tensor<T>,
) -> Result<(PatchFeatureGrid<T>, PatchTrace<T>)> {
    let [f, h, w] = frame_dims(map)?;
    if grid == 0 || h < grid || w < grid {
        return Err(Error::Shape(format!("cannot split a {h}×{w} map into {grid}×{grid} patches")));
    }
    let [dim, f_in] = match *head.dims() {
        [d, fi] => [d, fi],
        _ => return Err(Error::Shape(format!("projection must be D×F, got {:?}", head.dims()))),
    };
    if f_in != f {
        return Err(Error::Shape(format!("projection expects {f_in} channels, map has {f}")));
    }
    let np = grid * grid;
    let m = map.data();
    let mut pooled = vec![T::zero(); np * f];
    for gi in 0..grid {
        for gj in 0..grid {
            let (rows, cols) = (cell(gi, h, grid), cell(gj, w, grid));
            let count = T::lit((rows.len() * cols.len()) as f64);
            let p = gi * grid + gj;
            for c in 0..f {
                let mut acc = T::zero();
                for r in rows.clone() {
                    acc = acc + m[(c * h + r) * w + cols.start..(c * h + r) * w + cols.end].iter().copied().sum();
                }
                pooled[p * f + c] = acc / count;
            }
        }
    }
    let hd = head.data();
    let mut features = vec![T::zero(); np * dim];
    let mut norms = vec![T::zero(); np];
    for p in 0..np {
        let x = &pooled[p * f..(p + 1) * f];
        let u = &mut features[p * dim..(p + 1) * dim];
        for (d, ud) in u.iter_mut().enumerate() {
            *ud = hd[d * f..(d + 1) * f].iter().zip(x).map(|(&a, &b)| a * b).sum();
        }
        let norm = u.iter().map(|&v| v * v).sum::<T>().sqrt().max(T::lit(1e-12));
        u.iter_mut().for_each(|v| *v = *v / norm);
        norms[p] = norm;
    }
    let out = PatchFeatureGrid { grid, dim, features: features.clone() };
    Ok((out, PatchTrace { map_dims: [f, h, w], pooled, features, norms }))
}

/// Gradient of [`patch_features`]: returns `(∂L/∂map, ∂L/∂head)`.
pub fn patch_features_backward<T: Real>(
    trace: &PatchTrace<T>,
    head: &Tensor<T>,
    dfeat: &PatchFeatureGrid<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let [f, h, w] = trace.map_dims;
    let (grid, dim) = (dfeat.grid, dfeat.dim);
    let np = grid * grid;
    if trace.norms.len() != np || head.dims() != [dim, f] {
        return Err(Error::MissingPrerequisite("patch trace does not match the gradient".into()));
    }
    let hd = head.data();
    let mut dhead = Tensor::zeros(vec![dim, f]);
    let mut dmap = Tensor::zeros(vec![f, h, w]);
    let mut dpool = vec![T::zero(); f];
    for p in 0..np {
        let z = &trace.features[p * dim..(p + 1) * dim];
        let g = dfeat.patch(p);
        let zg: T = z.iter().zip(g).map(|(&a, &b)| a * b).sum();
        let du: Vec<T> = z.iter().zip(g).map(|(&zi, &gi)| (gi - zi * zg) / trace.norms[p]).collect();
        let x = &trace.pooled[p * f..(p + 1) * f];
        dpool.iter_mut().for_each(|v| *v = T::zero());
        let dh = dhead.data_mut();
        for d in 0..dim {
            for c in 0..f {
                dh[d * f + c] = dh[d * f + c] + du[d] * x[c];
                dpool[c] = dpool[c] + du[d] * hd[d * f + c];
            }
        }
        let (rows, cols) = (cell(p / grid, h, grid), cell(p % grid, w, grid));
        let count = T::lit((rows.len() * cols.len()) as f64);
        let dm = dmap.data_mut();
        for c in 0..f {
            let share = dpool[c] / count;
            for r in rows.clone() {
                for col in cols.clone() {
                    dm[(c * h + r) * w + col] = dm[(c * h + r) * w + col] + share;
                }
            }
        }
    }
    Ok((dmap, dhead))
}

/// `key ← m·key + (1−m)·query`, parameter by parameter.
pub fn momentum_update<T: Real>(query: &EncoderWeights<T>, key: &mut EncoderWeights<T>, momentum: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&momentum) {
        return Err(Error::Invalid(format!("momentum must lie in [0, 1], got {momentum}")));
    }
    let q = query.flatten();
    if q.len() != key.num_params() {
        return Err(Error::Shape("query and key encoders differ in layout".into()));
    }
    let (m, rest) = (T::lit(momentum), T::lit(1.0 - momentum));
    let mut at = 0;
    key.visit_mut(&mut |s| {
        for v in s.iter_mut() {
            *v = m * *v + rest * q[at];
            at += 1;
        }
    });
    Ok(())
}

/// Query encoder trained by gradient, key encoder following it by EMA.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderPair<T> {
    pub query: EncoderWeights<T>,
    pub key: EncoderWeights<T>,
    pub momentum: f64,
}

impl<T: Real> EncoderPair<T> {
    pub const DEFAULT_MOMENTUM: f64 = 0.999;

    /// The key encoder starts as a copy of the query encoder.
    pub fn new(query: EncoderWeights<T>, momentum: f64) -> Self {
        EncoderPair { key: query.clone(), query, momentum }
    }

    pub fn momentum_update(&mut self) -> Result<()> {
        momentum_update(&self.query, &mut self.key, self.momentum)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContrastiveConfig {
    pub tau: Temperature,
    /// Patches per side.
    pub grid: usize,
    pub lr: f64,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        ContrastiveConfig { tau: Temperature::DEFAULT, grid: 4, lr: 0.05 }
    }
}

/// Everything one contrastive step computes before touching any state.
#[derive(Debug, Clone)]
pub struct ContrastiveGrads<T> {
    pub loss: T,
    /// Gradient for the query encoder only.
    pub query: EncoderWeights<T>,
    pub hr_keys: PatchFeatureGrid<T>,
    pub lr_keys: PatchFeatureGrid<T>,
}

/// Loss and query-encoder gradient for one (degraded, clean) frame pair.
/// The key encoder and the queue are only read.
pub fn contrastive_grads<T: Real>(
    pair: &EncoderPair<T>,
    lr_frame: &Tensor<T>,
    hr_frame: &Tensor<T>,
    queue: &MemoryQueue<T>,
    cfg: &ContrastiveConfig,
) -> Result<ContrastiveGrads<T>> {
    if lr_frame.dims() != hr_frame.dims() {
        return Err(Error::Shape(format!(
            "degraded frame {:?} must be resampled to the clean frame {:?}",
            lr_frame.dims(),
            hr_frame.dims()
        )));
    }
    let (map, body_trace) = pair.query.features(lr_frame)?;
    let (q, patch_trace) = patch_features(&map, cfg.grid, &pair.query.head)?;
    let hr_keys = pair.key.encode(hr_frame, cfg.grid)?;
    let lr_keys = pair.key.encode(lr_frame, cfg.grid)?;
    let loss = infonce_patch_loss(&q, &hr_keys, queue, cfg.tau)?;
    let dq = infonce_backward(&q, &hr_keys, queue, cfg.tau, T::one())?;
    let (dmap, dhead) = patch_features_backward(&patch_trace, &pair.query.head, &dq)?;
    let d = dmap.dims().to_vec();
    let dmap = dmap.reshape(vec![d[0], 1, d[1], d[2]])?;
    let (_, dbody) = pair.query.body.backward(&body_trace, &dmap)?;
    Ok(ContrastiveGrads { loss, query: EncoderWeights { body: dbody, head: dhead }, hr_keys, lr_keys })
}

/// One full update: SGD on the query encoder, EMA of the key encoder, then
/// the clean and degraded keys are enqueued in that order. Returns the loss.
pub fn contrastive_step<T: Real>(
    pair: &mut EncoderPair<T>,
    lr_frame: &Tensor<T>,
    hr_frame: &Tensor<T>,
    queue: &mut MemoryQueue<T>,
    cfg: &ContrastiveConfig,
) -> Result<T> {
    let g = contrastive_grads(pair, lr_frame, hr_frame, queue, cfg)?;
    if !g.query.all_finite() {
        return Err(Error::NonFinite("query encoder gradient".into()));
    }
    pair.query.sgd_step(&g.query, T::lit(cfg.lr))?;
    pair.momentum_update()?;
    queue.enqueue(&g.hr_keys.to_keys(), KeySource::Hr)?;
    queue.enqueue(&g.lr_keys.to_keys(), KeySource::Lr)?;
    Ok(g.loss)
}
