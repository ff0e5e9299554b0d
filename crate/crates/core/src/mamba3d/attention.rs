//! Full scaled dot-product self-attention over every voxel of a volume: the
//! quadratic-cost comparator for the scan-based block.

use crate::error::{Error, Result};
use crate::layers::volume_dims;
use crate::numerics::{Real, Rng, Tensor};

/// Largest token count accepted by default (about 64 MiB of f32 scores).
pub const DEFAULT_MAX_TOKENS: usize = 4096 * 4;

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights<T> {
    /// `C×C` projections applied to each token.
    pub query: Tensor<T>,
    pub key: Tensor<T>,
    pub value: Tensor<T>,
    pub max_tokens: usize,
}

impl<T: Real> AttentionWeights<T> {
    pub fn init(channels: usize, rng: &mut Rng) -> Self {
        let std = (1.0 / channels as f64).sqrt();
        AttentionWeights {
            query: rng.normal_tensor(vec![channels, channels], std),
            key: rng.normal_tensor(vec![channels, channels], std),
            value: rng.normal_tensor(vec![channels, channels], std),
            max_tokens: DEFAULT_MAX_TOKENS,
        }
    }
}

/// `C×L` tokens → `proj · tokens`.
fn project<T: Real>(w: &Tensor<T>, tokens: &[T], c: usize, len: usize) -> Vec<T> {
    let mut out = vec![T::zero(); c * len];
    for o in 0..c {
        let row = &mut out[o * len..(o + 1) * len];
        for i in 0..c {
            let wv = w[o * c + i];
            for (dst, &x) in row.iter_mut().zip(&tokens[i * len..(i + 1) * len]) {
                *dst = *dst + wv * x;
            }
        }
    }
    out
}

/// Softmax attention over the row-major flattening of the volume.
pub fn attention_baseline<T: Real>(v: &Tensor<T>, weights: &AttentionWeights<T>) -> Result<Tensor<T>> {
    let [c, t, h, w] = volume_dims(v, "attention input")?;
    for m in [&weights.query, &weights.key, &weights.value] {
        m.ensure_dims(&[c, c], "attention projection")?;
    }
    let len = t * h * w;
    if len > weights.max_tokens {
        return Err(Error::Invalid(format!("{len} tokens exceed the attention cap of {}", weights.max_tokens)));
    }
    let x = v.data();
    let q = project(&weights.query, x, c, len);
    let k = project(&weights.key, x, c, len);
    let val = project(&weights.value, x, c, len);
    // Token-major copies keep the inner products contiguous.
    let to_rows = |m: &[T]| -> Vec<T> {
        let mut r = vec![T::zero(); c * len];
        for ch in 0..c {
            for j in 0..len {
                r[j * c + ch] = m[ch * len + j];
            }
        }
        r
    };
    let (q, k, val) = (to_rows(&q), to_rows(&k), to_rows(&val));
    let scale = T::one() / T::lit(c as f64).sqrt();
    let mut out = vec![T::zero(); c * len];
    let mut scores = vec![T::zero(); len];
    let mut acc = vec![T::zero(); c];
    for i in 0..len {
        let qi = &q[i * c..(i + 1) * c];
        let mut max = T::neg_infinity();
        for (j, s) in scores.iter_mut().enumerate() {
            let kj = &k[j * c..(j + 1) * c];
            *s = qi.iter().zip(kj).map(|(&a, &b)| a * b).sum::<T>() * scale;
            max = max.max(*s);
        }
        let mut denom = T::zero();
        acc.iter_mut().for_each(|a| *a = T::zero());
        for (j, &s) in scores.iter().enumerate() {
            let e = (s - max).exp();
            denom = denom + e;
            for (a, &vv) in acc.iter_mut().zip(&val[j * c..(j + 1) * c]) {
                *a = *a + e * vv;
            }
        }
        for ch in 0..c {
            out[ch * len + i] = acc[ch] / denom;
        }
    }
    Tensor::new(vec![c, t, h, w], out)
}
