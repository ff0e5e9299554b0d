use crate::error::{Error, Result};
use crate::moco::MemoryQueue;
use crate::numerics::Real;

/// Contrastive temperature, strictly positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Temperature(f64);

impl Temperature {
    pub const DEFAULT: Temperature = Temperature(0.07);

    pub fn new(tau: f64) -> Result<Self> {
        if tau > 0.0 && tau.is_finite() {
            Ok(Temperature(tau))
        } else {
            Err(Error::Invalid(format!("temperature must be positive, got {tau}")))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

/// `P×P` grid of `dim`-dimensional unit vectors, stored patch-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchFeatureGrid<T> {
    pub grid: usize,
    pub dim: usize,
    pub features: Vec<T>,
}

impl<T: Real> PatchFeatureGrid<T> {
    pub fn patches(&self) -> usize {
        self.grid * self.grid
    }

    pub fn patch(&self, p: usize) -> &[T] {
        &self.features[p * self.dim..(p + 1) * self.dim]
    }

    /// Every patch vector as its own key.
    pub fn to_keys(&self) -> Vec<Vec<T>> {
        (0..self.patches()).map(|p| self.patch(p).to_vec()).collect()
    }
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

fn check<T: Real>(q: &PatchFeatureGrid<T>, k: &PatchFeatureGrid<T>, queue: &MemoryQueue<T>) -> Result<()> {
    if q.grid != k.grid || q.dim != k.dim {
        return Err(Error::Shape(format!("query grid {}×{} vs key grid {}×{}", q.grid, q.dim, k.grid, k.dim)));
    }
    if q.features.len() != q.patches() * q.dim || k.features.len() != k.patches() * k.dim {
        return Err(Error::Shape("patch grid storage does not match its P and D".into()));
    }
    if queue.dim() != q.dim {
        return Err(Error::Shape(format!("queue dim {} vs feature dim {}", queue.dim(), q.dim)));
    }
    if queue.is_empty() {
        return Err(Error::EmptyQueue);
    }
    Ok(())
}

/// Logits `[q·k₊, q·Q_1, …]/τ` for patch `p`.
fn logits<T: Real>(q: &PatchFeatureGrid<T>, k: &PatchFeatureGrid<T>, queue: &MemoryQueue<T>, p: usize, tau: T) -> Vec<T> {
    let qp = q.patch(p);
    let mut l = Vec::with_capacity(queue.len() + 1);
    l.push(dot(qp, k.patch(p)) / tau);
    l.extend(queue.keys().map(|key| dot(qp, key) / tau));
    l
}

/// Patch-averaged InfoNCE: `(1/P²) Σ_p [logsumexp(l_p) − l_p[0]]`.
pub fn infonce_patch_loss<T: Real>(
    q: &PatchFeatureGrid<T>,
    k_pos: &PatchFeatureGrid<T>,
    queue: &MemoryQueue<T>,
    tau: Temperature,
) -> Result<T> {
    check(q, k_pos, queue)?;
    let tau = T::lit(tau.get());
    let mut total = T::zero();
    for p in 0..q.patches() {
        let l = logits(q, k_pos, queue, p, tau);
        let max = l.iter().copied().fold(T::neg_infinity(), T::max);
        let sum: T = l.iter().map(|&v| (v - max).exp()).sum();
        // logsumexp − l0, written so equal logits give exactly ln(N+1).
        total = total + ((l[0] - max).neg() + sum.ln());
    }
    let loss = total / T::lit(q.patches() as f64);
    if !loss.is_finite() {
        return Err(Error::NonFinite("infonce loss".into()));
    }
    Ok(loss)
}

/// `upstream · ∂L/∂q` for every query patch vector; keys and queue receive nothing.
pub fn infonce_backward<T: Real>(
    q: &PatchFeatureGrid<T>,
    k_pos: &PatchFeatureGrid<T>,
    queue: &MemoryQueue<T>,
    tau: Temperature,
    upstream: T,
) -> Result<PatchFeatureGrid<T>> {
    check(q, k_pos, queue)?;
    let tau_t = T::lit(tau.get());
    let scale = upstream / (tau_t * T::lit(q.patches() as f64));
    let mut grad = PatchFeatureGrid { grid: q.grid, dim: q.dim, features: vec![T::zero(); q.features.len()] };
    for p in 0..q.patches() {
        let l = logits(q, k_pos, queue, p, tau_t);
        let max = l.iter().copied().fold(T::neg_infinity(), T::max);
        let weights: Vec<T> = l.iter().map(|&v| (v - max).exp()).collect();
        let denom: T = weights.iter().copied().sum();
        let g = &mut grad.features[p * q.dim..(p + 1) * q.dim];
        let s0 = weights[0] / denom - T::one();
        for (gi, &ki) in g.iter_mut().zip(k_pos.patch(p)) {
            *gi = *gi + scale * s0 * ki;
        }
        for (key, &w) in queue.keys().zip(&weights[1..]) {
            let s = scale * w / denom;
            for (gi, &ki) in g.iter_mut().zip(key) {
                *gi = *gi + s * ki;
            }
        }
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moco::KeySource;
    use crate::numerics::Rng;

    fn grid(vectors: Vec<Vec<f64>>) -> PatchFeatureGrid<f64> {
        let grid = (vectors.len() as f64).sqrt() as usize;
        let dim = vectors[0].len();
        PatchFeatureGrid { grid, dim, features: vectors.concat() }
    }

    fn basis(dim: usize, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        v
    }

    #[test]
    fn equal_logits_give_log_n_plus_one() {
        for n in [1usize, 8, 1023] {
            let mut queue = MemoryQueue::new(n, 2).unwrap();
            queue.enqueue(&vec![basis(2, 0); n], KeySource::Hr).unwrap();
            let q = grid(vec![basis(2, 0)]);
            let loss = infonce_patch_loss(&q, &q, &queue, Temperature::DEFAULT).unwrap();
            assert!((loss - ((n + 1) as f64).ln()).abs() < 1e-9, "n={n}: {loss}");
        }
    }

    #[test]
    fn separated_case_closed_form() {
        let dim = 9;
        let mut queue = MemoryQueue::new(8, dim).unwrap();
        queue.enqueue(&(1..9).map(|i| basis(dim, i)).collect::<Vec<_>>(), KeySource::Hr).unwrap();
        let q = grid(vec![basis(dim, 0)]);
        let loss = infonce_patch_loss(&q, &q, &queue, Temperature::DEFAULT).unwrap();
        let expected = (8.0 * (-1.0f64 / 0.07).exp()).ln_1p();
        assert!((loss - expected).abs() < 1e-15);
        assert!((loss - 5.0e-6).abs() < 1e-7);
    }

    #[test]
    fn empty_queue_and_mismatch_are_errors() {
        let q = grid(vec![basis(2, 0)]);
        let empty = MemoryQueue::<f64>::new(4, 2).unwrap();
        assert!(matches!(infonce_patch_loss(&q, &q, &empty, Temperature::DEFAULT), Err(Error::EmptyQueue)));
        let mut other = MemoryQueue::new(4, 3).unwrap();
        other.enqueue(&[basis(3, 0)], KeySource::Hr).unwrap();
        assert!(infonce_patch_loss(&q, &q, &other, Temperature::DEFAULT).is_err());
        assert!(Temperature::new(0.0).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let mut rng = Rng::new(1);
        let queue = MemoryQueue::random(5, 4, &mut rng).unwrap();
        let q = grid(vec![rng.unit_vector(4); 4]);
        let g = infonce_backward(&q, &q, &queue, Temperature::DEFAULT, 0.0).unwrap();
        assert!(g.features.iter().all(|&v| v == 0.0));
    }
}
