//! The discretized recurrence `h_t = ā_t ⊙ h_{t−1} + b̄_t x_t`, `y_t = c_t·h_t + d x_t`,
//! evaluated left to right or as a parallel prefix over affine maps.

use crate::error::{Error, Result};
use crate::numerics::Real;
use crate::ssm::zoh::zoh_factors;
use crate::ssm::{HiddenState, SelectiveInputs, SsmParams};

#[derive(Debug, Clone, PartialEq)]
pub struct ScanOutput<T> {
    pub y: Vec<T>,
    pub h_final: HiddenState<T>,
}

fn check_lengths<T: Real>(
    params: &SsmParams<T>,
    sel: &SelectiveInputs<T>,
    x: &[T],
    h0: &HiddenState<T>,
) -> Result<()> {
    let n = params.state_dim();
    if h0.h.len() != n {
        return Err(Error::Shape(format!("params have state dim {n}, h0 has {}", h0.h.len())));
    }
    if sel.len() != x.len() {
        return Err(Error::Shape(format!("selective inputs cover {} steps, x has {}", sel.len(), x.len())));
    }
    if sel.b.len() != n * x.len() || sel.c.len() != n * x.len() {
        return Err(Error::Shape(format!(
            "selective b/c hold {}/{} values, expected {} steps × {n}",
            sel.b.len(),
            sel.c.len(),
            x.len()
        )));
    }
    Ok(())
}

fn ensure_finite<T: Real>(y: &[T], h: &[T]) -> Result<()> {
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("scan output y[{i}] = {}", y[i])));
    }
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("final hidden state".into()));
    }
    Ok(())
}

pub fn scan_sequential<T: Real>(
    params: &SsmParams<T>,
    sel: &SelectiveInputs<T>,
    x: &[T],
    h0: &HiddenState<T>,
) -> Result<ScanOutput<T>> {
    check_lengths(params, sel, x, h0)?;
    let n = params.state_dim();
    let mut h = h0.h.clone();
    let mut y = Vec::with_capacity(x.len());
    for (t, &xt) in x.iter().enumerate() {
        let delta = sel.delta[t];
        let b = &sel.b[t * n..(t + 1) * n];
        let c = &sel.c[t * n..(t + 1) * n];
        let mut acc = params.d * xt;
        for i in 0..n {
            let (a_bar, phi) = zoh_factors(params.a[i], delta);
            h[i] = a_bar * h[i] + phi * b[i] * xt;
            acc = acc + c[i] * h[i];
        }
        y.push(acc);
    }
    ensure_finite(&y, &h)?;
    Ok(ScanOutput { y, h_final: HiddenState { h } })
}

/// An affine map `h ↦ a·h + b`.
#[derive(Debug, Clone, Copy)]
struct Affine<T> {
    a: T,
    b: T,
}

impl<T: Real> Affine<T> {
    fn identity() -> Self {
        Affine { a: T::one(), b: T::zero() }
    }

    /// `second ∘ first`: apply `first`, then `second`.
    #[inline]
    fn then(first: Self, second: Self) -> Self {
        Affine { a: second.a * first.a, b: second.a * first.b + second.b }
    }
}

/// Inclusive prefix compositions of `maps` by a work-efficient tree scan.
///
/// The array is padded with identities to a power of two `m`. Up-sweep: for
/// stride `s = 2, 4, …, m`, node `k+s−1` becomes `node[k+s−1] ∘ node[k+s/2−1]`.
/// The root is replaced by the identity, then the down-sweep walks strides
/// back from `m` to 2, handing each left child its parent's prefix and each
/// right child `left ∘ parent`. That yields exclusive prefixes, which are
/// composed with their own element to make the result inclusive. The tree
/// shape depends only on the length, so the rounding is reproducible.
fn prefix_compose<T: Real>(maps: &[Affine<T>]) -> Vec<Affine<T>> {
    let len = maps.len();
    let m = len.next_power_of_two();
    let mut tree = Vec::with_capacity(m);
    tree.extend_from_slice(maps);
    tree.resize(m, Affine::identity());

    let mut stride = 2;
    while stride <= m {
        for k in (0..m).step_by(stride) {
            let left = k + stride / 2 - 1;
            let right = k + stride - 1;
            tree[right] = Affine::then(tree[left], tree[right]);
        }
        stride *= 2;
    }
    tree[m - 1] = Affine::identity();
    let mut stride = m;
    while stride >= 2 {
        for k in (0..m).step_by(stride) {
            let left = k + stride / 2 - 1;
            let right = k + stride - 1;
            let left_block = tree[left];
            tree[left] = tree[right];
            tree[right] = Affine::then(tree[right], left_block);
        }
        stride /= 2;
    }
    tree.truncate(len);
    tree.iter().zip(maps).map(|(&excl, &own)| Affine::then(excl, own)).collect()
}

/// Same contract as [`scan_sequential`], evaluated per state dimension with
/// [`prefix_compose`]; agrees with the sequential scan up to rounding.
pub fn scan_parallel<T: Real>(
    params: &SsmParams<T>,
    sel: &SelectiveInputs<T>,
    x: &[T],
    h0: &HiddenState<T>,
) -> Result<ScanOutput<T>> {
    check_lengths(params, sel, x, h0)?;
    let n = params.state_dim();
    let len = x.len();
    let mut y: Vec<T> = x.iter().map(|&xt| params.d * xt).collect();
    let mut h_final = h0.h.clone();
    if len == 0 {
        return Ok(ScanOutput { y, h_final: HiddenState { h: h_final } });
    }
    let mut maps = Vec::with_capacity(len);
    for i in 0..n {
        maps.clear();
        maps.extend((0..len).map(|t| {
            let (a_bar, phi) = zoh_factors(params.a[i], sel.delta[t]);
            Affine { a: a_bar, b: phi * sel.b[t * n + i] * x[t] }
        }));
        let prefix = prefix_compose(&maps);
        for (t, p) in prefix.iter().enumerate() {
            let h = p.a * h0.h[i] + p.b;
            y[t] = y[t] + sel.c[t * n + i] * h;
        }
        let last = prefix[len - 1];
        h_final[i] = last.a * h0.h[i] + last.b;
    }
    ensure_finite(&y, &h_final)?;
    Ok(ScanOutput { y, h_final: HiddenState { h: h_final } })
}
