use crate::error::{Error, Result};
use crate::numerics::Real;

/// Below this `|Δ·a|` the input gain uses a three-term Taylor series.
pub const TAYLOR_THRESHOLD: f64 = 1e-4;

/// Zero-order-hold factors for one diagonal entry: `(ā, φ)` with
/// `ā = exp(Δa)` and `b̄ = φ·b`, `φ = (exp(Δa) − 1)/a`.
#[inline]
pub fn zoh_factors<T: Real>(a: T, delta: T) -> (T, T) {
    let z = delta * a;
    let a_bar = z.exp();
    let phi = if z.abs() < T::lit(TAYLOR_THRESHOLD) {
        delta * (T::one() + z / T::lit(2.0) + z * z / T::lit(6.0))
    } else {
        z.exp_m1() / a
    };
    (a_bar, phi)
}

/// Derivatives `(∂φ/∂Δ, ∂φ/∂a)` matching the branch taken by [`zoh_factors`].
#[inline]
pub(crate) fn zoh_phi_grads<T: Real>(a: T, delta: T, a_bar: T) -> (T, T) {
    let z = delta * a;
    if z.abs() < T::lit(TAYLOR_THRESHOLD) {
        let two = T::lit(2.0);
        let d_delta = T::one() + z + z * z / two;
        let d_a = delta * delta * (T::one() / two + z / T::lit(3.0));
        (d_delta, d_a)
    } else {
        (a_bar, (z * a_bar - z.exp_m1()) / (a * a))
    }
}

/// Discretizes a diagonal system: `ā_i = exp(Δ a_i)`, `b̄_i = ((exp(Δ a_i) − 1)/a_i)·b_i`.
pub fn discretize_zoh<T: Real>(a: &[T], b: &[T], delta: T) -> Result<(Vec<T>, Vec<T>)> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("a has {} entries, b has {}", a.len(), b.len())));
    }
    if !delta.is_finite() || delta < T::zero() {
        return Err(Error::Invalid(format!("delta must be finite and non-negative, got {delta}")));
    }
    if let Some(v) = a.iter().chain(b).find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("discretize_zoh input {v}")));
    }
    let (a_bar, b_bar) = a
        .iter()
        .zip(b)
        .map(|(&ai, &bi)| {
            let (ab, phi) = zoh_factors(ai, delta);
            (ab, phi * bi)
        })
        .unzip();
    Ok((a_bar, b_bar))
}
