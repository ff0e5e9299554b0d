//! Diagonal selective state-space kernels.
//!
//! One channel of the model maps a scalar sequence `x_t` through
//!
//! ```text
//! Δ_t = softplus(w_Δ·x_t + delta_bias)
//! b_t = b_static + w_b·x_t          c_t = c_static + w_c·x_t
//! ā_t = exp(Δ_t a)                  b̄_t = ((exp(Δ_t a) − 1)/a) ⊙ b_t
//! h_t = ā_t ⊙ h_{t−1} + b̄_t x_t     y_t = c_t·h_t + d·x_t
//! ```
//!
//! with a real diagonal state matrix `a` (entries negative for stable decay).

mod recurrence;
mod selective;
mod zoh;

pub use recurrence::{scan_parallel, scan_sequential, ScanOutput};
pub use selective::{
    selective_inputs, selective_scan, selective_scan_traced, ssm_backward, SelectiveProj, SelectiveTrace,
    SsmGrads,
};
pub use zoh::{discretize_zoh, zoh_factors, TAYLOR_THRESHOLD};

use crate::error::{Error, Result};
use crate::numerics::{Real, Rng};

/// Default state dimension.
pub const DEFAULT_STATE_DIM: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct SsmParams<T> {
    /// Diagonal of the continuous state matrix.
    pub a: Vec<T>,
    pub b_static: Vec<T>,
    pub c_static: Vec<T>,
    pub d: T,
    /// Offset inside the softplus that produces Δ.
    pub delta_bias: T,
}

impl<T: Real> SsmParams<T> {
    pub fn state_dim(&self) -> usize {
        self.a.len()
    }

    pub fn zeros(n: usize) -> Self {
        SsmParams {
            a: vec![T::zero(); n],
            b_static: vec![T::zero(); n],
            c_static: vec![T::zero(); n],
            d: T::zero(),
            delta_bias: T::zero(),
        }
    }

    /// S4D-real style initialization: `a_i = −(i+1)`, small random `b`, `c`,
    /// `d = 1`, and Δ around 0.1.
    pub fn init(n: usize, rng: &mut Rng) -> Self {
        SsmParams {
            a: (0..n).map(|i| T::lit(-(i as f64 + 1.0))).collect(),
            b_static: (0..n).map(|_| T::lit(rng.normal() / (n as f64).sqrt())).collect(),
            c_static: (0..n).map(|_| T::lit(rng.normal() / (n as f64).sqrt())).collect(),
            d: T::one(),
            // softplus(-2.25) ≈ 0.1
            delta_bias: T::lit(-2.25),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.a.len();
        if n == 0 {
            return Err(Error::Invalid("state dimension must be at least 1".into()));
        }
        if self.b_static.len() != n || self.c_static.len() != n {
            return Err(Error::Shape(format!(
                "a/b/c lengths {}/{}/{}",
                n,
                self.b_static.len(),
                self.c_static.len()
            )));
        }
        let all = self.a.iter().chain(&self.b_static).chain(&self.c_static);
        if all.chain([&self.d, &self.delta_bias]).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("ssm parameters".into()));
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> SsmParams<U> {
        let c = |v: &[T]| v.iter().map(|x| U::lit(x.as_f64())).collect();
        SsmParams {
            a: c(&self.a),
            b_static: c(&self.b_static),
            c_static: c(&self.c_static),
            d: U::lit(self.d.as_f64()),
            delta_bias: U::lit(self.delta_bias.as_f64()),
        }
    }
}

/// Per-step input-dependent parameters, stored step-major (`b[t·n + i]`).
#[derive(Debug, Clone, PartialEq)]
pub struct SelectiveInputs<T> {
    pub b: Vec<T>,
    pub c: Vec<T>,
    pub delta: Vec<T>,
}

impl<T: Real> SelectiveInputs<T> {
    pub fn len(&self) -> usize {
        self.delta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delta.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        if self.delta.is_empty() {
            0
        } else {
            self.b.len() / self.delta.len()
        }
    }

    /// Time-invariant inputs: the same `b`, `c`, Δ at every step.
    pub fn constant(b: &[T], c: &[T], delta: T, len: usize) -> Self {
        SelectiveInputs { b: b.repeat(len), c: c.repeat(len), delta: vec![delta; len] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HiddenState<T> {
    pub h: Vec<T>,
}

impl<T: Real> HiddenState<T> {
    pub fn zeros(n: usize) -> Self {
        HiddenState { h: vec![T::zero(); n] }
    }
}
