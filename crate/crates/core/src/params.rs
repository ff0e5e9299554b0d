//! Uniform access to the trainable tensors of a model.

use crate::error::{Error, Result};
use crate::numerics::Real;

/// A collection of weight buffers visited in a fixed order. Gradient
/// structures reuse the weight types, so two values of the same type with the
/// same shapes line up buffer by buffer.
pub trait ParamSet<T: Real> {
    fn visit(&self, f: &mut dyn FnMut(&[T]));

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [T]));

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |s| n += s.len());
        n
    }

    fn flatten(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.num_params());
        self.visit(&mut |s| out.extend_from_slice(s));
        out
    }

    /// Overwrites every buffer from `flat`, in visiting order.
    fn load_flat(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Shape(format!("flat vector has {} values, model {}", flat.len(), self.num_params())));
        }
        let mut at = 0;
        self.visit_mut(&mut |s| {
            s.copy_from_slice(&flat[at..at + s.len()]);
            at += s.len();
        });
        Ok(())
    }

    fn scale(&mut self, factor: T) {
        self.visit_mut(&mut |s| s.iter_mut().for_each(|v| *v = *v * factor));
    }

    fn zero(&mut self) {
        self.scale(T::zero());
    }

    /// `self ← self − lr · grads`.
    fn sgd_step(&mut self, grads: &Self, lr: T) -> Result<()>
    where
        Self: Sized,
    {
        let g = grads.flatten();
        if g.len() != self.num_params() {
            return Err(Error::Shape("gradient and parameter layouts differ".into()));
        }
        let mut at = 0;
        self.visit_mut(&mut |s| {
            for v in s.iter_mut() {
                *v = *v - lr * g[at];
                at += 1;
            }
        });
        Ok(())
    }

    /// 64-bit FNV-1a over the raw bit patterns, for bitwise freeze checks.
    fn fingerprint(&self) -> u64 {
        let mut hash = 0xcbf2_9ce4_8422_2325u64;
        self.visit(&mut |s| {
            for v in s {
                for byte in v.as_f64().to_bits().to_le_bytes() {
                    hash ^= byte as u64;
                    hash = hash.wrapping_mul(0x0100_0000_01b3);
                }
            }
        });
        hash
    }

    fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit(&mut |s| ok &= s.iter().all(|v| v.is_finite()));
        ok
    }
}

impl<T: Real> ParamSet<T> for crate::numerics::Tensor<T> {
    fn visit(&self, f: &mut dyn FnMut(&[T])) {
        f(self.data())
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [T])) {
        f(self.data_mut())
    }
}

impl<T: Real, P: ParamSet<T>> ParamSet<T> for Vec<P> {
    fn visit(&self, f: &mut dyn FnMut(&[T])) {
        self.iter().for_each(|p| p.visit(f))
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [T])) {
        self.iter_mut().for_each(|p| p.visit_mut(f))
    }
}

impl<T: Real> ParamSet<T> for crate::ssm::SsmParams<T> {
    fn visit(&self, f: &mut dyn FnMut(&[T])) {
        f(&self.a);
        f(&self.b_static);
        f(&self.c_static);
        f(std::slice::from_ref(&self.d));
        f(std::slice::from_ref(&self.delta_bias));
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [T])) {
        f(&mut self.a);
        f(&mut self.b_static);
        f(&mut self.c_static);
        f(std::slice::from_mut(&mut self.d));
        f(std::slice::from_mut(&mut self.delta_bias));
    }
}

impl<T: Real> ParamSet<T> for crate::ssm::SelectiveProj<T> {
    fn visit(&self, f: &mut dyn FnMut(&[T])) {
        f(&self.w_b);
        f(&self.w_c);
        f(std::slice::from_ref(&self.w_delta));
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [T])) {
        f(&mut self.w_b);
        f(&mut self.w_c);
        f(std::slice::from_mut(&mut self.w_delta));
    }
}

/// Casts every buffer of `src` into the matching buffer of `dst`.
pub fn cast_into<S: Real, D: Real>(src: &impl ParamSet<S>, dst: &mut impl ParamSet<D>) -> Result<()> {
    let flat: Vec<D> = src.flatten().into_iter().map(|v| D::lit(v.as_f64())).collect();
    dst.load_flat(&flat)
}
