use crate::error::{Error, Result};
use crate::numerics::{sigmoid, softplus, Real, Rng};
use crate::ssm::zoh::{zoh_factors, zoh_phi_grads};
use crate::ssm::{scan_sequential, HiddenState, SelectiveInputs, SsmParams};

/// Linear maps from the input token to the per-step `b_t`, `c_t` and the Δ
/// pre-activation.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectiveProj<T> {
    pub w_b: Vec<T>,
    pub w_c: Vec<T>,
    pub w_delta: T,
}

impl<T: Real> SelectiveProj<T> {
    pub fn zeros(n: usize) -> Self {
        SelectiveProj { w_b: vec![T::zero(); n], w_c: vec![T::zero(); n], w_delta: T::zero() }
    }

    pub fn init(n: usize, scale: f64, rng: &mut Rng) -> Self {
        SelectiveProj {
            w_b: (0..n).map(|_| T::lit(scale * rng.normal())).collect(),
            w_c: (0..n).map(|_| T::lit(scale * rng.normal())).collect(),
            w_delta: T::lit(scale * rng.normal()),
        }
    }

    pub fn cast<U: Real>(&self) -> SelectiveProj<U> {
        SelectiveProj {
            w_b: self.w_b.iter().map(|v| U::lit(v.as_f64())).collect(),
            w_c: self.w_c.iter().map(|v| U::lit(v.as_f64())).collect(),
            w_delta: U::lit(self.w_delta.as_f64()),
        }
    }
}

fn check_proj<T: Real>(params: &SsmParams<T>, proj: &SelectiveProj<T>) -> Result<()> {
    params.validate()?;
    let n = params.state_dim();
    if proj.w_b.len() != n || proj.w_c.len() != n {
        return Err(Error::Shape(format!(
            "projection widths {}/{} vs state dim {n}",
            proj.w_b.len(),
            proj.w_c.len()
        )));
    }
    Ok(())
}

/// Input-dependent `(b_t, c_t, Δ_t)` for every step of `x`.
pub fn selective_inputs<T: Real>(
    params: &SsmParams<T>,
    proj: &SelectiveProj<T>,
    x: &[T],
) -> Result<SelectiveInputs<T>> {
    check_proj(params, proj)?;
    let n = params.state_dim();
    let mut sel = SelectiveInputs {
        b: Vec::with_capacity(n * x.len()),
        c: Vec::with_capacity(n * x.len()),
        delta: Vec::with_capacity(x.len()),
    };
    for &xt in x {
        sel.b.extend(params.b_static.iter().zip(&proj.w_b).map(|(&b, &w)| b + w * xt));
        sel.c.extend(params.c_static.iter().zip(&proj.w_c).map(|(&c, &w)| c + w * xt));
        sel.delta.push(softplus(proj.w_delta * xt + params.delta_bias));
    }
    Ok(sel)
}

/// Selective scan from a zero initial state.
pub fn selective_scan<T: Real>(params: &SsmParams<T>, proj: &SelectiveProj<T>, x: &[T]) -> Result<Vec<T>> {
    let sel = selective_inputs(params, proj, x)?;
    Ok(scan_sequential(params, &sel, x, &HiddenState::zeros(params.state_dim()))?.y)
}

/// Everything the backward pass needs from a forward evaluation.
#[derive(Debug, Clone)]
pub struct SelectiveTrace<T> {
    n: usize,
    /// Δ pre-activations.
    z: Vec<T>,
    delta: Vec<T>,
    b: Vec<T>,
    c: Vec<T>,
    a_bar: Vec<T>,
    phi: Vec<T>,
    /// Hidden states `h_0 … h_L`, `(L+1)·n` values.
    h: Vec<T>,
}

impl<T: Real> SelectiveTrace<T> {
    pub fn len(&self) -> usize {
        self.delta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delta.is_empty()
    }

    pub fn h_final(&self) -> &[T] {
        &self.h[self.h.len() - self.n..]
    }
}

/// Forward pass that records a [`SelectiveTrace`] for [`ssm_backward`].
pub fn selective_scan_traced<T: Real>(
    params: &SsmParams<T>,
    proj: &SelectiveProj<T>,
    x: &[T],
    h0: &HiddenState<T>,
) -> Result<(Vec<T>, SelectiveTrace<T>)> {
    check_proj(params, proj)?;
    let n = params.state_dim();
    if h0.h.len() != n {
        return Err(Error::Shape(format!("h0 has {} entries, state dim {n}", h0.h.len())));
    }
    let len = x.len();
    let mut tr = SelectiveTrace {
        n,
        z: Vec::with_capacity(len),
        delta: Vec::with_capacity(len),
        b: Vec::with_capacity(len * n),
        c: Vec::with_capacity(len * n),
        a_bar: Vec::with_capacity(len * n),
        phi: Vec::with_capacity(len * n),
        h: Vec::with_capacity((len + 1) * n),
    };
    tr.h.extend_from_slice(&h0.h);
    let mut y = Vec::with_capacity(len);
    for (t, &xt) in x.iter().enumerate() {
        let z = proj.w_delta * xt + params.delta_bias;
        let delta = softplus(z);
        tr.z.push(z);
        tr.delta.push(delta);
        let mut acc = params.d * xt;
        for i in 0..n {
            let b = params.b_static[i] + proj.w_b[i] * xt;
            let c = params.c_static[i] + proj.w_c[i] * xt;
            let (a_bar, phi) = zoh_factors(params.a[i], delta);
            let h = a_bar * tr.h[t * n + i] + phi * b * xt;
            acc = acc + c * h;
            tr.b.push(b);
            tr.c.push(c);
            tr.a_bar.push(a_bar);
            tr.phi.push(phi);
            tr.h.push(h);
        }
        y.push(acc);
    }
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("selective scan output y[{i}]")));
    }
    Ok((y, tr))
}

/// Gradients of a scalar loss with respect to every input of the selective scan.
#[derive(Debug, Clone, PartialEq)]
pub struct SsmGrads<T> {
    pub x: Vec<T>,
    pub h0: Vec<T>,
    pub params: SsmParams<T>,
    pub proj: SelectiveProj<T>,
}

impl<T: Real> SsmGrads<T> {
    pub fn zeros(n: usize, len: usize) -> Self {
        SsmGrads {
            x: vec![T::zero(); len],
            h0: vec![T::zero(); n],
            params: SsmParams::zeros(n),
            proj: SelectiveProj::zeros(n),
        }
    }
}

/// Reverse-mode pass through [`selective_scan_traced`].
///
/// `dy` is `∂L/∂y`. The trace must come from a forward call on the same `x`.
pub fn ssm_backward<T: Real>(
    params: &SsmParams<T>,
    proj: &SelectiveProj<T>,
    x: &[T],
    trace: &SelectiveTrace<T>,
    dy: &[T],
) -> Result<SsmGrads<T>> {
    let n = params.state_dim();
    let len = x.len();
    if trace.n != n || trace.len() != len || trace.h.len() != (len + 1) * n {
        return Err(Error::MissingPrerequisite(format!(
            "forward trace covers {} steps with state dim {}, backward asked for {len} × {n}",
            trace.len(),
            trace.n
        )));
    }
    if dy.len() != len {
        return Err(Error::Shape(format!("dy has {} entries, sequence has {len}", dy.len())));
    }
    let mut g = SsmGrads::zeros(n, len);
    // ∂L/∂h_t flowing back from step t+1.
    let mut carry = vec![T::zero(); n];
    for t in (0..len).rev() {
        let xt = x[t];
        let gy = dy[t];
        g.params.d = g.params.d + gy * xt;
        let mut gx = gy * params.d;
        let mut g_delta = T::zero();
        let delta = trace.delta[t];
        for i in 0..n {
            let k = t * n + i;
            let h_prev = trace.h[k];
            let h = trace.h[k + n];
            let (a_bar, phi, b, c) = (trace.a_bar[k], trace.phi[k], trace.b[k], trace.c[k]);

            let gc = gy * h;
            g.params.c_static[i] = g.params.c_static[i] + gc;
            g.proj.w_c[i] = g.proj.w_c[i] + gc * xt;
            gx = gx + gc * proj.w_c[i];

            let gh = gy * c + carry[i];
            carry[i] = gh * a_bar;

            // h = ā·h_prev + φ·b·x
            let g_abar = gh * h_prev;
            let g_phi = gh * b * xt;
            let gb = gh * phi * xt;
            gx = gx + gh * phi * b;
            g.params.b_static[i] = g.params.b_static[i] + gb;
            g.proj.w_b[i] = g.proj.w_b[i] + gb * xt;
            gx = gx + gb * proj.w_b[i];

            let a = params.a[i];
            let (dphi_ddelta, dphi_da) = zoh_phi_grads(a, delta, a_bar);
            g_delta = g_delta + g_abar * a * a_bar + g_phi * dphi_ddelta;
            g.params.a[i] = g.params.a[i] + g_abar * delta * a_bar + g_phi * dphi_da;
        }
        let gz = g_delta * sigmoid(trace.z[t]);
        g.params.delta_bias = g.params.delta_bias + gz;
        g.proj.w_delta = g.proj.w_delta + gz * xt;
        gx = gx + gz * proj.w_delta;
        g.x[t] = gx;
    }
    g.h0 = carry;
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ssm::scan_parallel;

    #[test]
    fn zero_projection_reduces_to_static_scan() {
        let mut rng = Rng::new(2);
        let mut params: SsmParams<f64> = SsmParams::init(3, &mut rng);
        params.delta_bias = 0.0;
        let proj = SelectiveProj::zeros(3);
        let x: Vec<f64> = (0..10).map(|_| rng.normal()).collect();
        let y = selective_scan(&params, &proj, &x).unwrap();
        let sel = SelectiveInputs::constant(&params.b_static, &params.c_static, 2f64.ln(), x.len());
        let y_static = scan_parallel(&params, &sel, &x, &HiddenState::zeros(3)).unwrap().y;
        for (a, b) in y.iter().zip(&y_static) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_sequence_gives_zero() {
        let mut rng = Rng::new(8);
        let params: SsmParams<f32> = SsmParams::init(4, &mut rng);
        let proj = SelectiveProj::init(4, 0.5, &mut rng);
        let y = selective_scan(&params, &proj, &[0.0; 12]).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut rng = Rng::new(1);
        let params: SsmParams<f64> = SsmParams::init(2, &mut rng);
        let proj = SelectiveProj::init(2, 0.3, &mut rng);
        let x: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
        let (_, tr) = selective_scan_traced(&params, &proj, &x, &HiddenState::zeros(2)).unwrap();
        let g = ssm_backward(&params, &proj, &x, &tr, &[0.0; 6]).unwrap();
        assert_eq!(g, SsmGrads::zeros(2, 6));
    }

    #[test]
    fn skip_only_gradient() {
        let params = SsmParams { d: 0.8, ..SsmParams::<f64>::zeros(2) };
        let proj = SelectiveProj::zeros(2);
        let x = [0.5, -1.0, 2.0];
        let dy = [1.5, 0.25, -0.5];
        let (_, tr) = selective_scan_traced(&params, &proj, &x, &HiddenState::zeros(2)).unwrap();
        let g = ssm_backward(&params, &proj, &x, &tr, &dy).unwrap();
        let expected: f64 = x.iter().zip(&dy).map(|(a, b)| a * b).sum();
        assert!((g.params.d - expected).abs() < 1e-15);
        for (gx, gyv) in g.x.iter().zip(&dy) {
            assert!((gx - 0.8 * gyv).abs() < 1e-15);
        }
    }

    #[test]
    fn mismatched_trace_is_rejected() {
        let params = SsmParams::<f64>::zeros(2);
        let proj = SelectiveProj::zeros(2);
        let (_, tr) = selective_scan_traced(&params, &proj, &[1.0; 4], &HiddenState::zeros(2)).unwrap();
        let r = ssm_backward(&params, &proj, &[1.0; 5], &tr, &[1.0; 5]);
        assert!(matches!(r, Err(Error::MissingPrerequisite(_))));
    }
}
