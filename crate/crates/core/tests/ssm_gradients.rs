//! Selective-scan backward pass against central finite differences in f64.

use scst_core::numerics::{finite_diff_flat, max_rel_error, Rng};
use scst_core::ssm::{
    selective_scan_traced, ssm_backward, HiddenState, SelectiveProj, SsmParams,
};

/// Flattens everything the loss depends on: x, h0, a, b, c, d, delta_bias, w_b, w_c, w_delta.
fn pack(x: &[f64], h0: &[f64], p: &SsmParams<f64>, q: &SelectiveProj<f64>) -> Vec<f64> {
    let mut v = Vec::new();
    v.extend_from_slice(x);
    v.extend_from_slice(h0);
    v.extend_from_slice(&p.a);
    v.extend_from_slice(&p.b_static);
    v.extend_from_slice(&p.c_static);
    v.push(p.d);
    v.push(p.delta_bias);
    v.extend_from_slice(&q.w_b);
    v.extend_from_slice(&q.w_c);
    v.push(q.w_delta);
    v
}

fn unpack(v: &[f64], len: usize, n: usize) -> (Vec<f64>, Vec<f64>, SsmParams<f64>, SelectiveProj<f64>) {
    let mut it = v.iter().copied();
    let mut take = |k: usize| -> Vec<f64> { (&mut it).take(k).collect() };
    let x = take(len);
    let h0 = take(n);
    let a = take(n);
    let b_static = take(n);
    let c_static = take(n);
    let d = take(1)[0];
    let delta_bias = take(1)[0];
    let w_b = take(n);
    let w_c = take(n);
    let w_delta = take(1)[0];
    (x, h0, SsmParams { a, b_static, c_static, d, delta_bias }, SelectiveProj { w_b, w_c, w_delta })
}

fn check_instance(seed: u64, len: usize, n: usize, a_scale: f64) -> f64 {
    let mut rng = Rng::new(seed);
    let mut params: SsmParams<f64> = SsmParams::init(n, &mut rng);
    for a in &mut params.a {
        *a *= a_scale;
    }
    params.d = rng.normal();
    params.delta_bias = rng.uniform(-1.5, 0.5);
    let proj = SelectiveProj::init(n, 0.5, &mut rng);
    let x: Vec<f64> = (0..len).map(|_| rng.normal()).collect();
    let h0: Vec<f64> = (0..n).map(|_| 0.5 * rng.normal()).collect();
    let w: Vec<f64> = (0..len).map(|_| rng.normal()).collect();

    let loss = |v: &scst_core::Tensor<f64>| {
        let (x, h0, p, q) = unpack(v.data(), len, n);
        let (y, _) = selective_scan_traced(&p, &q, &x, &HiddenState { h: h0 }).unwrap();
        y.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()
    };

    let (_, trace) = selective_scan_traced(&params, &proj, &x, &HiddenState { h: h0.clone() }).unwrap();
    let g = ssm_backward(&params, &proj, &x, &trace, &w).unwrap();
    let analytic = pack(&g.x, &g.h0, &g.params, &g.proj);
    let numeric = finite_diff_flat(loss, &pack(&x, &h0, &params, &proj), 1e-5).unwrap();
    max_rel_error(&analytic, &numeric)
}

#[test]
fn random_l8_n4_matches_finite_differences() {
    for seed in 0..5 {
        let err = check_instance(seed, 8, 4, 1.0);
        assert!(err < 1e-3, "seed {seed}: rel err {err}");
    }
}

#[test]
fn taylor_branch_gradients_match_finite_differences() {
    // |Δa| around 1e-5 keeps every step on the series branch.
    for seed in 10..13 {
        let err = check_instance(seed, 6, 3, 1e-4);
        assert!(err < 1e-3, "seed {seed}: rel err {err}");
    }
}
