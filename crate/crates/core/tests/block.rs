use scst_core::layers::{Activation, Conv3d};
use scst_core::mamba3d::{
    dwconv3d_backward, dwconv3d_forward, mamba3d_backward, mamba3d_forward, mamba3d_forward_traced, Mamba3dConfig,
    WeightSharing,
};
use scst_core::numerics::{finite_diff_flat, max_rel_error, Rng, Tensor};
use scst_core::scan::{generate_path, ScanPattern, VolumeShape};
use scst_core::ParamSet;

/// Six nested loops over (c, t, h, w, kt, kh, kw) in f64.
fn dwconv_reference(v: &Tensor<f64>, conv: &Conv3d<f64>) -> Tensor<f64> {
    let d = v.dims();
    let (c, t, h, w) = (d[0], d[1], d[2], d[3]);
    let [kt, kh, kw] = conv.kernel();
    let mut out = Tensor::zeros(d.to_vec());
    for ch in 0..c {
        for a in 0..t {
            for b in 0..h {
                for e in 0..w {
                    let mut acc = conv.bias[ch];
                    for i in 0..kt {
                        for j in 0..kh {
                            for k in 0..kw {
                                let (ta, hb, we) = (
                                    a as isize + i as isize - (kt / 2) as isize,
                                    b as isize + j as isize - (kh / 2) as isize,
                                    e as isize + k as isize - (kw / 2) as isize,
                                );
                                if ta < 0 || hb < 0 || we < 0 || ta >= t as isize || hb >= h as isize || we >= w as isize {
                                    continue;
                                }
                                let x = v[((ch * t + ta as usize) * h + hb as usize) * w + we as usize];
                                acc += conv.weight[((ch * kt + i) * kh + j) * kw + k] * x;
                            }
                        }
                    }
                    out[((ch * t + a) * h + b) * w + e] = acc;
                }
            }
        }
    }
    out
}

#[test]
fn dwconv_matches_brute_force_reference() {
    let mut rng = Rng::new(17);
    let mut conv = Conv3d::<f32>::init(2, 2, [3, 3, 3], 2, [1, 1, 1], &mut rng).unwrap();
    conv.bias = rng.normal_tensor(vec![2], 1.0);
    let v = rng.normal_tensor::<f32>(vec![2, 3, 4, 4], 1.0);
    let fast = dwconv3d_forward(&v, &conv).unwrap();
    let slow = dwconv_reference(&v.cast(), &conv.cast());
    assert!(fast.cast::<f64>().max_abs_diff(&slow) < 1e-5);
}

#[test]
fn delta_kernel_is_identity_and_box_kernel_preserves_constants() {
    let mut rng = Rng::new(2);
    let v = rng.normal_tensor::<f64>(vec![3, 2, 4, 5], 1.0);
    let mut delta = Conv3d::<f64>::zeros(3, 3, [3, 3, 3], 3);
    for ch in 0..3 {
        delta.weight[ch * 27 + 13] = 1.0;
    }
    assert_eq!(dwconv3d_forward(&v, &delta).unwrap(), v);

    let constant = Tensor::<f64>::full(vec![1, 1, 5, 5], 2.5);
    let mut boxk = Conv3d::<f64>::zeros(1, 1, [1, 3, 3], 1);
    boxk.weight.fill(1.0 / 9.0);
    let out = dwconv3d_forward(&constant, &boxk).unwrap();
    for h in 1..4 {
        for w in 1..4 {
            assert!((out[h * 5 + w] - 2.5).abs() < 1e-12);
        }
    }
    // Zero padding shrinks the corners.
    assert!(out[0] < 2.5);
}

#[test]
fn dwconv_backward_matches_finite_differences() {
    let mut rng = Rng::new(23);
    let mut conv = Conv3d::<f64>::init(2, 2, [3, 3, 3], 2, [1, 1, 1], &mut rng).unwrap();
    conv.bias = rng.normal_tensor(vec![2], 0.5);
    let v = rng.normal_tensor::<f64>(vec![2, 3, 3, 4], 1.0);
    let wts = rng.normal_tensor::<f64>(vec![2, 3, 3, 4], 1.0);
    let (dv, gconv) = dwconv3d_backward(&v, &conv, &wts).unwrap();

    let n_in = v.len();
    let mut x0 = v.data().to_vec();
    x0.extend(conv.flatten());
    let numeric = finite_diff_flat(
        |p| {
            let input = Tensor::new(v.dims().to_vec(), p.data()[..n_in].to_vec()).unwrap();
            let mut c = conv.clone();
            c.load_flat(&p.data()[n_in..]).unwrap();
            let out = dwconv3d_forward(&input, &c).unwrap();
            out.data().iter().zip(wts.data()).map(|(a, b)| a * b).sum()
        },
        &x0,
        1e-4,
    )
    .unwrap();
    let mut analytic = dv.into_data();
    analytic.extend(gconv.flatten());
    let err = max_rel_error(&analytic, &numeric);
    assert!(err < 1e-3, "rel err {err}");
}

fn block_grad_error(seed: u64, sharing: WeightSharing, activation: Activation) -> f64 {
    let mut rng = Rng::new(seed);
    let mut cfg =
        Mamba3dConfig::<f64>::init(2, 3, [3, 3, 3], &ScanPattern::ALL, sharing, &mut rng).unwrap();
    cfg.activation = activation;
    // Larger selective weights so every path carries signal.
    for w in &mut cfg.weights {
        for p in &mut w.proj {
            p.w_delta = rng.normal() * 0.5;
        }
    }
    let v = rng.normal_tensor::<f64>(vec![2, 2, 3, 3], 1.0);
    let wts = rng.normal_tensor::<f64>(vec![2, 2, 3, 3], 1.0);
    let (_, trace) = mamba3d_forward_traced(&v, &cfg).unwrap();
    let g = mamba3d_backward(&v, &cfg, &trace, &wts).unwrap();

    let n_in = v.len();
    let mut x0 = v.data().to_vec();
    x0.extend(cfg.flatten());
    let numeric = finite_diff_flat(
        |p| {
            let input = Tensor::new(v.dims().to_vec(), p.data()[..n_in].to_vec()).unwrap();
            let mut c = cfg.clone();
            c.load_flat(&p.data()[n_in..]).unwrap();
            let out = mamba3d_forward(&input, &c).unwrap();
            out.data().iter().zip(wts.data()).map(|(a, b)| a * b).sum()
        },
        &x0,
        1e-5,
    )
    .unwrap();
    let mut analytic = g.input.into_data();
    analytic.extend(g.weights.flatten());
    max_rel_error(&analytic, &numeric)
}

#[test]
fn block_backward_matches_finite_differences() {
    for seed in 0..2 {
        let err = block_grad_error(seed, WeightSharing::Independent, Activation::Silu);
        assert!(err < 1e-3, "seed {seed}: rel err {err}");
    }
    let err = block_grad_error(7, WeightSharing::TiedFlips, Activation::Silu);
    assert!(err < 1e-3, "tied: rel err {err}");
    let err = block_grad_error(8, WeightSharing::Independent, Activation::Identity);
    assert!(err < 1e-3, "identity activation: rel err {err}");
}

fn reverse_volume(v: &Tensor<f64>, c: usize) -> Tensor<f64> {
    let per = v.len() / c;
    let mut out = v.clone();
    for ch in 0..c {
        out.data_mut()[ch * per..(ch + 1) * per].reverse();
    }
    out
}

/// With all extents odd, point-reflecting a forward serpentine gives exactly
/// its flipped path, so a block whose flips share weights (and whose kernels
/// are point-symmetric) commutes with reversing the whole volume.
#[test]
fn tied_block_commutes_with_volume_reversal_on_odd_shapes() {
    for (seed, (t, h, w)) in [(1u64, (3, 3, 5)), (2, (1, 5, 3)), (3, (5, 1, 1))] {
        let shape = VolumeShape::new(t, h, w).unwrap();
        let n = shape.voxels();
        for p in ScanPattern::ALL {
            let fwd = generate_path(shape, p).unwrap();
            let reflected: Vec<usize> = fwd.order().iter().map(|&i| n - 1 - i).collect();
            assert_eq!(reflected, generate_path(shape, p.flipped()).unwrap().order());
        }

        let mut rng = Rng::new(seed);
        let c = 2;
        let mut cfg =
            Mamba3dConfig::<f64>::init(c, 3, [3, 3, 3], &ScanPattern::ALL, WeightSharing::TiedFlips, &mut rng).unwrap();
        let per = 27;
        for ch in 0..c {
            let k = &mut cfg.conv.weight.data_mut()[ch * per..(ch + 1) * per];
            let rev: Vec<f64> = k.iter().rev().copied().collect();
            for (a, b) in k.iter_mut().zip(rev) {
                *a = 0.5 * (*a + b);
            }
        }
        let v = rng.normal_tensor::<f64>(vec![c, t, h, w], 1.0);
        let out = mamba3d_forward(&v, &cfg).unwrap();
        let out_rev = mamba3d_forward(&reverse_volume(&v, c), &cfg).unwrap();
        let diff = out_rev.max_abs_diff(&reverse_volume(&out, c));
        assert!(diff < 1e-12, "shape {t}x{h}x{w}: {diff}");
    }
}
