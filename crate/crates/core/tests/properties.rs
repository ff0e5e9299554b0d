use proptest::prelude::*;
use scst_core::numerics::io::{decode, encode};
use scst_core::scan::{
    continuity_report, gather_sequence, generate_path, invert_path, scatter_sequence, ScanPath, ScanPattern,
    VolumeShape,
};
use scst_core::ssm::{scan_parallel, scan_sequential, selective_inputs, HiddenState, SelectiveProj, SsmParams};
use scst_core::{Rng, Tensor};

fn shape() -> impl Strategy<Value = VolumeShape> {
    (1usize..=6, 1usize..=6, 1usize..=6).prop_map(|(t, h, w)| VolumeShape::new(t, h, w).unwrap())
}

fn pattern() -> impl Strategy<Value = ScanPattern> {
    (0usize..6).prop_map(|i| ScanPattern::ALL[i])
}

proptest! {
    #[test]
    fn every_pattern_is_a_continuous_permutation(s in shape(), p in pattern()) {
        let path = generate_path(s, p).unwrap();
        let mut sorted = path.order().to_vec();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, (0..s.voxels()).collect::<Vec<_>>());
        prop_assert_eq!(continuity_report(&path, s).unwrap().violations, 0);
        let flipped = generate_path(s, p.flipped()).unwrap();
        prop_assert_eq!(path.reversed(), flipped);
    }

    #[test]
    fn inverse_composes_to_identity(perm in Just((0..40).collect::<Vec<usize>>()).prop_shuffle()) {
        let p = ScanPath::from_order(perm).unwrap();
        let inv = invert_path(&p).unwrap();
        for (pos, &idx) in p.order().iter().enumerate() {
            prop_assert_eq!(inv.order()[idx], pos);
            prop_assert_eq!(p.order()[inv.order()[pos]], pos);
        }
        prop_assert_eq!(invert_path(&inv).unwrap(), p);
    }

    #[test]
    fn scatter_undoes_gather(s in shape(), p in pattern(), c in 1usize..4, seed in any::<u64>()) {
        let v: Tensor<f32> = Rng::new(seed).normal_tensor(vec![c, s.t, s.h, s.w], 1.0);
        let path = generate_path(s, p).unwrap();
        let back = scatter_sequence(&gather_sequence(&v, &path).unwrap(), &path, s).unwrap();
        prop_assert_eq!(back, v);
    }

    #[test]
    fn parallel_scan_agrees_with_sequential(len in 1usize..=1024, n in 1usize..=8, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let params: SsmParams<f32> = SsmParams::init(n, &mut rng);
        let proj = SelectiveProj::init(n, 0.5, &mut rng);
        let x: Vec<f32> = (0..len).map(|_| rng.normal() as f32).collect();
        let sel = selective_inputs(&params, &proj, &x).unwrap();
        let h0 = HiddenState::zeros(n);
        let a = scan_sequential(&params, &sel, &x, &h0).unwrap();
        let b = scan_parallel(&params, &sel, &x, &h0).unwrap();
        let dev = a.y.iter().zip(&b.y).map(|(p, q)| (p - q).abs()).fold(0.0f32, f32::max);
        prop_assert!(dev < 1e-5, "deviation {}", dev);
    }

    #[test]
    fn tensor_encoding_round_trips(dims in prop::collection::vec(1usize..5, 1..4), seed in any::<u64>()) {
        let t32: Tensor<f32> = Rng::new(seed).normal_tensor(dims.clone(), 3.0);
        prop_assert_eq!(decode::<f32>(&encode(&t32)).unwrap(), t32);
        let t64: Tensor<f64> = Rng::new(seed).normal_tensor(dims, 3.0);
        prop_assert_eq!(decode::<f64>(&encode(&t64)).unwrap(), t64);
    }
}
