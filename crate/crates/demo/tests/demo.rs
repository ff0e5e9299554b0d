use scst_demo::{infonce_vs_similarity, scan_path_order, step_response};

#[test]
fn scan_path_ends_with_violation_count() {
    let out = scan_path_order(2, 2, 2, "w-forward").unwrap();
    assert_eq!(out, [0, 1, 3, 2, 6, 7, 5, 4, 0]);
    assert_eq!(*scan_path_order(2, 3, 4, "sweep-forward").unwrap().last().unwrap(), 5);
    assert!(scan_path_order(2, 2, 2, "zigzag").is_err());
    assert!(scan_path_order(64, 64, 64, "w-forward").is_err());
}

#[test]
fn step_response_matches_closed_form() {
    let (a, delta) = (-2.0, 0.05);
    let y = step_response(a, delta, 200).unwrap();
    for (k, v) in y.iter().enumerate() {
        // b c / (−a) · (1 − e^{aΔk})
        let exact = (1.0 - (a * delta * (k + 1) as f64).exp()) / -a;
        assert!((v - exact).abs() < 1e-12);
    }
    assert!(step_response(1.0, 0.1, 10).is_err());
}

#[test]
fn infonce_curve_matches_closed_form() {
    let (n, tau) = (16usize, 0.2);
    let curve = infonce_vs_similarity(n, tau, 21).unwrap();
    for (i, l) in curve.iter().enumerate() {
        let s = -1.0 + 0.1 * i as f64;
        let exact = -s / tau + ((s / tau).exp() + n as f64).ln();
        assert!((l - exact).abs() < 1e-9, "s={s}: {l} vs {exact}");
    }
    assert!(curve.windows(2).all(|w| w[1] < w[0]));
}
