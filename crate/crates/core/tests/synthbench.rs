use se3reg::synthbench::{
    generate_crops, generate_model, generate_multiview, generate_pair, run_bench, summarize,
    surface_diameter, write_bench_csv, BenchConfig, CropParams, ModelKind, MultiviewParams,
    PairParams, BENCH_CSV_HEADER,
};

/// Brute-force maximum pairwise distance.
fn diameter_oracle(points: &[se3reg::Vec3]) -> f64 {
    let mut best = 0.0f64;
    for (k, a) in points.iter().enumerate() {
        for b in &points[k + 1..] {
            best = best.max((a - b).norm());
        }
    }
    best
}

#[test]
fn models_are_unit_diameter() {
    for kind in [ModelKind::Sphere, ModelKind::Cube, ModelKind::Blobs] {
        let m = generate_model(kind, 800, 1);
        let d = diameter_oracle(&m.points);
        assert!((d - 1.0).abs() <= 1e-12, "{kind:?} {d}");
        assert_eq!(surface_diameter(&m), d);
        assert!(m.centroid().unwrap().norm() <= 1e-12);
    }
}

#[test]
fn generators_are_deterministic() {
    let model = generate_model(ModelKind::Blobs, 300, 2);
    assert_eq!(model, generate_model(ModelKind::Blobs, 300, 2));
    assert_ne!(model, generate_model(ModelKind::Blobs, 300, 3));
    let params = PairParams::new(1.0, 0.01, 0.2, 77);
    assert_eq!(generate_pair(&model, &params).unwrap(), generate_pair(&model, &params).unwrap());
    let mv = MultiviewParams { n_views: 3, pairs_per_edge: 50, seed: 4, ..Default::default() };
    assert_eq!(generate_multiview(&model, &mv).unwrap(), generate_multiview(&model, &mv).unwrap());
    let model = generate_model(ModelKind::Blobs, 1000, 2);
    let cp = CropParams { seed: 5, ..Default::default() };
    assert_eq!(generate_crops(&model, &cp).unwrap(), generate_crops(&model, &cp).unwrap());
}

#[test]
fn noise_magnitude_matches_gaussian_mean() {
    // ‖n‖ for n ~ N(0, σ²I₃) has mean σ√(8/π)
    let model = generate_model(ModelKind::Sphere, 5000, 3);
    let pair = generate_pair(&model, &PairParams::new(1.0, 0.01, 0.0, 9)).unwrap();
    let mean = pair.corrs.iter().map(|c| (c.p - pair.gt.apply(&c.q)).norm()).sum::<f64>()
        / pair.corrs.len() as f64;
    let expected = pair.sigma * (8.0 / std::f64::consts::PI).sqrt();
    assert!((mean / expected - 1.0).abs() <= 0.1, "{mean} vs {expected}");
}

#[test]
fn outlier_fraction_and_angle_are_respected() {
    let model = generate_model(ModelKind::Cube, 1000, 4);
    let pair = generate_pair(&model, &PairParams::fixed_angle(0.5, 0.0, 0.25, 1)).unwrap();
    assert_eq!(pair.inlier.iter().filter(|ok| !**ok).count(), 250);
    assert!((pair.gt.rotation.angle() - 0.5).abs() <= 1e-12);
    for (c, ok) in pair.corrs.iter().zip(&pair.inlier) {
        if *ok {
            assert!((c.p - pair.gt.apply(&c.q)).norm() <= 1e-12);
        }
    }
}

#[test]
fn bench_is_exact_without_corruption_and_csv_is_stable() {
    let cfg = BenchConfig {
        points: 200,
        trials: 6,
        sigma_rel: 0.0,
        outlier_fraction: 0.0,
        ..Default::default()
    };
    let rows = run_bench(&cfg).unwrap();
    let s = summarize(&rows);
    assert_eq!(s.trials, 6);
    assert!(s.median_rae_deg <= 1e-8 && s.max_rmse <= 1e-10);
    assert_eq!(s.converged_fraction, 1.0);

    let mut a = Vec::new();
    write_bench_csv(&rows, &mut a, false).unwrap();
    let mut b = Vec::new();
    write_bench_csv(&run_bench(&cfg).unwrap(), &mut b, false).unwrap();
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert_eq!(text.lines().next(), Some(BENCH_CSV_HEADER));
    assert_eq!(text.lines().count(), 7);
}
