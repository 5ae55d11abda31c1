use paul_core::data::{generate_synthetic, generate_synthetic_with_model, SynthSpec};
use paul_core::geometry::{normalize_frame, AdaptiveScheme};
use paul_core::metrics::*;
use paul_core::networks::{CodeMode, ModelParams, ModelSpec};
use paul_core::rng::{normal_matrix, seeded};
use paul_core::Matrix;
use proptest::prelude::*;

fn cfg() -> MetricConfig {
    MetricConfig::default()
}

fn negate_z(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for v in out.row_mut(2) {
        *v = -*v;
    }
    out
}

/// Dyadic entries over 8 points keep every mean and reflection exact.
fn fixture() -> Matrix {
    Matrix::from_fn(3, 8, |r, c| {
        ((r * 8 + c) as f64 * 0.375).sin().mul_add(4.0, 0.0).round() / 8.0
    })
}

#[test]
fn normalized_error_examples() {
    let gt = fixture();
    assert_eq!(normalized_error(&gt, &gt, &cfg()).unwrap(), 0.0);
    assert_eq!(normalized_error(&flip_about_mean(&gt), &gt, &cfg()).unwrap(), 0.0);
    assert_eq!(normalized_error(&gt.scaled(2.0), &gt, &cfg()).unwrap(), 1.0);
    assert!(matches!(
        normalized_error(&gt, &Matrix::zeros(3, 8), &cfg()),
        Err(MetricError::ZeroGroundTruth)
    ));
}

fn flip_about_mean(m: &Matrix) -> Matrix {
    paul_core::geometry::flip_depth(m)
}

#[test]
fn mpjpe_examples() {
    let gt = fixture();
    assert_eq!(mpjpe(&gt, &gt, &cfg()).unwrap(), 0.0);
    assert_eq!(mpjpe(&flip_about_mean(&gt), &gt, &cfg()).unwrap(), 0.0);
    let mut shifted = gt.clone();
    for v in shifted.row_mut(2) {
        *v += 4.0;
    }
    assert_eq!(mpjpe(&shifted, &gt, &cfg()).unwrap(), 0.0);
    let root = MetricConfig {
        depth_offset: DepthOffset::RootJoint(3),
        ..cfg()
    };
    assert_eq!(mpjpe(&shifted, &gt, &root).unwrap(), 0.0);
    let bad = MetricConfig {
        depth_offset: DepthOffset::RootJoint(8),
        ..cfg()
    };
    assert!(mpjpe(&gt, &gt, &bad).is_err());
}

#[test]
fn mpjpe_matches_a_direct_computation() {
    let mut rng = seeded(3);
    let none = MetricConfig {
        flip_policy: FlipPolicy::None,
        ..cfg()
    };
    for _ in 0..20 {
        let pred = normal_matrix(&mut rng, 3, 11, 1.0);
        let gt = normal_matrix(&mut rng, 3, 11, 1.0);
        let mp = pred.row(2).iter().sum::<f64>() / 11.0;
        let mg = gt.row(2).iter().sum::<f64>() / 11.0;
        let mut total = 0.0;
        for j in 0..11 {
            let dx = pred[(0, j)] - gt[(0, j)];
            let dy = pred[(1, j)] - gt[(1, j)];
            let dz = (pred[(2, j)] - mp) - (gt[(2, j)] - mg);
            total += (dx * dx + dy * dy + dz * dz).sqrt();
        }
        assert!((mpjpe(&pred, &gt, &none).unwrap() - total / 11.0).abs() <= 1e-12);
    }
}

#[test]
fn flip_policy_makes_depth_negation_invisible() {
    let mut spec = SynthSpec::new(9, 25, 2, 4);
    spec.occlusion_rate = 0.2;
    let ds = generate_synthetic(&spec).unwrap();
    let mut rng = seeded(5);
    let preds: Vec<Option<Matrix>> = ds
        .frames()
        .iter()
        .map(|_| Some(normal_matrix(&mut rng, 3, 9, 1.0)))
        .collect();
    let negated: Vec<Option<Matrix>> = preds.iter().map(|p| p.as_ref().map(negate_z)).collect();
    let a = evaluate_predictions(&ds, &preds, &cfg()).unwrap();
    let b = evaluate_predictions(&ds, &negated, &cfg()).unwrap();
    for (x, y) in a.frames.iter().zip(&b.frames) {
        assert_eq!(x.ne, y.ne);
        assert_eq!(x.mpjpe, y.mpjpe);
    }
    assert_eq!(a.mean_ne, b.mean_ne);
    assert_eq!(a.mean_mpjpe, b.mean_mpjpe);
    assert_eq!(a.stacked_ne, b.stacked_ne);
}

#[test]
fn perfect_predictions_score_zero_and_means_aggregate_frames() {
    let ds = generate_synthetic(&SynthSpec::new(7, 12, 1, 6)).unwrap();
    let gt = ds.ground_truth().unwrap();
    let perfect: Vec<Option<Matrix>> = ds
        .frames()
        .iter()
        .zip(gt)
        .map(|(f, g)| Some(normalize_ground_truth(&g.points, &normalize_frame(f).unwrap())))
        .collect();
    let r = evaluate_predictions(&ds, &perfect, &cfg()).unwrap();
    assert!(r.frames.iter().all(|f| f.ne <= 1e-15 && f.mpjpe <= 1e-15));

    let mut rng = seeded(7);
    let mut noisy = perfect.clone();
    noisy[3] = Some(normal_matrix(&mut rng, 3, 7, 1.0));
    noisy[5] = None;
    let r = evaluate_predictions(&ds, &noisy, &cfg()).unwrap();
    assert_eq!(r.skipped, vec![5]);
    let mean = r.frames.iter().map(|f| f.ne).sum::<f64>() / r.frames.len() as f64;
    assert_eq!(r.mean_ne, mean);

    let orig = MetricConfig {
        units: Units::Original,
        ..cfg()
    };
    let r = evaluate_predictions(&ds, &perfect, &orig).unwrap();
    assert!(r.mean_ne <= 1e-14);
    assert!(matches!(
        evaluate_predictions(&ds.without_ground_truth(), &perfect, &cfg()),
        Err(MetricError::MissingGroundTruth)
    ));
}

/// A free-code model whose decoder is exactly `φ ↦ φ·S₀` for positive φ.
fn rigid_model(mean: &Matrix, codes: &[f64]) -> ModelParams {
    let p = mean.cols();
    let mut spec = ModelSpec::new(p, 1, CodeMode::FreeCode, codes.len());
    spec.hidden = vec![4, 3];
    let mut params = ModelParams::init(spec, &mut seeded(0)).unwrap();
    for a in params.arrays_mut() {
        if !a.name.starts_with("decoder") {
            continue;
        }
        let (r, c) = a.value.shape();
        a.value = if a.name.ends_with("bias") {
            Matrix::zeros(r, c)
        } else if c == 3 * p {
            Matrix::from_fn(r, c, |i, j| if i == 0 { mean.as_slice()[j] } else { 0.0 })
        } else {
            Matrix::from_fn(r, c, |i, j| if i == 0 && j == 0 { 1.0 } else { 0.0 })
        };
    }
    let c = params.codes_mut().unwrap();
    c.as_mut_slice().copy_from_slice(codes);
    params
}

#[test]
fn rigid_oracle_evaluates_to_near_zero() {
    let spec = SynthSpec::new(15, 30, 0, 8);
    let (ds, model) = generate_synthetic_with_model(&spec).unwrap();
    let codes: Vec<f64> = ds
        .frames()
        .iter()
        .map(|f| 1.0 / normalize_frame(f).unwrap().scale)
        .collect();
    let params = rigid_model(&model.mean_shape, &codes);
    let r = evaluate(&ds, &params, &cfg(), AdaptiveScheme::VisibleMean).unwrap();
    assert!(r.mean_ne <= 1e-6, "{}", r.mean_ne);
    assert!(r.skipped.is_empty());
}

#[test]
fn latent_rows_export_free_codes_verbatim() {
    let ds = generate_synthetic(&SynthSpec::new(6, 4, 0, 1)).unwrap();
    let params = rigid_model(&Matrix::filled(3, 6, 1.0), &[0.5, 1.5, 2.5, 3.5]);
    let rows = latent_rows(&ds, &params);
    assert_eq!(
        rows,
        vec![(0, vec![0.5]), (1, vec![1.5]), (2, vec![2.5]), (3, vec![3.5])]
    );
}

#[test]
fn smoothness_statistic() {
    let line: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64]).collect();
    let s = temporal_smoothness(&line);
    assert!((s - 1.0 / 7.0).abs() <= 1e-12, "{s}");
    let mut shuffled = line.clone();
    shuffled.swap(0, 19);
    shuffled.swap(3, 12);
    assert!(temporal_smoothness(&shuffled) > s);
}

proptest! {
    #[test]
    fn normalized_error_is_scale_covariant(seed in 0u64..1000, alpha in 1e-3f64..1e3) {
        let mut rng = seeded(seed);
        let pred = normal_matrix(&mut rng, 3, 10, 1.0);
        let gt = normal_matrix(&mut rng, 3, 10, 1.0);
        let a = normalized_error(&pred, &gt, &cfg()).unwrap();
        let b = normalized_error(&pred.scaled(alpha), &gt.scaled(alpha), &cfg()).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
    }

    #[test]
    fn mpjpe_ignores_depth_translation(seed in 0u64..1000, shift in -100.0f64..100.0) {
        let mut rng = seeded(seed);
        let pred = normal_matrix(&mut rng, 3, 10, 1.0);
        let gt = normal_matrix(&mut rng, 3, 10, 1.0);
        let mut moved = pred.clone();
        for v in moved.row_mut(2) {
            *v += shift;
        }
        let a = mpjpe(&pred, &gt, &cfg()).unwrap();
        let b = mpjpe(&moved, &gt, &cfg()).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * (1.0 + shift.abs()));
    }
}
