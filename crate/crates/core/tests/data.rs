use paul_core::data::*;
use paul_core::geometry::{normalize_frame, solve_frame, AdaptiveScheme, MIN_VISIBLE};
use paul_core::DataError;

#[test]
fn generation_is_deterministic() {
    let mut spec = SynthSpec::new(10, 40, 2, 5);
    spec.occlusion_rate = 0.2;
    spec.noise_sigma = 0.01;
    assert_eq!(generate_synthetic(&spec).unwrap(), generate_synthetic(&spec).unwrap());
    spec.seed = 6;
    let other = generate_synthetic(&spec).unwrap();
    spec.seed = 5;
    assert_ne!(generate_synthetic(&spec).unwrap(), other);
}

#[test]
fn observations_are_exact_projections_of_the_ground_truth() {
    for mode in [CameraMode::Random, CameraMode::Smooth] {
        let mut spec = SynthSpec::new(12, 60, 3, 1);
        spec.camera_mode = mode;
        spec.occlusion_rate = 0.25;
        let (ds, model) = generate_synthetic_with_model(&spec).unwrap();
        let gt = ds.ground_truth().unwrap();
        for (i, f) in ds.frames().iter().enumerate() {
            let proj = model.rotations[i].rxy().matmul(&model.shapes[i]).unwrap();
            for j in 0..12 {
                for r in 0..2 {
                    if f.visibility.is_visible(j) {
                        assert!((f.keypoints[(r, j)] - proj[(r, j)]).abs() <= 1e-12);
                        assert_eq!(f.keypoints[(r, j)], gt[i].points[(r, j)]);
                    } else {
                        assert_eq!(f.keypoints[(r, j)], 0.0);
                    }
                }
            }
            assert!(f.visibility.visible_count() >= MIN_VISIBLE);
        }
    }
}

#[test]
fn shapes_follow_the_linear_model() {
    let spec = SynthSpec::new(9, 20, 2, 3);
    let (_, m) = generate_synthetic_with_model(&spec).unwrap();
    let s0 = m.mean_shape.frobenius();
    for b in &m.bases {
        assert!((b.frobenius() - spec.basis_scale * s0).abs() <= 1e-12);
        let dot: f64 = b
            .as_slice()
            .iter()
            .zip(m.mean_shape.as_slice())
            .map(|(x, y)| x * y)
            .sum();
        assert!(dot.abs() <= 1e-10);
    }
    for (t, s) in m.shapes.iter().enumerate() {
        let mut expected = m.mean_shape.clone();
        for (i, b) in m.bases.iter().enumerate() {
            expected.add_assign(&b.scaled(m.codes.row(t)[i]));
        }
        assert!(s.max_abs_diff(&expected) <= 1e-12);
    }
}

#[test]
fn zero_occlusion_gives_full_masks() {
    let ds = generate_synthetic(&SynthSpec::new(8, 30, 1, 2)).unwrap();
    assert!(ds.frames().iter().all(|f| f.visibility.is_full()));
}

#[test]
fn smooth_cameras_move_gradually() {
    let mut spec = SynthSpec::new(8, 100, 1, 4);
    spec.camera_mode = CameraMode::Smooth;
    let (_, m) = generate_synthetic_with_model(&spec).unwrap();
    let step_max = m
        .rotations
        .windows(2)
        .map(|w| w[0].geodesic_distance(&w[1]))
        .fold(0.0, f64::max);
    assert!(step_max < 0.1, "{step_max}");
}

#[test]
fn noise_has_the_requested_scale() {
    let mut spec = SynthSpec::new(20, 200, 1, 8);
    spec.noise_sigma = 0.05;
    let (ds, m) = generate_synthetic_with_model(&spec).unwrap();
    let (mut sum, mut count, mut radius) = (0.0, 0.0, 0.0);
    for (i, f) in ds.frames().iter().enumerate() {
        let proj = m.rotations[i].rxy().matmul(&m.shapes[i]).unwrap();
        let diff = f.keypoints.zip_map(&proj, |a, b| a - b).unwrap();
        sum += diff.frobenius_sq();
        count += 40.0;
        radius += (proj.frobenius_sq() / 20.0).sqrt();
    }
    let measured = (sum / count).sqrt() / (radius / 200.0);
    assert!((measured - 0.05).abs() < 0.01, "{measured}");
}

#[test]
fn rigid_data_is_reconstructed_by_the_solver_alone() {
    let spec = SynthSpec::new(20, 100, 0, 11);
    let (ds, m) = generate_synthetic_with_model(&spec).unwrap();
    for (i, f) in ds.frames().iter().enumerate() {
        assert_eq!(m.shapes[i], m.mean_shape);
        let nf = normalize_frame(f).unwrap();
        let s = m.mean_shape.scaled(1.0 / nf.scale);
        let sol = solve_frame(&s, &s, &nf, AdaptiveScheme::VisibleMean).unwrap();
        assert!(sol.rotation.geodesic_distance(&m.rotations[i]) <= 1e-8);
        let gt = ds.ground_truth().unwrap()[i].points.scaled(1.0 / nf.scale);
        for j in 0..20 {
            assert!((sol.depth[j] - gt[(2, j)]).abs() <= 1e-8);
        }
    }
}

#[test]
fn invalid_specs_are_rejected() {
    let mut spec = SynthSpec::new(3, 10, 1, 0);
    spec.occlusion_rate = 0.99;
    assert!(matches!(
        generate_synthetic(&spec),
        Err(DataError::InfeasibleOcclusion { .. })
    ));
    assert!(matches!(
        generate_synthetic(&SynthSpec::new(3, 0, 1, 0)),
        Err(DataError::NoFrames)
    ));
    assert!(generate_synthetic(&SynthSpec::new(2, 5, 1, 0)).is_err());
    let mut spec = SynthSpec::new(5, 5, 1, 0);
    spec.occlusion_rate = 1.0;
    assert!(generate_synthetic(&spec).is_err());
    spec.occlusion_rate = 0.0;
    spec.noise_sigma = -1.0;
    assert!(generate_synthetic(&spec).is_err());
}

#[test]
fn spec_json_uses_kebab_case_and_defaults() {
    let spec: SynthSpec = serde_json::from_str(r#"{"points": 5, "frames": 7, "true-code-dim": 1}"#).unwrap();
    assert_eq!(spec, SynthSpec::new(5, 7, 1, 0));
    assert!(serde_json::from_str::<SynthSpec>(r#"{"points": 5, "frames": 7, "true-code-dim": 1, "x": 1}"#).is_err());
}
