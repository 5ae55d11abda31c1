use paul_core::autodiff::Tape;
use paul_core::geometry::{normalize_frame, ObservationFrame, Visibility};
use paul_core::networks::*;
use paul_core::rng::{normal_matrix, seeded};
use paul_core::Matrix;

fn spec(mode: CodeMode) -> ModelSpec {
    let mut s = ModelSpec::new(6, 3, mode, 5);
    s.hidden = vec![10, 7];
    s.lifting_width = 9;
    s
}

fn params(mode: CodeMode, seed: u64) -> ModelParams {
    ModelParams::init(spec(mode), &mut seeded(seed)).unwrap()
}

#[test]
fn plain_and_tape_forward_agree_bitwise() {
    let p = params(CodeMode::FreeCode, 1);
    let mut rng = seeded(2);
    let codes = normal_matrix(&mut rng, 4, 3, 1.0);
    let mut t = Tape::new();
    let bound = p.bind(&mut t, &[]);
    let c = t.constant(codes.clone());
    let dec = decoder_forward(&mut t, &bound, c).unwrap();
    let enc = encoder_forward(&mut t, &bound, dec).unwrap();
    for i in 0..4 {
        let shape = p.decode(codes.row(i)).unwrap();
        assert_eq!(shape.points.as_slice(), t.value(dec).row(i));
        let code = p.encode(&shape.points).unwrap();
        assert_eq!(code.as_slice(), t.value(enc).row(i));
    }
}

fn frame(seed: u64, vis: Visibility) -> paul_core::geometry::NormalizedFrame {
    let w = normal_matrix(&mut seeded(seed), 2, 6, 1.0);
    normalize_frame(&ObservationFrame::new(w, vis, 0)).unwrap()
}

#[test]
fn lifting_matches_tape_and_ignores_occluded_values() {
    let p = params(CodeMode::Lifting, 3);
    let vis = Visibility::new(vec![true, false, true, true, false, true]);
    let f = frame(4, vis.clone());
    let mut t = Tape::new();
    let bound = p.bind(&mut t, &[]);
    let x = t.constant(lifting_input(std::slice::from_ref(&f)));
    let h = lifting_forward(&mut t, &bound, x).unwrap();
    let plain = p.lift(&f).unwrap();
    assert_eq!(plain.as_slice(), t.value(h).as_slice());
    assert_eq!(p.code_for(0, &f).unwrap(), plain);

    let mut g = f.clone();
    g.keypoints[(0, 1)] = 123.0;
    g.keypoints[(1, 4)] = -7.5;
    assert_eq!(p.lift(&g).unwrap(), plain);
    g.keypoints[(0, 0)] += 0.1;
    assert_ne!(p.lift(&g).unwrap(), plain);
}

#[test]
fn parameter_count_matches_layer_widths() {
    let s = spec(CodeMode::FreeCode);
    let mlp = |dims: &[usize]| dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum::<usize>();
    let enc = mlp(&[18, 10, 7, 3]);
    let dec = mlp(&[3, 7, 10, 18]);
    assert_eq!(s.encoder_spec().parameter_count(), enc);
    assert_eq!(s.decoder_spec().parameter_count(), dec);
    assert_eq!(params(CodeMode::FreeCode, 0).parameter_count(), enc + dec + 5 * 3);
    let l = spec(CodeMode::Lifting);
    let lift = mlp(&[18, 9]) + 4 * mlp(&[9, 9]) + mlp(&[9, 3]);
    assert_eq!(params(CodeMode::Lifting, 0).parameter_count(), enc + dec + lift);
    assert_eq!(l.lifting_input_dim(), 18);
}

#[test]
fn initialization_is_seeded() {
    assert_eq!(params(CodeMode::Lifting, 7), params(CodeMode::Lifting, 7));
    assert_ne!(params(CodeMode::Lifting, 7), params(CodeMode::Lifting, 8));
    let p = params(CodeMode::FreeCode, 7);
    assert_eq!(p.codes().unwrap(), &Matrix::zeros(5, 3));
    for a in p.arrays().iter().filter(|a| a.group != ParamGroup::Codes) {
        let (fan_in, fan_out) = if a.value.rows() == 1 {
            let w = p
                .arrays()
                .iter()
                .find(|w| w.name == a.name.replace("bias", "weight"))
                .unwrap();
            (w.value.rows(), w.value.cols())
        } else {
            (a.value.rows(), a.value.cols())
        };
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        assert!(a.value.as_slice().iter().all(|v| v.abs() <= limit), "{}", a.name);
    }
}

#[test]
fn free_code_lookup_checks_range() {
    let p = params(CodeMode::FreeCode, 1);
    let f = frame(1, Visibility::full(6));
    assert!(p.code_for(4, &f).is_ok());
    assert!(p.code_for(5, &f).is_err());
    assert!(p.lift(&f).is_err());
}
