use paul_core::autodiff::Tape;
use paul_core::data::random_rotation;
use paul_core::linalg::sym_eigenvalues3;
use paul_core::objectives::*;
use paul_core::rng::{normal_matrix, seeded};
use paul_core::Matrix;

#[test]
fn regularizer_examples() {
    let mut t = Tape::new();
    let zero = t.leaf(Matrix::zeros(1, 4));
    let w = t.leaf(Matrix::zeros(3, 2));
    let r = reg_loss(&mut t, zero, &[w]).unwrap();
    assert_eq!(t.scalar(r), 0.0);

    let mut t = Tape::new();
    let ones = t.leaf(Matrix::filled(1, 4, 1.0));
    let w = t.leaf(Matrix::zeros(3, 2));
    let r = reg_loss(&mut t, ones, &[w]).unwrap();
    assert!((t.scalar(r) - 0.04).abs() <= 1e-15);
}

#[test]
fn regularizer_gradient_is_linear_in_its_inputs() {
    let mut rng = seeded(1);
    let phi = normal_matrix(&mut rng, 2, 4, 1.0);
    let theta = normal_matrix(&mut rng, 3, 5, 1.0);
    let mut t = Tape::new();
    let p = t.leaf(phi.clone());
    let w = t.leaf(theta.clone());
    let r = reg_loss(&mut t, p, &[w]).unwrap();
    let expected = 0.01 * phi.frobenius_sq() + 1e-4 * theta.frobenius_sq();
    assert!((t.scalar(r) - expected).abs() <= 1e-12);
    let g = t.backward(r).unwrap();
    assert!(g.wrt(&t, p).max_abs_diff(&phi.scaled(0.02)) <= 1e-15);
    assert!(g.wrt(&t, w).max_abs_diff(&theta.scaled(2e-4)) <= 1e-15);
}

#[test]
fn reconstruction_losses_match_the_direct_formula() {
    let mut rng = seeded(2);
    for squared in [false, true] {
        let shape = normal_matrix(&mut rng, 3, 7, 1.0);
        let rot = random_rotation(&mut rng);
        let cam = normal_matrix(&mut rng, 3, 7, 1.0);
        let mut t = Tape::new();
        let s = t.leaf(shape.clone());
        let r = t.constant(rot.matrix().clone());
        let c = t.constant(cam.clone());
        let ae = recon_ae_loss(&mut t, s, r, c, squared).unwrap();
        let ad = recon_ad_loss(&mut t, s, r, c, squared).unwrap();
        let target = rot.matrix().transpose().matmul(&cam).unwrap();
        let direct = shape.zip_map(&target, |a, b| a - b).unwrap().frobenius_sq();
        let direct = if squared { direct } else { direct.sqrt() };
        assert!((t.scalar(ae) - direct).abs() <= 1e-12);
        assert_eq!(t.scalar(ae), t.scalar(ad));
        if !squared {
            assert!((recon_value(&shape, rot.matrix(), &cam) - direct).abs() <= 1e-12);
        }
    }
}

#[test]
fn perfect_shape_has_zero_loss() {
    let mut rng = seeded(3);
    let rot = random_rotation(&mut rng);
    let shape = normal_matrix(&mut rng, 3, 6, 1.0);
    let cam = rot.matrix().matmul(&shape).unwrap();
    let mut t = Tape::new();
    let s = t.leaf(shape);
    let r = t.constant(rot.matrix().clone());
    let c = t.constant(cam);
    let l = recon_ae_loss(&mut t, s, r, c, false).unwrap();
    assert!(t.scalar(l) <= 1e-14);
    let g = t.backward(l).unwrap();
    assert!(g.wrt(&t, s).is_finite());
}

#[test]
fn occluded_losses_equal_plain_losses() {
    let mut rng = seeded(4);
    let a = normal_matrix(&mut rng, 3, 5, 1.0);
    let b = normal_matrix(&mut rng, 3, 5, 1.0);
    let rot = random_rotation(&mut rng);
    let cam = normal_matrix(&mut rng, 3, 5, 1.0);
    let mut t = Tape::new();
    let (av, bv) = (t.leaf(a), t.leaf(b));
    let r = t.constant(rot.matrix().clone());
    let c = t.constant(cam);
    let (ae, ad) = recon_losses_occluded(&mut t, av, bv, r, c, false).unwrap();
    let ae2 = recon_ae_loss(&mut t, av, r, c, false).unwrap();
    let ad2 = recon_ad_loss(&mut t, bv, r, c, false).unwrap();
    assert_eq!(t.scalar(ae), t.scalar(ae2));
    assert_eq!(t.scalar(ad), t.scalar(ad2));
}

#[test]
fn target_is_unchanged_by_a_common_rotation() {
    let mut rng = seeded(5);
    let rot = random_rotation(&mut rng);
    let q = random_rotation(&mut rng);
    let cam = normal_matrix(&mut rng, 3, 8, 1.0);
    let target = rot.matrix().transpose().matmul(&cam).unwrap();
    let qr = q.compose(&rot);
    let qcam = q.matrix().matmul(&cam).unwrap();
    let moved = qr.matrix().transpose().matmul(&qcam).unwrap();
    assert!(moved.max_abs_diff(&target) <= 1e-14);
}

fn nuclear(s: &Matrix) -> f64 {
    let mut t = Tape::new();
    let v = t.leaf(s.clone());
    let n = nuclear_norm_loss(&mut t, v).unwrap();
    t.scalar(n)
}

#[test]
fn nuclear_norm_examples() {
    assert_eq!(nuclear(&Matrix::zeros(3, 5)), 0.0);
    let id = Matrix::from_fn(3, 5, |r, c| if r == c { 1.0 } else { 0.0 });
    assert!((nuclear(&id) - 3.0).abs() <= 1e-12);
}

#[test]
fn nuclear_norm_matches_eigenvalues_and_is_rotation_invariant() {
    let mut rng = seeded(6);
    for _ in 0..50 {
        let s = normal_matrix(&mut rng, 3, 9, 1.0);
        let gram = s.matmul(&s.transpose()).unwrap();
        let oracle: f64 = sym_eigenvalues3(&gram).iter().map(|l| l.max(0.0).sqrt()).sum();
        let n = nuclear(&s);
        assert!((n - oracle).abs() <= 1e-10, "{n} vs {oracle}");
        let q = random_rotation(&mut rng);
        let qs = q.matrix().matmul(&s).unwrap();
        assert!((nuclear(&qs) - n).abs() <= 1e-10);
    }
}
