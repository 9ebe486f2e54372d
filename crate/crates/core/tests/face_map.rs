use gesturekit::face_map::*;
use gesturekit::synth::{synthetic_expression_basis, synthetic_templates};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_w(rows: usize, cols: usize, seed: u64) -> TransformMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    TransformMatrix { rows, cols, data: (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect() }
}

/// Templates generated exactly as `basis · W*`.
fn linear_templates(basis: &ExpressionBasis, w: &TransformMatrix) -> BlendshapeTemplates {
    let modes = (0..w.rows)
        .map(|j| {
            let mut d = vec![[0.0; 3]; basis.num_vertices()];
            for p in 0..w.cols {
                for (dv, m) in d.iter_mut().zip(&basis.modes[p]) {
                    for c in 0..3 {
                        dv[c] += w.get(j, p) * m[c];
                    }
                }
            }
            d
        })
        .collect();
    LinearFace::new(basis.neutral.clone(), modes).unwrap()
}

#[test]
fn recovers_exact_linear_transform() {
    let basis = synthetic_expression_basis(1);
    let w_true = random_w(NUM_BLENDSHAPES, basis.num_modes(), 2);
    let templates = linear_templates(&basis, &w_true);
    let rows = default_training_rows(NUM_BLENDSHAPES, 200, 3);
    let (w, info) = solve_transform(&templates, &basis, &rows, DEFAULT_REGULARIZATION).unwrap();
    assert!(!info.rank_deficient);
    let err = w.data.iter().zip(&w_true.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err < 1e-8, "max abs error {err:e}");
}

#[test]
fn identity_basis_gives_identity() {
    let basis = synthetic_expression_basis(4);
    let rows = default_training_rows(basis.num_modes(), 50, 5);
    let (w, _) = solve_transform(&basis, &basis, &rows, DEFAULT_REGULARIZATION).unwrap();
    for j in 0..w.rows {
        for p in 0..w.cols {
            let expected = if j == p { 1.0 } else { 0.0 };
            assert!((w.get(j, p) - expected).abs() < 1e-10, "W[{j},{p}] = {}", w.get(j, p));
        }
    }
}

#[test]
fn zero_weights_give_zero_transform() {
    let basis = synthetic_expression_basis(6);
    let templates = synthetic_templates(&basis, 7);
    let (w, info) = solve_transform(&templates, &basis, &[vec![0.0; NUM_BLENDSHAPES]], DEFAULT_REGULARIZATION).unwrap();
    assert!(info.rank_deficient);
    assert!(w.data.iter().all(|v| *v == 0.0));
}

#[test]
fn solution_is_locally_optimal() {
    let basis = synthetic_expression_basis(8);
    let templates = synthetic_templates(&basis, 9);
    let rows = default_training_rows(NUM_BLENDSHAPES, 200, 10);
    let (w, info) = solve_transform(&templates, &basis, &rows, DEFAULT_REGULARIZATION).unwrap();
    let base = transform_residual(&templates, &basis, &rows, &w).unwrap();
    assert!((base - info.residual).abs() <= 1e-9 * base.max(1e-12));
    assert!(base > 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let mut pert = w.clone();
        for v in &mut pert.data {
            *v += 1e-3 * rng.gen_range(-1.0..1.0);
        }
        let r = transform_residual(&templates, &basis, &rows, &pert).unwrap();
        assert!(r >= base, "{r} < {base}");
    }
}

/// Values on a coarse dyadic grid keep every product and sum exact.
fn dyadic(rng: &mut ChaCha8Rng) -> f64 {
    rng.gen_range(-64i32..64) as f64 / 64.0
}

#[test]
fn synthesis_and_mapping_are_linear() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let basis = synthetic_expression_basis(13);
    let dy = |rng: &mut ChaCha8Rng, n: usize| (0..n).map(|_| dyadic(rng)).collect::<Vec<_>>();
    let w = TransformMatrix { rows: 4, cols: 3, data: dy(&mut rng, 12) };
    for _ in 0..20 {
        let a = dy(&mut rng, 4);
        let b = dy(&mut rng, 4);
        let s = dyadic(&mut rng);
        let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let scaled: Vec<f64> = a.iter().map(|x| s * x).collect();
        let m = map_weights(&w, &[a.clone(), b.clone(), sum, scaled]).unwrap();
        for p in 0..3 {
            assert_eq!(m[2][p], m[0][p] + m[1][p]);
            assert_eq!(m[3][p], s * m[0][p]);
        }
    }
    let zero = synthesize_expr(&basis, &vec![0.0; basis.num_modes()]).unwrap();
    assert_eq!(zero, basis.neutral);
}

#[test]
fn csv_and_container_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let basis = synthetic_expression_basis(14);
    let templates = synthetic_templates(&basis, 15);
    let rows = default_training_rows(NUM_BLENDSHAPES, 3, 16);
    let names: Vec<String> = ARKIT_NAMES.iter().map(|s| s.to_string()).collect();
    let path = dir.path().join("weights.csv");
    write_weight_csv(&path, &names, &rows).unwrap();
    let (n2, r2) = read_weight_csv(&path).unwrap();
    assert_eq!(n2, names);
    assert_eq!(r2, rows);
    let c = templates.to_container("blendshape_templates");
    c.write(&dir.path().join("t.json")).unwrap();
    let back = LinearFace::from_container(&gesturekit::container::Container::read(&dir.path().join("t.json")).unwrap(), "blendshape_templates").unwrap();
    assert_eq!(back, templates);
    let (w, _) = solve_transform(&templates, &basis, &rows, DEFAULT_REGULARIZATION).unwrap();
    assert_eq!(TransformMatrix::from_container(&w.to_container()).unwrap(), w);
    assert!(LinearFace::from_container(&c, "expression_basis").is_err());
}
