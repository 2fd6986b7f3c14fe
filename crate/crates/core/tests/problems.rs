use detcgd::distributed::estimate_f_inf;
use detcgd::linalg::{random_spd, weighted_norm_sq};
use detcgd::problems::{parse_libsvm, write_libsvm, Dataset, LogisticProblem, Objective, QuadraticProblem, SyntheticSpec};
use detcgd::{BlockDiagMatrix, LayerPartition, SpdMatrix};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn synthetic(samples: usize, dim: usize, seed: u64) -> Dataset {
    SyntheticSpec {
        samples,
        dim,
        flip_prob: 0.1,
        feature_spread: 1.0,
        seed,
    }
    .generate()
    .unwrap()
}

fn random_point(d: usize, rng: &mut ChaCha8Rng, scale: f64) -> Vec<f64> {
    (0..d).map(|_| rng.random_range(-scale..scale)).collect()
}

fn check_finite_differences(p: &dyn Objective, rng: &mut ChaCha8Rng) {
    let d = p.dim();
    let h = 1e-5;
    let x = random_point(d, rng, 2.0);
    let g = p.gradient(&x);
    for _ in 0..5 {
        let u = random_point(d, rng, 1.0);
        let plus: Vec<f64> = x.iter().zip(&u).map(|(a, b)| a + h * b).collect();
        let minus: Vec<f64> = x.iter().zip(&u).map(|(a, b)| a - h * b).collect();
        let fd = (p.value(&plus) - p.value(&minus)) / (2.0 * h);
        let exact: f64 = g.iter().zip(&u).map(|(a, b)| a * b).sum();
        assert!((fd - exact).abs() <= 1e-4 * exact.abs().max(1.0), "{fd} vs {exact}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn logistic_gradient_matches_finite_differences(
        samples in 1usize..40,
        dim in 1usize..8,
        layers in 1usize..3,
        lambda in 0.0f64..1.0,
        seed in any::<u64>(),
    ) {
        let layers = layers.min(dim);
        let p = LogisticProblem::new(synthetic(samples, dim, seed), lambda, &LayerPartition::even(dim, layers).unwrap()).unwrap();
        check_finite_differences(&p, &mut ChaCha8Rng::seed_from_u64(seed ^ 1));
    }

    #[test]
    fn quadratic_gradient_matches_finite_differences(dim in 1usize..8, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_spd(dim, &mut rng);
        let b = random_point(dim, &mut rng, 1.0);
        let p = QuadraticProblem::from_dense(a, b).unwrap();
        check_finite_differences(&p, &mut rng);
    }

    #[test]
    fn quadratic_gradient_gap_identity(dim in 1usize..8, seed in any::<u64>()) {
        // |grad f|^2_{A^{-1}} = 2 (f - f^inf) holds with equality when L = A
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_spd(dim, &mut rng);
        let b = random_point(dim, &mut rng, 1.0);
        let p = QuadraticProblem::from_dense(a.clone(), b).unwrap();
        let x = random_point(dim, &mut rng, 3.0);
        let lhs = weighted_norm_sq(&p.gradient(&x), &a.inverse().unwrap()).unwrap();
        let rhs = 2.0 * (p.value(&x) - p.f_inf().unwrap());
        prop_assert!((lhs - rhs).abs() <= 1e-8 * rhs.abs().max(1.0), "{lhs} vs {rhs}");
        // the descent lemma is tight for quadratics
        let u = random_point(dim, &mut rng, 1.0);
        let xu: Vec<f64> = x.iter().zip(&u).map(|(a, b)| a + b).collect();
        let g: f64 = p.gradient(&x).iter().zip(&u).map(|(a, b)| a * b).sum();
        let gap = p.value(&xu) - p.value(&x) - g;
        prop_assert!((gap - 0.5 * weighted_norm_sq(&u, &a).unwrap()).abs() <= 1e-10 * (1.0 + gap.abs()));
    }

    #[test]
    fn libsvm_round_trip(samples in 1usize..20, dim in 1usize..10, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let features = DMatrix::from_fn(samples, dim, |_, _| {
            if rng.random_bool(0.3) { 0.0 } else { rng.random_range(-5.0..5.0) }
        });
        let labels = (0..samples).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
        let data = Dataset::new(features, labels).unwrap();
        let mut buf = Vec::new();
        write_libsvm(&data, &mut buf).unwrap();
        let back = parse_libsvm(buf.as_slice(), Some(dim)).unwrap();
        prop_assert_eq!(back, data);
    }
}

#[test]
fn hessian_is_dominated_by_smoothness() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for (dim, layers) in [(6, 1), (6, 2), (9, 3)] {
        let p = LogisticProblem::new(synthetic(60, dim, dim as u64), 0.1, &LayerPartition::even(dim, layers).unwrap())
            .unwrap();
        let l = p.smoothness().to_dense();
        for _ in 0..100 {
            let x = random_point(dim, &mut rng, 3.0);
            let h = p.hessian(&x);
            let h = (&h + h.transpose()) * 0.5;
            let gap = l.as_matrix() - h;
            let min = nalgebra::SymmetricEigen::new(gap).eigenvalues.min();
            assert!(min >= -1e-8, "d = {dim}, l = {layers}: {min}");
        }
    }
}

#[test]
fn logistic_smoothness_for_single_sample() {
    let data = Dataset::new(DMatrix::from_row_slice(1, 2, &[2.0, 0.0]), vec![1.0]).unwrap();
    let p = LogisticProblem::new(data, 0.1, &LayerPartition::single(2)).unwrap();
    let l = p.smoothness().to_dense();
    assert!((l.get(0, 0) - 1.2).abs() < 1e-15);
    assert!((l.get(1, 1) - 0.2).abs() < 1e-15);
    assert_eq!(l.get(0, 1), 0.0);
}

#[test]
fn logistic_at_origin() {
    let data = synthetic(30, 4, 2);
    let p = LogisticProblem::new(data.clone(), 0.3, &LayerPartition::single(4)).unwrap();
    let x = vec![0.0; 4];
    assert!((p.value(&x) - 2f64.ln()).abs() < 1e-15);
    let g = p.gradient(&x);
    for (j, gj) in g.iter().enumerate() {
        let want: f64 = -(0..data.len())
            .map(|i| data.labels()[i] * data.features()[(i, j)] / 2.0)
            .sum::<f64>()
            / data.len() as f64;
        assert!((gj - want).abs() < 1e-14);
    }
}

#[test]
fn libsvm_examples() {
    let d = parse_libsvm("+1 1:0.5 3:2\n".as_bytes(), Some(3)).unwrap();
    assert_eq!(d.features().row(0).iter().copied().collect::<Vec<_>>(), vec![0.5, 0.0, 2.0]);
    assert_eq!(d.labels(), &[1.0]);
    assert_eq!(parse_libsvm("0 2:1\n".as_bytes(), None).unwrap().labels(), &[-1.0]);
    assert_eq!(parse_libsvm("2 1:1\n1 1:2\n".as_bytes(), None).unwrap().labels(), &[-1.0, 1.0]);
    assert!(parse_libsvm("1 3:1 2:1\n".as_bytes(), None).is_err());
    assert!(parse_libsvm("5 1:1\n".as_bytes(), None).is_err());
    assert!(parse_libsvm("1 1:x\n".as_bytes(), None).is_err());
}

#[test]
fn quadratic_hand_example() {
    let a = BlockDiagMatrix::from_diagonal(&LayerPartition::single(2), &[2.0, 8.0]).unwrap();
    let p = QuadraticProblem::new(a, vec![2.0, -8.0]).unwrap();
    for (m, want) in p.minimizer().iter().zip([-1.0, 1.0]) {
        assert!((m - want).abs() < 1e-14);
    }
    assert!((p.f_inf().unwrap() + 5.0).abs() < 1e-14);
}

#[test]
fn f_inf_estimates() {
    let a = random_spd(5, &mut ChaCha8Rng::seed_from_u64(4));
    let center = vec![1.0, -2.0, 0.5, 3.0, -1.0];
    let q = QuadraticProblem::centered(BlockDiagMatrix::from(a.clone()), &center, 0.0).unwrap();
    let shifted = QuadraticProblem::centered(BlockDiagMatrix::from(a), &center, 7.25).unwrap();
    let x0 = vec![0.0; 5];
    let cond = q.smoothness().lambda_max() / q.smoothness().lambda_min();
    let budget = (40.0 * cond) as usize;
    let base = estimate_f_inf(&q, budget, &x0).unwrap();
    assert!(base.abs() < 1e-6, "{base}");
    let moved = estimate_f_inf(&shifted, budget, &x0).unwrap();
    assert!((moved - base - 7.25).abs() < 1e-9);

    let p = LogisticProblem::new(synthetic(40, 5, 12), 0.1, &LayerPartition::single(5)).unwrap();
    let short = estimate_f_inf(&p, 2_000, &x0).unwrap();
    let long = estimate_f_inf(&p, 20_000, &x0).unwrap();
    assert!(long <= short);
    assert!(short - long < 1e-4, "{short} vs {long}");
}

#[test]
fn smoothness_accepts_partition_of_full_estimate() {
    let p = LogisticProblem::new(synthetic(50, 6, 3), 0.1, &LayerPartition::new(vec![2, 4]).unwrap()).unwrap();
    let full: &SpdMatrix = p.full_smoothness();
    let block = p.smoothness().to_dense();
    assert!(p.inflation() >= 1.0);
    assert!(detcgd::linalg::loewner_leq(full, &block, 1e-10).unwrap());
}
