use detcgd::linalg::{random_block_spd, weighted_norm_sq};
use detcgd::optimizer::{expected_quadratic_step, run_cgd1, run_cgd2, RunConfig};
use detcgd::problems::{Objective, QuadraticProblem};
use detcgd::report::{aggregate_traces, emit_plot_data, read_plot_data, PlotAxis};
use detcgd::stepsize::{layerwise_stepsize, optimal_stepsize_cgd2};
use detcgd::{BlockDiagMatrix, Error, LayerPartition, LayerSketch, SketchSpec, StepsizeMatrix, Variant};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn quadratic(p: &LayerPartition, seed: u64) -> QuadraticProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = random_block_spd(p, &mut rng);
    let b = (0..p.total_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
    QuadraticProblem::new(a, b).unwrap()
}

fn sketch_strategy() -> impl Strategy<Value = LayerSketch> {
    prop_oneof![
        Just(LayerSketch::Identity),
        Just(LayerSketch::RandK { k: 1 }),
        Just(LayerSketch::RandK { k: 2 }),
        (0.1f64..=1.0).prop_map(|q| LayerSketch::Bernoulli { q }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn trace_invariants(sketch in sketch_strategy(), seed in any::<u64>(), variant in prop_oneof![Just(Variant::Cgd1), Just(Variant::Cgd2)]) {
        let p = LayerPartition::new(vec![2, 3]).unwrap();
        let q = quadratic(&p, seed);
        let spec = SketchSpec::uniform(&p, sketch).unwrap();
        let w = q.smoothness().inverse().unwrap();
        let (d, _) = layerwise_stepsize(variant, &w, q.smoothness(), &spec).unwrap();
        prop_assert!((d.normalized().det_root().unwrap() - 1.0).abs() <= 1e-10);
        let cfg = RunConfig::new(60, seed, variant);
        let run = if variant == Variant::Cgd1 { run_cgd1 } else { run_cgd2 };
        let t = run(&q, &d, &spec, &[1.0; 5], &cfg).unwrap();
        prop_assert_eq!(t.records.len(), 60);
        prop_assert!(t.records.windows(2).all(|w| w[0].coords_cumulative <= w[1].coords_cumulative));
        let mean = t.records.iter().map(|r| r.grad_wnorm2).sum::<f64>() / 60.0;
        prop_assert!((t.summary.g_kd - mean).abs() <= 1e-12 * mean.max(1e-300));
        let min = t.records.iter().map(|r| r.grad_wnorm2).fold(f64::INFINITY, f64::min);
        prop_assert_eq!(t.summary.min_grad_wnorm2, min);
        prop_assert_eq!(&run(&q, &d, &spec, &[1.0; 5], &cfg).unwrap(), &t);
    }
}

#[test]
fn newton_step_solves_a_quadratic() {
    let p = LayerPartition::new(vec![3, 2]).unwrap();
    let q = quadratic(&p, 1);
    let d = StepsizeMatrix::new(q.smoothness().inverse().unwrap()).unwrap();
    let t = run_cgd1(&q, &d, &SketchSpec::identity(&p), &[2.0; 5], &RunConfig::new(2, 0, Variant::Cgd1)).unwrap();
    assert!(t.records[1].grad_eucnorm2 < 1e-20, "{}", t.records[1].grad_eucnorm2);
}

#[test]
fn identity_sketch_with_scalar_stepsize_is_gradient_descent() {
    let p = LayerPartition::single(4);
    let q = quadratic(&p, 2);
    let gamma = 0.5 / q.smoothness().lambda_max();
    let d = StepsizeMatrix::scalar(gamma, &p).unwrap();
    let spec = SketchSpec::identity(&p);
    let cfg = RunConfig::new(30, 3, Variant::Cgd1);
    let t1 = run_cgd1(&q, &d, &spec, &[1.0; 4], &cfg).unwrap();
    let t2 = run_cgd2(&q, &d, &spec, &[1.0; 4], &RunConfig::new(30, 3, Variant::Cgd2)).unwrap();
    assert_eq!(t1, t2);
    let mut x = vec![1.0; 4];
    for r in &t1.records {
        assert!((r.f - q.value(&x)).abs() <= 1e-12 * (1.0 + r.f.abs()));
        let g = q.gradient(&x);
        for (xi, gi) in x.iter_mut().zip(&g) {
            *xi -= gamma * gi;
        }
    }
    for (a, b) in t1.final_x.iter().zip(&x) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn optimal_cgd2_meets_the_descent_bound() {
    let p = LayerPartition::single(4);
    let q = quadratic(&p, 4);
    let spec = SketchSpec::uniform(&p, LayerSketch::RandK { k: 1 }).unwrap();
    let d = optimal_stepsize_cgd2(q.smoothness(), &spec).unwrap();
    let x0 = [1.5, -1.0, 0.5, 2.0];
    let iterations = 40;
    let gap = q.value(&x0) - q.f_inf().unwrap();
    let bound = 2.0 * gap / iterations as f64;
    let dm = d.matrix().to_dense();
    let per_seed: Vec<f64> = (0..1000)
        .map(|s| {
            let t = run_cgd2(&q, &d, &spec, &x0, &RunConfig::new(iterations, s, Variant::Cgd2)).unwrap();
            // the bound is on the unnormalized D-norm
            t.records.iter().map(|r| r.grad_wnorm2).sum::<f64>() * d.det_root() / iterations as f64
        })
        .collect();
    let n = per_seed.len() as f64;
    let mean = per_seed.iter().sum::<f64>() / n;
    let se = (per_seed.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
    assert!(mean <= bound + 3.0 * se, "{mean} > {bound} + 3 * {se}");
    // sanity on the norm convention
    let g0 = q.gradient(&x0);
    let first = run_cgd2(&q, &d, &spec, &x0, &RunConfig::new(1, 0, Variant::Cgd2)).unwrap().records[0].grad_wnorm2;
    assert!((first * d.det_root() - weighted_norm_sq(&g0, &dm).unwrap()).abs() < 1e-10);
}

#[test]
fn aggregate_matches_exact_one_step_expectation() {
    let p = LayerPartition::new(vec![2, 2]).unwrap();
    let q = quadratic(&p, 5);
    let spec = SketchSpec::new(p.clone(), vec![LayerSketch::RandK { k: 1 }, LayerSketch::Bernoulli { q: 0.4 }]).unwrap();
    let (d, _) = layerwise_stepsize(Variant::Cgd1, &q.smoothness().diag_part().inverse().unwrap(), q.smoothness(), &spec)
        .unwrap();
    let x0 = [1.0, -2.0, 0.5, 1.0];
    let traces: Vec<_> = (0..200)
        .map(|s| run_cgd1(&q, &d, &spec, &x0, &RunConfig::new(2, s, Variant::Cgd1)).unwrap())
        .collect();
    let agg = aggregate_traces(&traces).unwrap();
    assert_eq!(agg.runs, 200);
    let outcomes: Vec<_> = spec
        .joint_outcomes()
        .unwrap()
        .into_iter()
        .map(|(s, prob)| (s.to_dense(), prob))
        .collect();
    let exact = expected_quadratic_step(
        &q.matrix().to_dense(),
        q.linear(),
        q.offset(),
        &x0,
        &d.matrix().to_dense(),
        &outcomes,
        Variant::Cgd1,
    );
    let point = agg.points[1];
    assert!((point.f_mean - exact).abs() <= 3.0 * point.f_stderr, "{} vs {exact} (se {})", point.f_mean, point.f_stderr);
    assert_eq!(agg.points[0].f_stderr, 0.0);
}

#[test]
fn single_trace_aggregate_is_the_trace() {
    let p = LayerPartition::single(3);
    let q = quadratic(&p, 6);
    let spec = SketchSpec::uniform(&p, LayerSketch::RandK { k: 1 }).unwrap();
    let (d, _) = layerwise_stepsize(Variant::Cgd1, &BlockDiagMatrix::identity(&p), q.smoothness(), &spec).unwrap();
    let mut cfg = RunConfig::new(25, 1, Variant::Cgd1);
    cfg.record_every = 5;
    let t = run_cgd1(&q, &d, &spec, &[1.0; 3], &cfg).unwrap();
    let agg = aggregate_traces(std::slice::from_ref(&t)).unwrap();
    assert_eq!(agg.points.len(), t.records.len());
    for (pt, r) in agg.points.iter().zip(&t.records) {
        assert_eq!((pt.k, pt.f_mean, pt.grad_wnorm2_mean), (r.k, r.f, r.grad_wnorm2));
        assert_eq!(pt.grad_wnorm2_stderr, 0.0);
    }
    assert_eq!(agg.g_kd_mean, t.summary.g_kd);
    let mut buf = Vec::new();
    emit_plot_data(&agg, PlotAxis::Coordinates, &mut buf).unwrap();
    let rows = read_plot_data(buf.as_slice()).unwrap();
    assert_eq!(rows.len(), t.records.len());
    for (row, r) in rows.iter().zip(&t.records) {
        assert_eq!(row.x, r.coords_cumulative as f64);
    }
}

#[test]
fn oversized_stepsize_is_rejected_or_diverges() {
    let p = LayerPartition::single(3);
    let q = quadratic(&p, 7);
    let spec = SketchSpec::identity(&p);
    let d = StepsizeMatrix::scalar(5.0 / q.smoothness().lambda_max(), &p).unwrap();
    let err = run_cgd1(&q, &d, &spec, &[1.0; 3], &RunConfig::new(10, 0, Variant::Cgd1)).unwrap_err();
    assert!(matches!(err, Error::Infeasible(_)), "{err}");
    let mut cfg = RunConfig::new(10_000, 0, Variant::Cgd1);
    cfg.unsafe_stepsize = true;
    let err = run_cgd1(&q, &d, &spec, &[1.0; 3], &cfg).unwrap_err();
    assert!(matches!(err, Error::Divergence { .. }), "{err}");
}
