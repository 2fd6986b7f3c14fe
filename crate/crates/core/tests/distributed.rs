use detcgd::distributed::{
    dcgd_gamma, free_compression_report, run_dist_cgd1, run_dist_cgd2, run_distributed, FederatedProblem, SmoothnessMode,
};
use detcgd::linalg::{random_block_spd, random_spd};
use nalgebra::DMatrix;
use detcgd::optimizer::{run_cgd1, RunConfig};
use detcgd::problems::{LogisticProblem, Objective, QuadraticProblem, SyntheticSpec};
use detcgd::report::aggregate_traces;
use detcgd::stepsize::{calibrate_scaling, distributed_feasibility, lambda_for, Calibration};
use detcgd::{BlockDiagMatrix, LayerPartition, LayerSketch, SketchSpec, SpdMatrix, StepsizeMatrix, Variant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Quadratics {
    fed: FederatedProblem,
    clients: Vec<BlockDiagMatrix>,
}

/// Clients `1/2 (x - c_i)^T A_i (x - c_i) + m_i` with exactly known lower bounds.
fn quadratics(p: &LayerPartition, n: usize, spread: f64, seed: u64) -> Quadratics {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = p.total_dim();
    let mut objectives: Vec<Box<dyn Objective>> = Vec::new();
    let mut mats = Vec::new();
    let mut client_f_inf = Vec::new();
    let mut b = vec![0.0; d];
    let mut c = 0.0;
    for _ in 0..n {
        let a = random_block_spd(p, &mut rng);
        let center: Vec<f64> = (0..d).map(|_| rng.random_range(-spread..=spread)).collect();
        let m = rng.random_range(-1.0..1.0);
        let ac = a.apply(&center).unwrap();
        for (bj, v) in b.iter_mut().zip(&ac) {
            *bj -= v / n as f64;
        }
        c += (0.5 * ac.iter().zip(&center).map(|(x, y)| x * y).sum::<f64>() + m) / n as f64;
        objectives.push(Box::new(QuadraticProblem::centered(a.clone(), &center, m).unwrap()));
        mats.push(a);
        client_f_inf.push(m);
    }
    let mean = QuadraticProblem::with_offset(BlockDiagMatrix::mean(&mats).unwrap(), b, c).unwrap();
    let fed = FederatedProblem::with_known_bounds(objectives, mean.f_inf().unwrap(), client_f_inf).unwrap();
    Quadratics { fed, clients: mats }
}

fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// min over k of the seed-average weighted norm, and that point's standard error.
fn min_expected_wnorm(traces: &[detcgd::optimizer::RunTrace]) -> (f64, f64) {
    let agg = aggregate_traces(traces).unwrap();
    agg.points
        .iter()
        .map(|p| (p.grad_wnorm2_mean, p.grad_wnorm2_stderr))
        .fold((f64::INFINITY, 0.0), |acc, v| if v.0 < acc.0 { v } else { acc })
}

#[test]
fn distributed_bound_holds_in_expectation() {
    let p = LayerPartition::new(vec![2, 2]).unwrap();
    let n = 4;
    let q = quadratics(&p, n, 1.0, 31);
    let spec = SketchSpec::uniform(&p, LayerSketch::RandK { k: 1 }).unwrap();
    let x0 = vec![2.0; 4];
    let iterations = 150;
    let ctx = q.fed.context(iterations, 1e-2, &x0).unwrap();
    assert!(ctx.delta_inf > 0.0);
    let w = q.fed.smoothness().diag_part().inverse().unwrap();
    for variant in [Variant::Cgd1, Variant::Cgd2] {
        let d = calibrate_scaling(&w, q.fed.smoothness(), &spec, Calibration::Distributed(&ctx, variant)).unwrap();
        let lam = lambda_for(variant, &d, q.fed.smoothness(), &q.clients, &spec).unwrap();
        let det = d.det_root();
        let k = iterations as f64;
        let bound = 2.0 * (1.0 + lam / n as f64).powf(k) * ctx.f0_gap / (det * k)
            + 2.0 * lam * ctx.delta_inf / (det * n as f64);
        let traces: Vec<_> = (0..300)
            .map(|s| {
                run_distributed(&q.fed, &d, &spec, &x0, &RunConfig::new(iterations, s, variant))
                    .unwrap()
                    .trace
            })
            .collect();
        let (min_mean, se) = min_expected_wnorm(&traces);
        assert!(min_mean - 3.0 * se <= bound, "{variant}: {min_mean} (se {se}) > {bound}");
    }
}

#[test]
fn feasible_stepsize_reaches_target_accuracy() {
    // well-conditioned clients sharing one minimizer, so Delta^inf = 0
    let p = LayerPartition::single(3);
    let n = 5;
    let center = [0.5, -0.5, 0.25];
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mats: Vec<_> = (0..n)
        .map(|_| {
            let g = random_spd(3, &mut rng);
            let g = g.scaled(1.0 / g.lambda_max()).unwrap();
            BlockDiagMatrix::from(SpdMatrix::new(g.as_matrix() + DMatrix::identity(3, 3)).unwrap())
        })
        .collect();
    let objectives: Vec<Box<dyn Objective>> = mats
        .iter()
        .map(|a| Box::new(QuadraticProblem::centered(a.clone(), &center, 0.0).unwrap()) as Box<dyn Objective>)
        .collect();
    let fed = FederatedProblem::with_known_bounds(objectives, 0.0, vec![0.0; n]).unwrap();
    let spec = SketchSpec::uniform(&p, LayerSketch::RandK { k: 1 }).unwrap();
    let x0 = vec![0.0; 3];
    let eps2 = 0.05;
    let w = fed.smoothness().inverse().unwrap();
    // the scaling depends on K through n/K; iterate to a consistent pair
    let mut iterations = 10;
    let mut found = None;
    for _ in 0..60 {
        let ctx = fed.context(iterations, eps2, &x0).unwrap();
        let d = calibrate_scaling(&w, fed.smoothness(), &spec, Calibration::Distributed(&ctx, Variant::Cgd1)).unwrap();
        let v = distributed_feasibility(&d, fed.smoothness(), &ctx, &spec, Variant::Cgd1).unwrap();
        if v.feasible {
            found = Some(d);
            break;
        }
        iterations = (v.iterations_required.ceil() as usize).max(iterations + 1);
    }
    let d = found.expect("a feasible (D, K) pair");
    assert!(iterations < 100_000, "K = {iterations}");
    let traces: Vec<_> = (0..200)
        .map(|s| run_dist_cgd1(&fed, &d, &spec, &x0, &RunConfig::new(iterations, s, Variant::Cgd1)).unwrap().trace)
        .collect();
    let (min_mean, se) = min_expected_wnorm(&traces);
    assert!(min_mean - 3.0 * se <= eps2, "{min_mean} (se {se}) at K = {iterations}");
}

#[test]
fn rand_k_ledger_is_exact() {
    let p = LayerPartition::new(vec![3, 5]).unwrap();
    let q = quadratics(&p, 3, 1.0, 2);
    let spec = SketchSpec::new(p, vec![LayerSketch::RandK { k: 2 }, LayerSketch::RandK { k: 3 }]).unwrap();
    let d = StepsizeMatrix::new(q.fed.smoothness().inverse().unwrap().scaled(0.1).unwrap()).unwrap();
    let run = run_dist_cgd1(&q.fed, &d, &spec, &[0.5; 8], &RunConfig::new(50, 4, Variant::Cgd1)).unwrap();
    for k in 0..50 {
        for c in 0..3 {
            assert_eq!(run.ledger.get(k, c), 5);
        }
    }
    assert_eq!(run.ledger.total(), 50 * 3 * 5);
    assert_eq!(run.ledger.client_totals().iter().sum::<u64>(), run.ledger.total());
}

#[test]
fn bernoulli_ledger_matches_expected_coordinates() {
    let p = LayerPartition::new(vec![2, 4]).unwrap();
    let n = 2;
    let q = quadratics(&p, n, 1.0, 5);
    let qs = [0.3, 0.7];
    let spec = SketchSpec::new(p, qs.iter().map(|&q| LayerSketch::Bernoulli { q }).collect()).unwrap();
    let d = StepsizeMatrix::new(q.fed.smoothness().inverse().unwrap().scaled(0.01).unwrap()).unwrap();
    let iterations = 10_000;
    let run = run_dist_cgd2(&q.fed, &d, &spec, &[0.1; 6], &RunConfig::new(iterations, 9, Variant::Cgd2)).unwrap();
    let samples: Vec<f64> = (0..iterations)
        .flat_map(|k| (0..n).map(move |c| (k, c)))
        .map(|(k, c)| run.ledger.get(k, c) as f64)
        .collect();
    let expected = 0.3 * 2.0 + 0.7 * 4.0;
    let sigma = (0.3f64 * 0.7 * 4.0 + 0.7 * 0.3 * 16.0).sqrt();
    let (mean, _) = mean_and_stderr(&samples);
    assert!((mean - expected).abs() <= 3.0 * sigma / (samples.len() as f64).sqrt(), "{mean} vs {expected}");
    let sum: u64 = (0..iterations).map(|k| run.ledger.iteration_total(k)).sum();
    assert_eq!(sum, run.ledger.total());
}

#[test]
fn identical_clients_have_no_heterogeneity() {
    let data = SyntheticSpec {
        samples: 40,
        dim: 4,
        flip_prob: 0.1,
        feature_spread: 1.0,
        seed: 3,
    }
    .generate()
    .unwrap();
    let p = LayerPartition::single(4);
    let clients: Vec<Box<dyn Objective>> = (0..3)
        .map(|_| Box::new(LogisticProblem::new(data.clone(), 0.1, &p).unwrap()) as Box<dyn Objective>)
        .collect();
    let fed = FederatedProblem::with_estimated_bounds(clients, 2_000).unwrap();
    assert!(fed.delta_inf() <= 1e-8, "{}", fed.delta_inf());
}

#[test]
fn single_client_matches_single_node() {
    let p = LayerPartition::new(vec![2, 3]).unwrap();
    let q = quadratics(&p, 1, 1.0, 12);
    let spec = SketchSpec::uniform(&p, LayerSketch::RandK { k: 1 }).unwrap();
    let d = calibrate_scaling(
        &q.fed.smoothness().inverse().unwrap(),
        q.fed.smoothness(),
        &spec,
        Calibration::SingleNode(Variant::Cgd1),
    )
    .unwrap();
    let cfg = RunConfig::new(200, 77, Variant::Cgd1);
    let dist = run_dist_cgd1(&q.fed, &d, &spec, &[1.0; 5], &cfg).unwrap();
    let single = run_cgd1(q.fed.clients()[0].as_ref(), &d, &spec, &[1.0; 5], &cfg).unwrap();
    assert_eq!(dist.trace, single);
}

#[test]
fn diagonal_stepsizes_make_the_variants_coincide() {
    let p = LayerPartition::new(vec![3, 3]).unwrap();
    let q = quadratics(&p, 3, 1.0, 13);
    let spec = SketchSpec::uniform(&p, LayerSketch::RandK { k: 2 }).unwrap();
    let d = StepsizeMatrix::new(q.fed.smoothness().diag_part().inverse().unwrap().scaled(0.2).unwrap()).unwrap();
    let x0 = [0.3; 6];
    for seed in 0..5 {
        let a = run_dist_cgd1(&q.fed, &d, &spec, &x0, &RunConfig::new(100, seed, Variant::Cgd1)).unwrap();
        let b = run_dist_cgd2(&q.fed, &d, &spec, &x0, &RunConfig::new(100, seed, Variant::Cgd2)).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.ledger, b.ledger);
    }
}

#[test]
fn isotropic_matrix_mode_equals_scalar_mode() {
    let p = LayerPartition::single(4);
    let mut objectives: Vec<Box<dyn Objective>> = Vec::new();
    for (i, a) in [1.0, 2.5, 4.0].into_iter().enumerate() {
        let mat = BlockDiagMatrix::from_diagonal(&p, &[a; 4]).unwrap();
        objectives.push(Box::new(QuadraticProblem::centered(mat, &[i as f64; 4], 0.0).unwrap()));
    }
    let fed = FederatedProblem::with_estimated_bounds(objectives, 5_000).unwrap();
    let spec = SketchSpec::uniform(&p, LayerSketch::RandK { k: 1 }).unwrap();
    assert!((spec.omega() - 3.0).abs() < 1e-12);
    for iterations in [10, 1_000, 100_000] {
        let ctx = fed.context(iterations, 1e-3, &[0.0; 4]).unwrap();
        let scalar = dcgd_gamma(&fed, &spec, &ctx, SmoothnessMode::Scalar).unwrap();
        let matrix = dcgd_gamma(&fed, &spec, &ctx, SmoothnessMode::Matrix).unwrap();
        assert!((scalar - matrix).abs() <= 1e-9 * scalar, "K = {iterations}: {scalar} vs {matrix}");
    }
}

#[test]
fn free_compression_cases() {
    let p = LayerPartition::new(vec![3, 3]).unwrap();
    let l = random_block_spd(&p, &mut ChaCha8Rng::seed_from_u64(6));
    let none = free_compression_report(&l, &[1.0, 1.0]).unwrap();
    assert_eq!(none.expected_coordinates, 6.0);
    assert!((none.complexity - none.uncompressed).abs() <= 1e-12 * none.uncompressed);
    let equal = free_compression_report(&l, &[0.4, 0.4]).unwrap();
    assert!(equal.equal_q);
    assert!((equal.complexity - equal.uncompressed).abs() <= 1e-12 * equal.uncompressed);
    let unequal = free_compression_report(&l, &[0.2, 0.8]).unwrap();
    assert!(!unequal.equal_q);
    assert!(unequal.complexity > unequal.uncompressed * (1.0 + 1e-6));
    assert!(free_compression_report(&l, &[0.0, 1.0]).is_err());
    assert!(free_compression_report(&l, &[0.5]).is_err());
}
