//! In-process simulation of `n` clients and a server running the
//! distributed det-CGD variants and scalar-stepsize DCGD baselines.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{BlockDiagMatrix, LayerPartition};
use crate::optimizer::{require_dld, run_engine, CommLedger, RunConfig, RunTrace, Variant};
use crate::problems::{Dataset, LogisticProblem, Objective};
use crate::sketch::SketchSpec;
use crate::stepsize::{calibrate_scaling, scalar_dcgd_stepsize, Calibration, DistributedContext, StepsizeMatrix};

/// Default gradient-descent budget for lower-bound estimation.
pub const DEFAULT_F_INF_BUDGET: usize = 10_000;

/// `f = (1/n) sum f_i` with client smoothness matrices `L_i` and
/// `L = (1/n) sum L_i`.
pub struct FederatedProblem {
    clients: Vec<Box<dyn Objective>>,
    smoothness: BlockDiagMatrix,
    f_inf: f64,
    client_f_inf: Vec<f64>,
    delta_inf: f64,
}

impl std::fmt::Debug for FederatedProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FederatedProblem")
            .field("clients", &self.clients.len())
            .field("f_inf", &self.f_inf)
            .field("client_f_inf", &self.client_f_inf)
            .field("delta_inf", &self.delta_inf)
            .finish()
    }
}

fn clamp_gap(raw: f64) -> f64 {
    if raw < 0.0 {
        log::warn!("negative heterogeneity gap {raw:e} clamped to 0");
        0.0
    } else {
        raw
    }
}

impl FederatedProblem {
    fn assemble(clients: Vec<Box<dyn Objective>>) -> Result<Self> {
        let first = clients
            .first()
            .ok_or_else(|| Error::InvalidArgument("client count must be >= 1".into()))?;
        let d = first.dim();
        for c in &clients {
            if c.dim() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: c.dim(),
                });
            }
        }
        let ls: Vec<BlockDiagMatrix> = clients.iter().map(|c| c.smoothness().clone()).collect();
        let smoothness = BlockDiagMatrix::mean(&ls)?;
        let n = clients.len();
        Ok(FederatedProblem {
            clients,
            smoothness,
            f_inf: f64::NAN,
            client_f_inf: vec![f64::NAN; n],
            delta_inf: f64::NAN,
        })
    }

    /// Lower bounds supplied by the caller.
    pub fn with_known_bounds(clients: Vec<Box<dyn Objective>>, f_inf: f64, client_f_inf: Vec<f64>) -> Result<Self> {
        let mut fed = Self::assemble(clients)?;
        if client_f_inf.len() != fed.n() {
            return Err(Error::DimensionMismatch {
                expected: fed.n(),
                found: client_f_inf.len(),
            });
        }
        fed.set_bounds(f_inf, client_f_inf);
        Ok(fed)
    }

    /// Lower bounds estimated by [`estimate_f_inf`] from the origin, for `f`
    /// and every `f_i`.
    pub fn with_estimated_bounds(clients: Vec<Box<dyn Objective>>, budget: usize) -> Result<Self> {
        let mut fed = Self::assemble(clients)?;
        let x0 = vec![0.0; fed.dim()];
        let client_f_inf = fed
            .clients
            .iter()
            .map(|c| estimate_f_inf(c.as_ref(), budget, &x0))
            .collect::<Result<Vec<_>>>()?;
        let f_inf = estimate_f_inf(&MeanObjective(&fed), budget, &x0)?;
        fed.set_bounds(f_inf, client_f_inf);
        Ok(fed)
    }

    /// Splits `data` across `n` clients (see [`Dataset::split`]) and builds
    /// one regularized logistic objective per shard.
    pub fn logistic(
        data: &Dataset,
        n: usize,
        split_seed: u64,
        lambda: f64,
        partition: &LayerPartition,
        budget: usize,
    ) -> Result<Self> {
        let clients = data
            .split(n, split_seed)?
            .into_iter()
            .map(|shard| Ok(Box::new(LogisticProblem::new(shard, lambda, partition)?) as Box<dyn Objective>))
            .collect::<Result<Vec<_>>>()?;
        Self::with_estimated_bounds(clients, budget)
    }

    fn set_bounds(&mut self, f_inf: f64, client_f_inf: Vec<f64>) {
        let mean = client_f_inf.iter().sum::<f64>() / client_f_inf.len() as f64;
        self.delta_inf = clamp_gap(f_inf - mean);
        self.f_inf = f_inf;
        self.client_f_inf = client_f_inf;
    }

    pub fn n(&self) -> usize {
        self.clients.len()
    }

    pub fn clients(&self) -> &[Box<dyn Objective>] {
        &self.clients
    }

    pub fn client_smoothness(&self) -> Vec<BlockDiagMatrix> {
        self.clients.iter().map(|c| c.smoothness().clone()).collect()
    }

    pub fn f_inf_estimate(&self) -> f64 {
        self.f_inf
    }

    pub fn client_f_inf_estimates(&self) -> &[f64] {
        &self.client_f_inf
    }

    pub fn delta_inf(&self) -> f64 {
        self.delta_inf
    }

    /// Inputs of the distributed feasibility conditions for a run from `x0`.
    pub fn context(&self, iterations: usize, eps2: f64, x0: &[f64]) -> Result<DistributedContext> {
        DistributedContext::new(
            self.client_smoothness(),
            iterations,
            eps2,
            self.delta_inf,
            self.value(x0) - self.f_inf,
        )
    }
}

/// Mean objective view used before the bounds are known.
struct MeanObjective<'a>(&'a FederatedProblem);

impl Objective for MeanObjective<'_> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.0.value(x)
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        self.0.gradient(x)
    }

    fn smoothness(&self) -> &BlockDiagMatrix {
        &self.0.smoothness
    }
}

impl Objective for FederatedProblem {
    fn dim(&self) -> usize {
        self.clients[0].dim()
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.clients.iter().map(|c| c.value(x)).sum::<f64>() / self.n() as f64
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim()];
        for c in &self.clients {
            for (a, b) in g.iter_mut().zip(c.gradient(x)) {
                *a += b;
            }
        }
        let n = self.n() as f64;
        g.iter_mut().for_each(|v| *v /= n);
        g
    }

    fn smoothness(&self) -> &BlockDiagMatrix {
        &self.smoothness
    }

    fn f_inf(&self) -> Option<f64> {
        Some(self.f_inf).filter(|v| v.is_finite())
    }
}

/// Smallest value seen (including `x0`) along `budget` gradient-descent
/// steps with stepsize `1 / lambda_max(L)`.
pub fn estimate_f_inf(problem: &dyn Objective, budget: usize, x0: &[f64]) -> Result<f64> {
    if budget == 0 {
        return Err(Error::InvalidArgument("budget must be >= 1".into()));
    }
    if x0.len() != problem.dim() {
        return Err(Error::DimensionMismatch {
            expected: problem.dim(),
            found: x0.len(),
        });
    }
    let gamma = 1.0 / problem.smoothness().lambda_max();
    let mut x = x0.to_vec();
    let mut best = problem.value(&x);
    for k in 0..budget {
        let g = problem.gradient(&x);
        for (xi, gi) in x.iter_mut().zip(&g) {
            *xi -= gamma * gi;
        }
        let f = problem.value(&x);
        if !f.is_finite() {
            return Err(Error::Divergence {
                iteration: k + 1,
                reason: "non-finite value during lower-bound estimation".into(),
            });
        }
        best = best.min(f);
    }
    Ok(best)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistRun {
    pub trace: RunTrace,
    pub ledger: CommLedger,
}

/// Runs the distributed variant `cfg.variant`. Unless `cfg.unsafe_stepsize`
/// is set, `D L D <= D` must hold.
pub fn run_distributed(
    fed: &FederatedProblem,
    d: &StepsizeMatrix,
    spec: &SketchSpec,
    x0: &[f64],
    cfg: &RunConfig,
) -> Result<DistRun> {
    if !cfg.unsafe_stepsize {
        require_dld(d, &fed.smoothness)?;
    }
    let clients: Vec<&dyn Objective> = fed.clients.iter().map(|c| c.as_ref()).collect();
    let (trace, ledger) = run_engine(fed, &clients, d, spec, x0, cfg)?;
    Ok(DistRun { trace, ledger })
}

/// Server step `x - (D/n) sum_i S_i grad f_i(x)`.
pub fn run_dist_cgd1(
    fed: &FederatedProblem,
    d: &StepsizeMatrix,
    spec: &SketchSpec,
    x0: &[f64],
    cfg: &RunConfig,
) -> Result<DistRun> {
    run_distributed(fed, d, spec, x0, &RunConfig {
        variant: Variant::Cgd1,
        ..cfg.clone()
    })
}

/// Server step `x - (1/n) sum_i T_i D grad f_i(x)`.
pub fn run_dist_cgd2(
    fed: &FederatedProblem,
    d: &StepsizeMatrix,
    spec: &SketchSpec,
    x0: &[f64],
    cfg: &RunConfig,
) -> Result<DistRun> {
    run_distributed(fed, d, spec, x0, &RunConfig {
        variant: Variant::Cgd2,
        ..cfg.clone()
    })
}

/// How the scalar DCGD stepsize is derived.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SmoothnessMode {
    /// Scalar constants `L = lambda_max(L)`, `L_max = max_i lambda_max(L_i)`.
    Scalar,
    /// The matrix conditions applied to `D = gamma I`.
    Matrix,
}

/// Stepsize for DCGD with `D = gamma I`.
pub fn dcgd_gamma(fed: &FederatedProblem, spec: &SketchSpec, ctx: &DistributedContext, mode: SmoothnessMode) -> Result<f64> {
    match mode {
        SmoothnessMode::Scalar => {
            let l = fed.smoothness.lambda_max();
            let l_max = ctx.clients.iter().map(BlockDiagMatrix::lambda_max).fold(0.0, f64::max);
            Ok(scalar_dcgd_stepsize(l, l_max, spec.omega(), ctx)?.gamma)
        }
        SmoothnessMode::Matrix => {
            let w = BlockDiagMatrix::identity(fed.smoothness.partition());
            let d = calibrate_scaling(&w, &fed.smoothness, spec, Calibration::Distributed(ctx, Variant::Cgd1))?;
            Ok(d.det_root())
        }
    }
}

/// DCGD: `x - (gamma/n) sum_i S_i grad f_i(x)`.
pub fn run_dcgd(fed: &FederatedProblem, gamma: f64, spec: &SketchSpec, x0: &[f64], cfg: &RunConfig) -> Result<DistRun> {
    let d = StepsizeMatrix::scalar(gamma, fed.smoothness.partition())?;
    run_dist_cgd1(fed, &d, spec, x0, cfg)
}

/// Communication cost of per-layer Bernoulli sketches with the optimal
/// det-CGD2 stepsize, against the uncompressed `d det(L)^{1/d}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FreeCompression {
    pub qs: Vec<f64>,
    /// `sum q_i d_i`.
    pub expected_coordinates: f64,
    /// `(sum q_i d_i) prod (1/q_i)^{d_i/d} det(L)^{1/d}`.
    pub complexity: f64,
    /// `d det(L)^{1/d}`.
    pub uncompressed: f64,
    /// All `q_i` equal: the complexity is minimal and equals `uncompressed`.
    pub equal_q: bool,
}

pub fn free_compression_report(l: &BlockDiagMatrix, qs: &[f64]) -> Result<FreeCompression> {
    let p = l.partition();
    if qs.len() != p.num_layers() {
        return Err(Error::PartitionMismatch(format!(
            "{} probabilities for {} layers",
            qs.len(),
            p.num_layers()
        )));
    }
    if let Some(q) = qs.iter().find(|q| !(**q > 0.0 && **q <= 1.0)) {
        return Err(Error::InvalidArgument(format!("q = {q} outside (0, 1]")));
    }
    let d = p.total_dim() as f64;
    let det = l.det_root()?;
    let expected_coordinates: f64 = qs.iter().zip(p.dims()).map(|(q, &di)| q * di as f64).sum();
    let log_scale: f64 = qs.iter().zip(p.dims()).map(|(q, &di)| -(di as f64 / d) * q.ln()).sum();
    Ok(FreeCompression {
        qs: qs.to_vec(),
        expected_coordinates,
        complexity: expected_coordinates * log_scale.exp() * det,
        uncompressed: d * det,
        equal_q: qs.iter().all(|q| *q == qs[0]),
    })
}
