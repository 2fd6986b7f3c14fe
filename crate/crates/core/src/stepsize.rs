//! Matrix stepsizes: condition checks, closed-form constructions and
//! scalar-scaling calibration for the single-node and distributed settings.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{block_loewner_slack, BlockDiagMatrix, LayerPartition};
use crate::sketch::SketchSpec;

/// Tolerance for every Loewner-order verdict in this module.
pub const CONDITION_TOL: f64 = 1e-10;

const BISECTION_MAX_ITERS: usize = 200;
const BISECTION_REL_TOL: f64 = 1e-10;

/// Which update rule a stepsize is meant for: sketch-then-step (`Cgd1`,
/// `x - D S g`) or step-then-sketch (`Cgd2`, `x - T D g`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Cgd1,
    Cgd2,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Cgd1 => "cgd1",
            Variant::Cgd2 => "cgd2",
        })
    }
}

/// A strictly positive definite block-diagonal stepsize with its cached `det(D)^{1/d}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "StepsizeRepr", into = "StepsizeRepr")]
pub struct StepsizeMatrix {
    d: BlockDiagMatrix,
    det_root: f64,
}

#[derive(Serialize, Deserialize)]
struct StepsizeRepr {
    matrix: BlockDiagMatrix,
    #[serde(default)]
    det_root: Option<f64>,
}

impl TryFrom<StepsizeRepr> for StepsizeMatrix {
    type Error = Error;

    fn try_from(r: StepsizeRepr) -> Result<Self> {
        StepsizeMatrix::new(r.matrix)
    }
}

impl From<StepsizeMatrix> for StepsizeRepr {
    fn from(s: StepsizeMatrix) -> Self {
        StepsizeRepr {
            matrix: s.d,
            det_root: Some(s.det_root),
        }
    }
}

impl StepsizeMatrix {
    pub fn new(d: BlockDiagMatrix) -> Result<Self> {
        if !d.is_strictly_pd() {
            return Err(Error::Singular {
                lambda_min: d.lambda_min(),
                lambda_max: d.lambda_max(),
            });
        }
        let det_root = d.det_root()?;
        Ok(StepsizeMatrix { d, det_root })
    }

    /// `gamma * I` on the given partition.
    pub fn scalar(gamma: f64, partition: &LayerPartition) -> Result<Self> {
        Self::new(BlockDiagMatrix::identity(partition).scaled(gamma)?)
    }

    pub fn matrix(&self) -> &BlockDiagMatrix {
        &self.d
    }

    pub fn det_root(&self) -> f64 {
        self.det_root
    }

    pub fn dim(&self) -> usize {
        self.d.dim()
    }

    pub fn partition(&self) -> &LayerPartition {
        self.d.partition()
    }

    pub fn is_diagonal(&self) -> bool {
        self.d.is_diagonal()
    }

    /// `D / det(D)^{1/d}`, the unit-determinant weight used for gradient norms.
    pub fn normalized(&self) -> BlockDiagMatrix {
        self.d.scaled(1.0 / self.det_root).expect("positive scale")
    }

    pub fn scaled(&self, alpha: f64) -> Result<Self> {
        Self::new(self.d.scaled(alpha)?)
    }
}

/// A Loewner-order test `A <= D` with its raw slack `lambda_min(D - A)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionCheck {
    pub holds: bool,
    pub slack: f64,
}

impl ConditionCheck {
    fn against(lhs: &BlockDiagMatrix, d: &BlockDiagMatrix) -> Result<Self> {
        let slack = block_loewner_slack(lhs, d)?;
        Ok(ConditionCheck {
            holds: slack >= -CONDITION_TOL * d.lambda_max().max(1.0),
            slack,
        })
    }
}

fn check_shapes(d: &StepsizeMatrix, l: &BlockDiagMatrix, spec: &SketchSpec) -> Result<()> {
    l.check_partition(d.partition())?;
    l.check_partition(spec.partition())
}

/// `E[S D L D S] <= D`.
pub fn check_cgd1_condition(d: &StepsizeMatrix, l: &BlockDiagMatrix, spec: &SketchSpec) -> Result<ConditionCheck> {
    check_shapes(d, l, spec)?;
    let lhs = spec.expected_conjugation(&d.matrix().congruence(l)?)?;
    ConditionCheck::against(&lhs, d.matrix())
}

/// `D E[T L T] D <= D`.
pub fn check_cgd2_condition(d: &StepsizeMatrix, l: &BlockDiagMatrix, spec: &SketchSpec) -> Result<ConditionCheck> {
    check_shapes(d, l, spec)?;
    let lhs = d.matrix().congruence(&spec.expected_conjugation(l)?)?;
    ConditionCheck::against(&lhs, d.matrix())
}

pub fn check_condition(
    variant: Variant,
    d: &StepsizeMatrix,
    l: &BlockDiagMatrix,
    spec: &SketchSpec,
) -> Result<ConditionCheck> {
    match variant {
        Variant::Cgd1 => check_cgd1_condition(d, l, spec),
        Variant::Cgd2 => check_cgd2_condition(d, l, spec),
    }
}

/// `D L D <= D`, the hypothesis of the distributed convergence bounds.
pub fn check_dld_condition(d: &StepsizeMatrix, l: &BlockDiagMatrix) -> Result<ConditionCheck> {
    ConditionCheck::against(&d.matrix().congruence(l)?, d.matrix())
}

/// `D = (E[T L T])^{-1}`, the largest-determinant stepsize satisfying the
/// det-CGD2 condition.
pub fn optimal_stepsize_cgd2(l: &BlockDiagMatrix, spec: &SketchSpec) -> Result<StepsizeMatrix> {
    l.check_partition(spec.partition())?;
    let e = spec.expected_conjugation(l)?;
    // Jensen gives E[TLT] >= L, so this only fails for singular L.
    StepsizeMatrix::new(e.inverse()?)
}

/// Largest per-layer scalings `gamma_i` with `Diag(gamma_i W_i)` satisfying the
/// det-CGD1 condition:
/// `gamma_i = 1 / lambda_max(W_i^{-1/2} E[S_i W_i L_i W_i S_i] W_i^{-1/2})`.
pub fn layerwise_gamma(w: &BlockDiagMatrix, l: &BlockDiagMatrix, spec: &SketchSpec) -> Result<Vec<f64>> {
    w.check_partition(l.partition())?;
    w.check_partition(spec.partition())?;
    let e = spec.expected_conjugation(&w.congruence(l)?)?;
    let c = w.inv_sqrt()?.congruence(&e)?;
    Ok(c.blocks().iter().map(|b| 1.0 / b.lambda_max()).collect())
}

/// det-CGD2 analogue: `gamma_i = 1 / lambda_max(W_i^{1/2} E[T_i L_i T_i] W_i^{1/2})`.
pub fn layerwise_gamma_cgd2(w: &BlockDiagMatrix, l: &BlockDiagMatrix, spec: &SketchSpec) -> Result<Vec<f64>> {
    w.check_partition(l.partition())?;
    w.check_partition(spec.partition())?;
    if !w.is_strictly_pd() {
        return Err(Error::Singular {
            lambda_min: w.lambda_min(),
            lambda_max: w.lambda_max(),
        });
    }
    let c = w.sqrt().congruence(&spec.expected_conjugation(l)?)?;
    Ok(c.blocks().iter().map(|b| 1.0 / b.lambda_max()).collect())
}

/// `Diag(gamma_i W_i)` with the maximal layerwise scalings for `variant`.
pub fn layerwise_stepsize(
    variant: Variant,
    w: &BlockDiagMatrix,
    l: &BlockDiagMatrix,
    spec: &SketchSpec,
) -> Result<(StepsizeMatrix, Vec<f64>)> {
    let gammas = match variant {
        Variant::Cgd1 => layerwise_gamma(w, l, spec)?,
        Variant::Cgd2 => layerwise_gamma_cgd2(w, l, spec)?,
    };
    Ok((StepsizeMatrix::new(w.scaled_per_block(&gammas)?)?, gammas))
}

fn max_client_conjugate(clients: &[BlockDiagMatrix], inner: &BlockDiagMatrix) -> Result<f64> {
    if clients.is_empty() {
        return Err(Error::InvalidArgument("no client smoothness matrices".into()));
    }
    let mut worst: f64 = 0.0;
    for li in clients {
        worst = worst.max(li.sqrt().congruence(inner)?.lambda_max());
    }
    Ok(worst)
}

/// `max_i lambda_max(L_i^{1/2} E[(S - I) D L D (S - I)] L_i^{1/2})`.
pub fn lambda_d(
    d: &StepsizeMatrix,
    l: &BlockDiagMatrix,
    clients: &[BlockDiagMatrix],
    spec: &SketchSpec,
) -> Result<f64> {
    check_shapes(d, l, spec)?;
    let centered = spec.expected_centered_conjugation(&d.matrix().congruence(l)?)?;
    max_client_conjugate(clients, &centered)
}

/// `max_i lambda_max(L_i^{1/2} D E[(T - I) L (T - I)] D L_i^{1/2})`.
pub fn lambda_d_prime(
    d: &StepsizeMatrix,
    l: &BlockDiagMatrix,
    clients: &[BlockDiagMatrix],
    spec: &SketchSpec,
) -> Result<f64> {
    check_shapes(d, l, spec)?;
    let inner = d.matrix().congruence(&spec.expected_centered_conjugation(l)?)?;
    max_client_conjugate(clients, &inner)
}

pub fn lambda_for(
    variant: Variant,
    d: &StepsizeMatrix,
    l: &BlockDiagMatrix,
    clients: &[BlockDiagMatrix],
    spec: &SketchSpec,
) -> Result<f64> {
    match variant {
        Variant::Cgd1 => lambda_d(d, l, clients, spec),
        Variant::Cgd2 => lambda_d_prime(d, l, clients, spec),
    }
}

/// The inputs of the distributed feasibility conditions besides `D` and `L`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistributedContext {
    pub clients: Vec<BlockDiagMatrix>,
    pub iterations: usize,
    pub eps2: f64,
    /// `f^inf - mean_i f_i^inf`; negative estimates are clamped to 0.
    pub delta_inf: f64,
    /// `f(x^0) - f^inf`.
    pub f0_gap: f64,
}

impl DistributedContext {
    pub fn new(clients: Vec<BlockDiagMatrix>, iterations: usize, eps2: f64, delta_inf: f64, f0_gap: f64) -> Result<Self> {
        if clients.is_empty() {
            return Err(Error::InvalidArgument("client count must be >= 1".into()));
        }
        if iterations == 0 {
            return Err(Error::InvalidArgument("iteration count must be >= 1".into()));
        }
        if !(eps2 > 0.0 && eps2.is_finite()) {
            return Err(Error::InvalidArgument(format!("eps2 = {eps2} must be positive")));
        }
        if !delta_inf.is_finite() || !f0_gap.is_finite() {
            return Err(Error::NonFinite("distributed context"));
        }
        let delta_inf = if delta_inf < 0.0 {
            log::warn!("negative heterogeneity gap {delta_inf:e} clamped to 0");
            0.0
        } else {
            delta_inf
        };
        Ok(DistributedContext {
            clients,
            iterations,
            eps2,
            delta_inf,
            f0_gap: f0_gap.max(0.0),
        })
    }

    pub fn n(&self) -> usize {
        self.clients.len()
    }

    /// `n eps^2 / (4 Delta^inf)`, `None` when the gap is zero (no constraint).
    fn eps_coefficient(&self) -> Option<f64> {
        (self.delta_inf > 0.0).then(|| self.n() as f64 * self.eps2 / (4.0 * self.delta_inf))
    }
}

/// The three sufficient conditions for reaching `eps^2` in the distributed bound.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistributedVerdict {
    pub variant: Variant,
    pub dld: ConditionCheck,
    /// `lambda_D` for cgd1, `lambda'_D` for cgd2.
    pub lambda: f64,
    /// `n / K`.
    pub lambda_bound_iterations: f64,
    /// `n eps^2 det(D)^{1/d} / (4 Delta^inf)`; `None` means unbounded.
    pub lambda_bound_eps: Option<f64>,
    pub lambda_ok: bool,
    /// `12 (f(x^0) - f^inf) / (det(D)^{1/d} eps^2)`.
    pub iterations_required: f64,
    pub iterations_ok: bool,
    pub feasible: bool,
}

fn within(value: f64, bound: f64) -> bool {
    value <= bound * (1.0 + CONDITION_TOL) + f64::MIN_POSITIVE
}

pub fn distributed_feasibility(
    d: &StepsizeMatrix,
    l: &BlockDiagMatrix,
    ctx: &DistributedContext,
    spec: &SketchSpec,
    variant: Variant,
) -> Result<DistributedVerdict> {
    let dld = check_dld_condition(d, l)?;
    let lambda = lambda_for(variant, d, l, &ctx.clients, spec)?;
    let n = ctx.n() as f64;
    let lambda_bound_iterations = n / ctx.iterations as f64;
    let lambda_bound_eps = ctx.eps_coefficient().map(|c| c * d.det_root());
    let lambda_ok =
        within(lambda, lambda_bound_iterations) && lambda_bound_eps.is_none_or(|b| within(lambda, b));
    let iterations_required = 12.0 * ctx.f0_gap / (d.det_root() * ctx.eps2);
    let iterations_ok = ctx.iterations as f64 >= iterations_required;
    Ok(DistributedVerdict {
        variant,
        dld,
        lambda,
        lambda_bound_iterations,
        lambda_bound_eps,
        lambda_ok,
        iterations_required,
        iterations_ok,
        feasible: dld.holds && lambda_ok && iterations_ok,
    })
}

/// Closed-form thresholds on `alpha` for `D = alpha W` in the distributed conditions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingBounds {
    /// `lambda_W`, so that `lambda_{alpha W} = alpha^2 lambda_W`.
    pub lambda_w: f64,
    /// `1 / lambda_max(W^{1/2} L W^{1/2})`.
    pub alpha_dld: f64,
    /// `sqrt(n / (K lambda_W))`; infinite when `lambda_W = 0`.
    pub alpha_iterations: f64,
    /// `n eps^2 det(W)^{1/d} / (4 Delta^inf lambda_W)`; `None` when unbounded.
    pub alpha_eps: Option<f64>,
    /// Smallest `alpha` meeting the iteration-count condition.
    pub alpha_min: f64,
}

impl ScalingBounds {
    /// The supremum of scalings meeting every upper-bound condition.
    pub fn alpha_max(&self) -> f64 {
        let mut a = self.alpha_dld.min(self.alpha_iterations);
        if let Some(e) = self.alpha_eps {
            a = a.min(e);
        }
        a
    }
}

pub fn scaling_bounds(
    w: &BlockDiagMatrix,
    l: &BlockDiagMatrix,
    ctx: &DistributedContext,
    spec: &SketchSpec,
    variant: Variant,
) -> Result<ScalingBounds> {
    let ws = StepsizeMatrix::new(w.clone())?;
    let lambda_w = lambda_for(variant, &ws, l, &ctx.clients, spec)?;
    let alpha_dld = 1.0 / w.sqrt().congruence(l)?.lambda_max();
    let n = ctx.n() as f64;
    let det_w = ws.det_root();
    let (alpha_iterations, alpha_eps) = if lambda_w > 0.0 {
        (
            (n / (ctx.iterations as f64 * lambda_w)).sqrt(),
            ctx.eps_coefficient().map(|c| c * det_w / lambda_w),
        )
    } else {
        (f64::INFINITY, None)
    };
    Ok(ScalingBounds {
        lambda_w,
        alpha_dld,
        alpha_iterations,
        alpha_eps,
        alpha_min: 12.0 * ctx.f0_gap / (ctx.iterations as f64 * det_w * ctx.eps2),
    })
}

/// How a fixed direction `W` is scaled into a stepsize.
#[derive(Clone, Debug)]
pub enum Calibration<'a> {
    /// Largest per-layer scalings meeting the single-node condition.
    SingleNode(Variant),
    /// Largest common scaling meeting the distributed upper-bound conditions,
    /// found by bisection.
    Distributed(&'a DistributedContext, Variant),
}

/// Scales `W` into the largest feasible stepsize.
///
/// In the distributed case the iteration-count condition is a lower bound on
/// the scaling; it is reported by [`distributed_feasibility`], not enforced here.
pub fn calibrate_scaling(
    w: &BlockDiagMatrix,
    l: &BlockDiagMatrix,
    spec: &SketchSpec,
    mode: Calibration<'_>,
) -> Result<StepsizeMatrix> {
    match mode {
        Calibration::SingleNode(variant) => Ok(layerwise_stepsize(variant, w, l, spec)?.0),
        Calibration::Distributed(ctx, variant) => {
            let base = StepsizeMatrix::new(w.clone())?;
            let alpha_hi = 1.0 / w.sqrt().congruence(l)?.lambda_max();
            let admissible = |alpha: f64| -> Result<bool> {
                let v = distributed_feasibility(&base.scaled(alpha)?, l, ctx, spec, variant)?;
                Ok(v.dld.holds && v.lambda_ok)
            };
            if admissible(alpha_hi)? {
                return base.scaled(alpha_hi);
            }
            let (mut lo, mut hi) = (0.0, alpha_hi);
            for _ in 0..BISECTION_MAX_ITERS {
                if hi - lo <= BISECTION_REL_TOL * hi {
                    break;
                }
                let mid = 0.5 * (lo + hi);
                if admissible(mid)? {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            if lo <= 0.0 {
                return Err(Error::Infeasible("no positive scaling satisfies the conditions".into()));
            }
            base.scaled(lo)
        }
    }
}

/// Scalar DCGD stepsize from scalar smoothness constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarStepsize {
    pub gamma: f64,
    /// `1 / L`.
    pub term_smoothness: f64,
    /// `sqrt(n / (K L_max L omega))`.
    pub term_iterations: f64,
    /// `n eps^2 / (4 Delta^inf L_max L omega)`; `None` when unbounded.
    pub term_eps: Option<f64>,
    /// `12 (f(x^0) - f^inf) / eps^2`, the required value of `K gamma`.
    pub k_gamma_required: f64,
    pub iterations_ok: bool,
}

/// `gamma = min{1/L, sqrt(n/(K L_max L omega)), n eps^2/(4 Delta^inf L_max L omega)}`.
pub fn scalar_dcgd_stepsize(l: f64, l_max: f64, omega: f64, ctx: &DistributedContext) -> Result<ScalarStepsize> {
    if !(l > 0.0 && l_max > 0.0 && omega >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "need L > 0, L_max > 0, omega >= 0 (got {l}, {l_max}, {omega})"
        )));
    }
    let n = ctx.n() as f64;
    let v = l_max * l * omega;
    let term_smoothness = 1.0 / l;
    let (term_iterations, term_eps) = if v > 0.0 {
        (
            (n / (ctx.iterations as f64 * v)).sqrt(),
            ctx.eps_coefficient().map(|c| c / v),
        )
    } else {
        (f64::INFINITY, None)
    };
    let mut gamma = term_smoothness.min(term_iterations);
    if let Some(e) = term_eps {
        gamma = gamma.min(e);
    }
    let k_gamma_required = 12.0 * ctx.f0_gap / ctx.eps2;
    Ok(ScalarStepsize {
        gamma,
        term_smoothness,
        term_iterations,
        term_eps,
        k_gamma_required,
        iterations_ok: ctx.iterations as f64 * gamma >= k_gamma_required,
    })
}

/// Stepsize verdicts and the spectral constants behind them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub stepsize: StepsizeMatrix,
    pub det_root: f64,
    pub condition_cgd1_ok: bool,
    pub slack_cgd1: f64,
    pub condition_cgd2_ok: bool,
    pub slack_cgd2: f64,
    pub gammas: Vec<f64>,
    pub lambda_d: f64,
    pub lambda_d_prime: f64,
    pub distributed: Option<DistributedVerdict>,
}

/// Evaluates every condition for `D`. Without a distributed context the
/// spectral constants use `L` as the only client.
pub fn calibration_report(
    d: &StepsizeMatrix,
    l: &BlockDiagMatrix,
    spec: &SketchSpec,
    gammas: Vec<f64>,
    distributed: Option<(&DistributedContext, Variant)>,
) -> Result<CalibrationReport> {
    let c1 = check_cgd1_condition(d, l, spec)?;
    let c2 = check_cgd2_condition(d, l, spec)?;
    let single = [l.clone()];
    let clients = distributed.map_or(&single[..], |(ctx, _)| &ctx.clients[..]);
    let verdict = distributed
        .map(|(ctx, v)| distributed_feasibility(d, l, ctx, spec, v))
        .transpose()?;
    Ok(CalibrationReport {
        stepsize: d.clone(),
        det_root: d.det_root(),
        condition_cgd1_ok: c1.holds,
        slack_cgd1: c1.slack,
        condition_cgd2_ok: c2.holds,
        slack_cgd2: c2.slack,
        gammas,
        lambda_d: lambda_d(d, l, clients, spec)?,
        lambda_d_prime: lambda_d_prime(d, l, clients, spec)?,
        distributed: verdict,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{random_block_spd, random_spd, SpdMatrix};
    use crate::sketch::LayerSketch;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand1(p: &LayerPartition) -> SketchSpec {
        SketchSpec::uniform(p, LayerSketch::RandK { k: 1 }).unwrap()
    }

    #[test]
    fn scalar_condition_is_tight_at_inverse_smoothness() {
        let p = LayerPartition::single(3);
        let l = BlockDiagMatrix::identity(&p).scaled(4.0).unwrap();
        let d = StepsizeMatrix::scalar(0.25, &p).unwrap();
        let c = check_cgd1_condition(&d, &l, &SketchSpec::identity(&p)).unwrap();
        assert!(c.holds);
        assert!(c.slack.abs() < 1e-15);
    }

    #[test]
    fn gd_stepsize_passes_for_any_l() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = LayerPartition::single(5);
        let l = BlockDiagMatrix::from(random_spd(5, &mut rng));
        let d = StepsizeMatrix::scalar(1.0 / l.lambda_max(), &p).unwrap();
        assert!(check_cgd1_condition(&d, &l, &SketchSpec::identity(&p)).unwrap().holds);
    }

    #[test]
    fn doubling_the_layerwise_stepsize_violates_cgd1() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let p = LayerPartition::single(4);
        let l = BlockDiagMatrix::from(random_spd(4, &mut rng));
        let spec = rand1(&p);
        let (d, _) = layerwise_stepsize(Variant::Cgd1, &l.diag_part().inverse().unwrap(), &l, &spec).unwrap();
        assert!(check_cgd1_condition(&d, &l, &spec).unwrap().holds);
        let twice = d.scaled(2.0).unwrap();
        let c = check_cgd1_condition(&twice, &l, &spec).unwrap();
        assert!(!c.holds);
        // direct eigencheck of 4 D E D ... equivalently E[S 2D L 2D S] - 2D
        let e = spec.expected_conjugation(&twice.matrix().congruence(&l).unwrap()).unwrap();
        let diff = twice.matrix().block(0).as_matrix() - e.block(0).as_matrix();
        let min = crate::linalg::symmetric_eigenvalues(&diff)[0];
        assert!((min - c.slack).abs() < 1e-9 * (1.0 + min.abs()));
        assert!(min < 0.0);
    }

    #[test]
    fn optimal_cgd2_is_on_the_boundary() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let p = LayerPartition::new(vec![3, 2]).unwrap();
        let l = random_block_spd(&p, &mut rng);
        let spec = rand1(&p);
        let d = optimal_stepsize_cgd2(&l, &spec).unwrap();
        let c = check_cgd2_condition(&d, &l, &spec).unwrap();
        assert!(c.holds);
        let scale = d.matrix().lambda_max();
        assert!(c.slack >= -1e-10 * scale && c.slack <= 1e-8 * scale, "{}", c.slack);
        assert!(check_cgd2_condition(&d.scaled(0.5).unwrap(), &l, &spec).unwrap().holds);
        assert!(!check_cgd2_condition(&d.scaled(1.01).unwrap(), &l, &spec).unwrap().holds);
    }

    #[test]
    fn optimal_cgd2_closed_forms() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let p = LayerPartition::new(vec![2, 3]).unwrap();
        let l = random_block_spd(&p, &mut rng);
        let d = optimal_stepsize_cgd2(&l, &SketchSpec::identity(&p)).unwrap();
        let inv = l.inverse().unwrap();
        for (a, b) in d.matrix().blocks().iter().zip(inv.blocks()) {
            assert!((a.as_matrix() - b.as_matrix()).amax() < 1e-10 * b.lambda_max());
        }
        let spec = SketchSpec::new(
            p.clone(),
            vec![LayerSketch::Bernoulli { q: 0.25 }, LayerSketch::Bernoulli { q: 0.5 }],
        )
        .unwrap();
        let d = optimal_stepsize_cgd2(&l, &spec).unwrap();
        for ((a, b), q) in d.matrix().blocks().iter().zip(inv.blocks()).zip([0.25, 0.5]) {
            assert!((a.as_matrix() - b.as_matrix() * q).amax() < 1e-10 * b.lambda_max());
        }
    }

    #[test]
    fn layerwise_gamma_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let p = LayerPartition::new(vec![4, 3]).unwrap();
        let l = random_block_spd(&p, &mut rng);
        let id = SketchSpec::identity(&p);
        let g = layerwise_gamma(&BlockDiagMatrix::identity(&p), &l, &id).unwrap();
        for (gi, b) in g.iter().zip(l.blocks()) {
            assert!((gi * b.lambda_max() - 1.0).abs() < 1e-12);
        }
        let g = layerwise_gamma(&l.inverse().unwrap(), &l, &id).unwrap();
        assert!(g.iter().all(|gi| (gi - 1.0).abs() < 1e-9));
        let g = layerwise_gamma(&l.diag_part().inverse().unwrap(), &l, &rand1(&p)).unwrap();
        assert!((g[0] - 0.25).abs() < 1e-12 && (g[1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn lambda_d_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let p = LayerPartition::single(4);
        let l = BlockDiagMatrix::from(random_spd(4, &mut rng));
        let clients = vec![l.clone(), BlockDiagMatrix::from(random_spd(4, &mut rng))];
        let d = StepsizeMatrix::scalar(0.1, &p).unwrap();
        assert_eq!(lambda_d(&d, &l, &clients, &SketchSpec::identity(&p)).unwrap(), 0.0);
        assert_eq!(lambda_d_prime(&d, &l, &clients, &SketchSpec::identity(&p)).unwrap(), 0.0);

        let spec = rand1(&p);
        let base = lambda_d(&d, &l, &clients, &spec).unwrap();
        let base2 = lambda_d_prime(&d, &l, &clients, &spec).unwrap();
        for a in [0.5, 2.0] {
            let da = d.scaled(a).unwrap();
            let la = lambda_d(&da, &l, &clients, &spec).unwrap();
            assert!((la - a * a * base).abs() <= 1e-12 * la.max(1.0));
            let la2 = lambda_d_prime(&da, &l, &clients, &spec).unwrap();
            assert!((la2 - a * a * base2).abs() <= 1e-12 * la2.max(1.0));
        }
        // diagonal D and diagonal sketches commute
        let dd = StepsizeMatrix::new(l.diag_part().inverse().unwrap().scaled(0.1).unwrap()).unwrap();
        let a = lambda_d(&dd, &l, &clients, &spec).unwrap();
        let b = lambda_d_prime(&dd, &l, &clients, &spec).unwrap();
        assert!((a - b).abs() < 1e-12 * a.max(1.0));
    }

    #[test]
    fn lambda_d_scalar_setting() {
        let p = LayerPartition::single(5);
        let iso = |v: f64| BlockDiagMatrix::identity(&p).scaled(v).unwrap();
        let l = iso(3.0);
        let clients = vec![iso(2.0), iso(4.0)];
        let spec = rand1(&p);
        let gamma = 0.01;
        let d = StepsizeMatrix::scalar(gamma, &p).unwrap();
        let got = lambda_d(&d, &l, &clients, &spec).unwrap();
        let want = gamma * gamma * 3.0 * 4.0 * spec.omega();
        assert!((got - want).abs() < 1e-14);
    }

    #[test]
    fn bisection_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let p = LayerPartition::new(vec![3, 3]).unwrap();
        let clients: Vec<_> = (0..3).map(|_| random_block_spd(&p, &mut rng)).collect();
        let l = BlockDiagMatrix::mean(&clients).unwrap();
        let spec = rand1(&p);
        let w = l.diag_part().inverse().unwrap();
        for (k, dinf) in [(10, 0.5), (1000, 0.5), (100_000, 0.0), (10, 1e4)] {
            let ctx = DistributedContext::new(clients.clone(), k, 1e-2, dinf, 1.0).unwrap();
            for variant in [Variant::Cgd1, Variant::Cgd2] {
                let b = scaling_bounds(&w, &l, &ctx, &spec, variant).unwrap();
                let d = calibrate_scaling(&w, &l, &spec, Calibration::Distributed(&ctx, variant)).unwrap();
                let alpha = d.det_root() / StepsizeMatrix::new(w.clone()).unwrap().det_root();
                let want = b.alpha_max();
                assert!((alpha - want).abs() <= 1e-8 * want, "{k} {dinf} {alpha} {want}");
            }
        }
    }

    #[test]
    fn scalar_recovery_terms() {
        let p = LayerPartition::single(6);
        let iso = |v: f64| BlockDiagMatrix::identity(&p).scaled(v).unwrap();
        let clients = vec![iso(1.0), iso(2.5), iso(1.5)];
        let l = BlockDiagMatrix::mean(&clients).unwrap();
        let spec = rand1(&p);
        let ctx = DistributedContext::new(clients, 500, 1e-3, 0.2, 3.0).unwrap();
        let b = scaling_bounds(&BlockDiagMatrix::identity(&p), &l, &ctx, &spec, Variant::Cgd1).unwrap();
        let s = scalar_dcgd_stepsize(l.lambda_max(), 2.5, spec.omega(), &ctx).unwrap();
        let rel = |a: f64, b: f64| (a - b).abs() / b.abs();
        assert!(rel(b.alpha_dld, s.term_smoothness) < 1e-12);
        assert!(rel(b.alpha_iterations, s.term_iterations) < 1e-12);
        assert!(rel(b.alpha_eps.unwrap(), s.term_eps.unwrap()) < 1e-12);
        assert!(rel(b.alpha_min * 500.0, s.k_gamma_required) < 1e-12);
    }

    #[test]
    fn zero_heterogeneity_removes_eps_constraint() {
        let p = LayerPartition::single(2);
        let l = BlockDiagMatrix::from(SpdMatrix::from_diagonal(&[2.0, 1.0]).unwrap());
        let ctx = DistributedContext::new(vec![l.clone()], 10, 1e-4, -1e-12, 1.0).unwrap();
        assert_eq!(ctx.delta_inf, 0.0);
        let v = distributed_feasibility(
            &StepsizeMatrix::new(l.inverse().unwrap()).unwrap(),
            &l,
            &ctx,
            &SketchSpec::identity(&p),
            Variant::Cgd1,
        )
        .unwrap();
        assert!(v.lambda_bound_eps.is_none());
        assert_eq!(v.lambda, 0.0);
        assert!(v.dld.holds && v.lambda_ok);
        assert!(!v.iterations_ok);
        let json = serde_json::to_value(&v).unwrap();
        assert!(json["lambda_bound_eps"].is_null());
    }

    #[test]
    fn stepsize_json_round_trip() {
        let p = LayerPartition::new(vec![1, 2]).unwrap();
        let d = StepsizeMatrix::scalar(0.5, &p).unwrap();
        let s = serde_json::to_string(&d).unwrap();
        let back: StepsizeMatrix = serde_json::from_str(&s).unwrap();
        assert_eq!(back, d);
        assert!((d.normalized().det_root().unwrap() - 1.0).abs() < 1e-12);
    }
}
