//! Single-node det-CGD1 / det-CGD2 loops and the iteration engine shared
//! with the distributed simulator.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{BlockDiagMatrix, SpdMatrix};
use crate::problems::Objective;
use crate::rng::StreamFactory;
use crate::sketch::{SketchSample, SketchSpec};
pub use crate::stepsize::Variant;
use crate::stepsize::{check_condition, check_dld_condition, StepsizeMatrix};

/// Iterates with `|x| > DIVERGENCE_NORM` abort the run.
pub const DIVERGENCE_NORM: f64 = 1e12;

fn default_stride() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub iterations: usize,
    pub seed: u64,
    pub variant: Variant,
    #[serde(default = "default_stride")]
    pub record_every: usize,
    /// Skip the stepsize condition check.
    #[serde(default)]
    pub unsafe_stepsize: bool,
    /// Add `ceil(log2 C(d_i, k_i))` index bits per rand-k layer to the
    /// message-size count.
    #[serde(default)]
    pub count_index_bits: bool,
}

impl RunConfig {
    pub fn new(iterations: usize, seed: u64, variant: Variant) -> Self {
        RunConfig {
            iterations,
            seed,
            variant,
            record_every: 1,
            unsafe_stepsize: false,
            count_index_bits: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidArgument("iterations must be >= 1".into()));
        }
        if self.record_every == 0 {
            return Err(Error::InvalidArgument("record_every must be >= 1".into()));
        }
        Ok(())
    }
}

/// Metrics at iterate `x^k`, taken before the step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub k: usize,
    pub f: f64,
    /// `|grad f(x^k)|^2` weighted by `D / det(D)^{1/d}`.
    pub grad_wnorm2: f64,
    pub grad_eucnorm2: f64,
    /// Coordinates sent during iterations `0..k`.
    pub coords_cumulative: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub iterations: usize,
    /// Mean weighted norm over all `K` iterations.
    pub g_kd: f64,
    /// Mean Euclidean norm over all `K` iterations.
    pub e_k: f64,
    pub min_grad_wnorm2: f64,
    pub final_f: f64,
    pub total_coords: u64,
    pub det_root: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub records: Vec<TraceRecord>,
    pub summary: TraceSummary,
    pub final_x: Vec<f64>,
}

impl RunTrace {
    /// CSV with header `k,f,grad_wnorm2,grad_eucnorm2,coords_cumulative`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.records {
            out.serialize(r)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(r: R) -> Result<Vec<TraceRecord>> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut out = Vec::new();
        for rec in rdr.deserialize() {
            out.push(rec?);
        }
        Ok(out)
    }

    pub fn write_summary_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, &self.summary)?;
        Ok(())
    }
}

/// Per-iteration, per-client uplink message sizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommLedger {
    clients: usize,
    /// Row-major `[iteration][client]`.
    coords: Vec<u64>,
    /// Optional multiplier converting coordinates to bits.
    pub bits_per_coordinate: Option<u32>,
}

#[derive(Serialize)]
struct LedgerRow {
    k: usize,
    client: usize,
    coords: u64,
}

impl CommLedger {
    pub(crate) fn new(clients: usize, iterations: usize) -> Self {
        CommLedger {
            clients,
            coords: Vec::with_capacity(clients * iterations),
            bits_per_coordinate: None,
        }
    }

    pub fn clients(&self) -> usize {
        self.clients
    }

    pub fn iterations(&self) -> usize {
        self.coords.len() / self.clients
    }

    pub fn get(&self, k: usize, client: usize) -> u64 {
        self.coords[k * self.clients + client]
    }

    pub fn iteration_total(&self, k: usize) -> u64 {
        self.coords[k * self.clients..(k + 1) * self.clients].iter().sum()
    }

    pub fn client_totals(&self) -> Vec<u64> {
        let mut t = vec![0; self.clients];
        for (i, c) in self.coords.iter().enumerate() {
            t[i % self.clients] += c;
        }
        t
    }

    pub fn total(&self) -> u64 {
        self.coords.iter().sum()
    }

    pub fn total_bits(&self) -> Option<u64> {
        self.bits_per_coordinate.map(|b| self.total() * b as u64)
    }

    /// CSV with header `k,client,coords`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for (i, &coords) in self.coords.iter().enumerate() {
            out.serialize(LedgerRow {
                k: i / self.clients,
                client: i % self.clients,
                coords,
            })?;
        }
        out.flush()?;
        Ok(())
    }
}

/// `x` update direction for one client: `D S g` or `T D g`.
struct Operator<'a> {
    variant: Variant,
    d: &'a BlockDiagMatrix,
    diag: Option<Vec<f64>>,
}

impl Operator<'_> {
    fn apply(&self, sample: &SketchSample, g: &[f64], tmp: &mut [f64], out: &mut [f64]) {
        if let (Some(dd), Some(s)) = (&self.diag, sample.diagonal()) {
            // Both factors diagonal: the two variants coincide and must produce
            // identical bits, so the coefficient is formed the same way for both.
            for j in 0..g.len() {
                out[j] = (dd[j] * s[j]) * g[j];
            }
            return;
        }
        match self.variant {
            Variant::Cgd1 => {
                sample.apply_into(g, tmp);
                self.d.apply_into(tmp, out);
            }
            Variant::Cgd2 => {
                self.d.apply_into(g, tmp);
                sample.apply_into(tmp, out);
            }
        }
    }
}

fn quad_form(m: &BlockDiagMatrix, x: &[f64], tmp: &mut [f64]) -> f64 {
    m.apply_into(x, tmp);
    tmp.iter().zip(x).map(|(a, b)| a * b).sum::<f64>().max(0.0)
}

/// Runs `x^{k+1} = x^k - (1/n) sum_i U_i^k grad f_i(x^k)` with client `i`
/// sketching from substream `(seed, i, k)` and contributions summed in
/// client order. `objective` supplies the recorded function value.
pub(crate) fn run_engine(
    objective: &dyn Objective,
    clients: &[&dyn Objective],
    d: &StepsizeMatrix,
    spec: &SketchSpec,
    x0: &[f64],
    cfg: &RunConfig,
) -> Result<(RunTrace, CommLedger)> {
    cfg.validate()?;
    let dim = objective.dim();
    if clients.is_empty() {
        return Err(Error::InvalidArgument("client count must be >= 1".into()));
    }
    for c in clients {
        if c.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: c.dim(),
            });
        }
    }
    for found in [x0.len(), d.dim(), spec.dim()] {
        if found != dim {
            return Err(Error::DimensionMismatch { expected: dim, found });
        }
    }
    let d_mat = d.matrix();
    d_mat.check_partition(spec.partition())?;
    let op = Operator {
        variant: cfg.variant,
        d: d_mat,
        diag: d.is_diagonal().then(|| d_mat.diagonal()),
    };
    let weight = d.normalized();
    let streams = StreamFactory::new(cfg.seed);
    let n = clients.len();
    let nf = n as f64;

    let mut x = x0.to_vec();
    let mut grad = vec![0.0; dim];
    let mut step = vec![0.0; dim];
    let mut u = vec![0.0; dim];
    let mut tmp = vec![0.0; dim];
    let mut records = Vec::with_capacity(cfg.iterations / cfg.record_every + 1);
    let mut ledger = CommLedger::new(n, cfg.iterations);
    let (mut sum_w, mut sum_e, mut min_w) = (0.0, 0.0, f64::INFINITY);
    let mut coords: u64 = 0;

    for k in 0..cfg.iterations {
        grad.fill(0.0);
        step.fill(0.0);
        let mut sent = 0;
        for (i, client) in clients.iter().enumerate() {
            let g = client.gradient(&x);
            let sample = spec.sample_stream(&streams, i as u64, k as u64);
            op.apply(&sample, &g, &mut tmp, &mut u);
            for j in 0..dim {
                grad[j] += g[j];
                step[j] += u[j];
            }
            let mut c = sample.nonzero_coordinates as u64;
            if cfg.count_index_bits {
                c += sample.index_bits;
            }
            ledger.coords.push(c);
            sent += c;
        }
        for g in grad.iter_mut() {
            *g /= nf;
        }
        let f = objective.value(&x);
        let wn = quad_form(&weight, &grad, &mut tmp);
        let en: f64 = grad.iter().map(|v| v * v).sum();
        if !f.is_finite() || !wn.is_finite() || !en.is_finite() {
            return Err(Error::Divergence {
                iteration: k,
                reason: format!("non-finite metrics (f = {f})"),
            });
        }
        sum_w += wn;
        sum_e += en;
        min_w = min_w.min(wn);
        if k % cfg.record_every == 0 {
            records.push(TraceRecord {
                k,
                f,
                grad_wnorm2: wn,
                grad_eucnorm2: en,
                coords_cumulative: coords,
            });
        }
        coords += sent;
        for j in 0..dim {
            x[j] -= step[j] / nf;
        }
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() || norm > DIVERGENCE_NORM {
            return Err(Error::Divergence {
                iteration: k + 1,
                reason: format!("|x| = {norm:e}"),
            });
        }
    }
    let final_f = objective.value(&x);
    let kf = cfg.iterations as f64;
    let trace = RunTrace {
        records,
        summary: TraceSummary {
            iterations: cfg.iterations,
            g_kd: sum_w / kf,
            e_k: sum_e / kf,
            min_grad_wnorm2: min_w,
            final_f,
            total_coords: coords,
            det_root: d.det_root(),
        },
        final_x: x,
    };
    Ok((trace, ledger))
}

/// Runs `cfg.variant` on a single node, after checking its stepsize
/// condition unless `cfg.unsafe_stepsize` is set.
pub fn run(
    problem: &dyn Objective,
    d: &StepsizeMatrix,
    spec: &SketchSpec,
    x0: &[f64],
    cfg: &RunConfig,
) -> Result<RunTrace> {
    if !cfg.unsafe_stepsize {
        let c = check_condition(cfg.variant, d, problem.smoothness(), spec)?;
        if !c.holds {
            return Err(Error::Infeasible(format!(
                "{} condition fails with slack {:e}",
                cfg.variant, c.slack
            )));
        }
    }
    Ok(run_engine(problem, &[problem], d, spec, x0, cfg)?.0)
}

/// `x^{k+1} = x^k - D S^k grad f(x^k)`.
pub fn run_cgd1(
    problem: &dyn Objective,
    d: &StepsizeMatrix,
    spec: &SketchSpec,
    x0: &[f64],
    cfg: &RunConfig,
) -> Result<RunTrace> {
    run(problem, d, spec, x0, &RunConfig {
        variant: Variant::Cgd1,
        ..cfg.clone()
    })
}

/// `x^{k+1} = x^k - T^k D grad f(x^k)`.
pub fn run_cgd2(
    problem: &dyn Objective,
    d: &StepsizeMatrix,
    spec: &SketchSpec,
    x0: &[f64],
    cfg: &RunConfig,
) -> Result<RunTrace> {
    run(problem, d, spec, x0, &RunConfig {
        variant: Variant::Cgd2,
        ..cfg.clone()
    })
}

pub(crate) fn require_dld(d: &StepsizeMatrix, l: &BlockDiagMatrix) -> Result<()> {
    let c = check_dld_condition(d, l)?;
    if c.holds {
        Ok(())
    } else {
        Err(Error::Infeasible(format!("D L D <= D fails with slack {:e}", c.slack)))
    }
}

/// Exact `E[f(x - U g)]` for a quadratic `f(x) = 1/2 x^T A x + b^T x + c`
/// over an enumerated sketch distribution, where `U = D S` or `S D`.
pub fn expected_quadratic_step(
    a: &SpdMatrix,
    b: &[f64],
    c: f64,
    x: &[f64],
    d: &SpdMatrix,
    outcomes: &[(SpdMatrix, f64)],
    variant: Variant,
) -> f64 {
    let dm = d.as_matrix();
    let am = a.as_matrix();
    let xv = nalgebra::DVector::from_column_slice(x);
    let bv = nalgebra::DVector::from_column_slice(b);
    let g = am * &xv + &bv;
    outcomes
        .iter()
        .map(|(s, p)| {
            let sm = s.as_matrix();
            let u = match variant {
                Variant::Cgd1 => dm * (sm * &g),
                Variant::Cgd2 => sm * (dm * &g),
            };
            let y = &xv - u;
            p * (0.5 * y.dot(&(am * &y)) + bv.dot(&y) + c)
        })
        .sum()
}
