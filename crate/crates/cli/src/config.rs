use std::path::{Path, PathBuf};

use detcgd::distributed::{dcgd_gamma, FederatedProblem, SmoothnessMode, DEFAULT_F_INF_BUDGET};
use detcgd::problems::{parse_libsvm, Objective, QuadraticProblem, SyntheticSpec};
use detcgd::sketch::SketchConfig;
use detcgd::stepsize::{calibrate_scaling, layerwise_stepsize, optimal_stepsize_cgd2, Calibration, DistributedContext};
use detcgd::{BlockDiagMatrix, Error, LayerPartition, SketchSpec, StepsizeMatrix, Variant};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ProblemSource {
    Libsvm {
        path: PathBuf,
        #[serde(default)]
        dim: Option<usize>,
    },
    Synthetic(SyntheticSpec),
    /// `1/2 x^T A x + b^T x`, replicated on every client.
    Quadratic { a: BlockDiagMatrix, b: Vec<f64> },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightFamily {
    Identity,
    Inverse,
    InvSqrt,
    DiagInverse,
}

impl WeightFamily {
    pub fn build(self, l: &BlockDiagMatrix) -> detcgd::Result<BlockDiagMatrix> {
        match self {
            WeightFamily::Identity => Ok(BlockDiagMatrix::identity(l.partition())),
            WeightFamily::Inverse => l.inverse(),
            WeightFamily::InvSqrt => l.inv_sqrt(),
            WeightFamily::DiagInverse => l.diag_part().inverse(),
        }
    }
}

fn scalar_mode() -> SmoothnessMode {
    SmoothnessMode::Scalar
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum StepsizeMode {
    /// `D = E[T L T]^{-1}`.
    OptimalCgd2,
    /// `W` scaled per layer (one client) or by the largest common factor
    /// meeting the distributed conditions (several clients).
    Layerwise { weight: WeightFamily },
    ScalarDcgd {
        #[serde(default = "scalar_mode")]
        smoothness: SmoothnessMode,
    },
    Explicit { matrix: BlockDiagMatrix },
    /// `D = I / lambda_max(L)`.
    Gd,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MethodSpec {
    pub name: String,
    pub variant: Variant,
    pub stepsize: StepsizeMode,
    /// Overrides the top-level sketch.
    #[serde(default)]
    pub sketch: Option<SketchConfig>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TableOptions {
    #[serde(default)]
    pub ks: Option<Vec<usize>>,
    #[serde(default)]
    pub qs: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepOptions {
    pub methods: Vec<MethodSpec>,
}

fn default_variant() -> Variant {
    Variant::Cgd1
}
fn default_n() -> usize {
    1
}
fn default_eps2() -> f64 {
    1e-4
}
fn default_lambda() -> f64 {
    0.1
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}
fn default_stride() -> usize {
    1
}
fn default_out() -> PathBuf {
    PathBuf::from("out")
}
fn default_budget() -> usize {
    DEFAULT_F_INF_BUDGET
}
fn gd_mode() -> StepsizeMode {
    StepsizeMode::Gd
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemSource,
    /// Layer sizes; a single layer when absent.
    #[serde(default)]
    pub partition: Option<Vec<usize>>,
    /// No compression when absent.
    #[serde(default)]
    pub sketch: Option<SketchConfig>,
    #[serde(default = "gd_mode")]
    pub stepsize: StepsizeMode,
    #[serde(default = "default_variant")]
    pub variant: Variant,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(rename = "K")]
    pub iterations: usize,
    #[serde(default = "default_eps2")]
    pub eps2: f64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_stride")]
    pub record_every: usize,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// Seed of the dataset shuffle before sharding.
    #[serde(default)]
    pub split_seed: u64,
    #[serde(default = "default_budget")]
    pub f_inf_budget: usize,
    #[serde(default)]
    pub unsafe_stepsize: bool,
    #[serde(default)]
    pub count_index_bits: bool,
    /// Starting point; the origin when absent.
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    #[serde(default)]
    pub table: TableOptions,
    #[serde(default)]
    pub sweep: Option<SweepOptions>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Config(m.into()));
        if self.n == 0 {
            return bad("n must be >= 1");
        }
        if self.iterations == 0 {
            return bad("K must be >= 1");
        }
        if !(self.eps2 > 0.0 && self.eps2.is_finite()) {
            return bad("eps2 must be positive");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be >= 0");
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty");
        }
        if self.record_every == 0 {
            return bad("record_every must be >= 1");
        }
        if self.f_inf_budget == 0 {
            return bad("f_inf_budget must be >= 1");
        }
        if let Some(s) = &self.sweep {
            if s.methods.is_empty() {
                return bad("sweep.methods must not be empty");
            }
            let mut names: Vec<&str> = s.methods.iter().map(|m| m.name.as_str()).collect();
            names.sort_unstable();
            names.dedup();
            if names.len() != s.methods.len() {
                return bad("sweep method names must be unique");
            }
            if let Some(m) = s.methods.iter().find(|m| !valid_name(&m.name)) {
                return Err(CliError::Config(format!("method name {:?} must be [A-Za-z0-9_-]+", m.name)));
            }
        }
        Ok(())
    }

    pub fn run_config(&self, seed: u64, variant: Variant) -> detcgd::optimizer::RunConfig {
        let mut rc = detcgd::optimizer::RunConfig::new(self.iterations, seed, variant);
        rc.record_every = self.record_every;
        rc.unsafe_stepsize = self.unsafe_stepsize;
        rc.count_index_bits = self.count_index_bits;
        rc
    }
}

fn valid_name(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

/// The loaded problem, the starting point and the sketch.
pub struct Experiment {
    pub fed: FederatedProblem,
    pub x0: Vec<f64>,
    pub spec: SketchSpec,
}

impl Experiment {
    pub fn build(cfg: &ExperimentConfig, base: &Path) -> Result<Self, CliError> {
        let fed = build_problem(cfg, base)?;
        let d = fed.dim();
        let x0 = match &cfg.x0 {
            Some(x) if x.len() != d => {
                return Err(detcgd::Error::DimensionMismatch {
                    expected: d,
                    found: x.len(),
                }
                .into())
            }
            Some(x) => x.clone(),
            None => vec![0.0; d],
        };
        let spec = sketch_spec(cfg.sketch.as_ref(), fed.smoothness().partition())?;
        Ok(Experiment { fed, x0, spec })
    }

    pub fn l(&self) -> &BlockDiagMatrix {
        self.fed.smoothness()
    }

    pub fn context(&self, cfg: &ExperimentConfig) -> detcgd::Result<DistributedContext> {
        self.fed.context(cfg.iterations, cfg.eps2, &self.x0)
    }

    /// Stepsize for `mode` plus the per-layer scalings when there are any.
    pub fn stepsize(
        &self,
        cfg: &ExperimentConfig,
        mode: &StepsizeMode,
        variant: Variant,
        spec: &SketchSpec,
    ) -> detcgd::Result<(StepsizeMatrix, Vec<f64>)> {
        let l = self.l();
        match mode {
            StepsizeMode::OptimalCgd2 => Ok((optimal_stepsize_cgd2(l, spec)?, vec![])),
            StepsizeMode::Layerwise { weight } => {
                let w = weight.build(l)?;
                if self.fed.n() == 1 {
                    layerwise_stepsize(variant, &w, l, spec)
                } else {
                    let ctx = self.context(cfg)?;
                    Ok((calibrate_scaling(&w, l, spec, Calibration::Distributed(&ctx, variant))?, vec![]))
                }
            }
            StepsizeMode::ScalarDcgd { smoothness } => {
                let ctx = self.context(cfg)?;
                let gamma = dcgd_gamma(&self.fed, spec, &ctx, *smoothness)?;
                Ok((StepsizeMatrix::scalar(gamma, l.partition())?, vec![gamma]))
            }
            StepsizeMode::Explicit { matrix } => {
                matrix.check_partition(l.partition())?;
                Ok((StepsizeMatrix::new(matrix.clone())?, vec![]))
            }
            StepsizeMode::Gd => {
                let gamma = 1.0 / l.lambda_max();
                Ok((StepsizeMatrix::scalar(gamma, l.partition())?, vec![gamma]))
            }
        }
    }
}

pub fn sketch_spec(sketch: Option<&SketchConfig>, partition: &LayerPartition) -> detcgd::Result<SketchSpec> {
    match sketch {
        Some(s) => s.clone().into_spec(partition),
        None => Ok(SketchSpec::identity(partition)),
    }
}

fn build_problem(cfg: &ExperimentConfig, base: &Path) -> Result<FederatedProblem, CliError> {
    let partition = |d: usize| -> detcgd::Result<LayerPartition> {
        match &cfg.partition {
            Some(dims) => {
                let p = LayerPartition::new(dims.clone())?;
                p.check_dim(d)?;
                Ok(p)
            }
            None => Ok(LayerPartition::single(d)),
        }
    };
    let logistic = |data: detcgd::problems::Dataset| -> Result<FederatedProblem, CliError> {
        let p = partition(data.dim())?;
        Ok(FederatedProblem::logistic(&data, cfg.n, cfg.split_seed, cfg.lambda, &p, cfg.f_inf_budget)?)
    };
    match &cfg.problem {
        ProblemSource::Libsvm { path, dim } => {
            let path = if path.is_absolute() { path.clone() } else { base.join(path) };
            let file = std::fs::File::open(&path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            logistic(parse_libsvm(std::io::BufReader::new(file), *dim)?)
        }
        ProblemSource::Synthetic(s) => logistic(s.generate()?),
        ProblemSource::Quadratic { a, b } => {
            if let Some(dims) = &cfg.partition {
                if dims.as_slice() != a.partition().dims() {
                    return Err(Error::PartitionMismatch(format!(
                        "partition {dims:?} differs from the quadratic's blocks {:?}",
                        a.partition().dims()
                    ))
                    .into());
                }
            }
            let q = QuadraticProblem::new(a.clone(), b.clone())?;
            let f_inf = q.f_inf().expect("quadratics have an exact minimum");
            let clients: Vec<Box<dyn Objective>> = (0..cfg.n).map(|_| Box::new(q.clone()) as Box<dyn Objective>).collect();
            Ok(FederatedProblem::with_known_bounds(clients, f_inf, vec![f_inf; cfg.n])?)
        }
    }
}
