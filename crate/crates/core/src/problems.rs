//! Objectives with gradient oracles and smoothness matrices, plus LibSVM
//! ingestion and a seeded synthetic classification generator.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{BlockDiagMatrix, LayerPartition, SpdMatrix};

/// A smooth objective `f: R^d -> R`.
///
/// `smoothness` returns a matrix `L` with
/// `f(x) <= f(y) + <grad f(y), x - y> + 1/2 <L (x - y), x - y>`.
pub trait Objective: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
    fn smoothness(&self) -> &BlockDiagMatrix;
    /// Exact lower bound when known.
    fn f_inf(&self) -> Option<f64> {
        None
    }
}

/// Features (one row per sample) with labels in `{-1, +1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: DMatrix<f64>,
    labels: Vec<f64>,
}

impl Dataset {
    pub fn new(features: DMatrix<f64>, labels: Vec<f64>) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: features.nrows(),
                found: labels.len(),
            });
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("features"));
        }
        if let Some(b) = labels.iter().find(|b| **b != 1.0 && **b != -1.0) {
            return Err(Error::InvalidArgument(format!("label {b} is not -1 or +1")));
        }
        Ok(Dataset { features, labels })
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// The samples at `rows`, in that order.
    pub fn select(&self, rows: &[usize]) -> Dataset {
        let features = DMatrix::from_fn(rows.len(), self.dim(), |i, j| self.features[(rows[i], j)]);
        Dataset {
            features,
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
        }
    }

    /// Shuffles by `seed`, then cuts into `n` contiguous shards of
    /// `len / n` samples; the remainder goes to the last shard.
    pub fn split(&self, n: usize, seed: u64) -> Result<Vec<Dataset>> {
        if n == 0 || n > self.len() {
            return Err(Error::InvalidArgument(format!(
                "cannot split {} samples across {n} clients",
                self.len()
            )));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        rand::seq::SliceRandom::shuffle(&mut order[..], &mut ChaCha8Rng::seed_from_u64(seed));
        let base = self.len() / n;
        Ok((0..n)
            .map(|i| {
                let end = if i + 1 == n { self.len() } else { (i + 1) * base };
                self.select(&order[i * base..end])
            })
            .collect())
    }
}

fn parse_error(line: usize, field: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        field,
        message: message.into(),
    }
}

fn normalize_label(raw: f64) -> Option<f64> {
    if raw == 1.0 {
        Some(1.0)
    } else if raw == -1.0 || raw == 0.0 || raw == 2.0 {
        Some(-1.0)
    } else {
        None
    }
}

/// Parses LibSVM text (`label idx:val idx:val ...`, 1-based strictly
/// increasing indices). Labels `0` and `2` map to `-1`; blank lines and
/// lines starting with `#` are skipped. With `dim = None` the dimension is
/// the largest index seen.
pub fn parse_libsvm<R: BufRead>(reader: R, dim: Option<usize>) -> Result<Dataset> {
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut labels = Vec::new();
    let mut max_index = 0;
    for (ln, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = ln + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut fields = trimmed.split_whitespace();
        let label_text = fields.next().expect("non-empty line");
        let raw: f64 = label_text
            .parse()
            .map_err(|_| parse_error(lineno, 0, format!("bad label {label_text:?}")))?;
        let label = normalize_label(raw)
            .ok_or_else(|| parse_error(lineno, 0, format!("label {raw} is not in {{-1,+1}}, {{0,1}} or {{1,2}}")))?;
        let mut row = Vec::new();
        let mut last = 0;
        for (f, tok) in fields.enumerate() {
            let field = f + 1;
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| parse_error(lineno, field, format!("expected idx:val, got {tok:?}")))?;
            let idx: usize = idx
                .parse()
                .map_err(|_| parse_error(lineno, field, format!("bad index {idx:?}")))?;
            if idx == 0 {
                return Err(parse_error(lineno, field, "indices are 1-based"));
            }
            if idx <= last {
                return Err(parse_error(lineno, field, format!("index {idx} does not increase after {last}")));
            }
            let val: f64 = val
                .parse()
                .map_err(|_| parse_error(lineno, field, format!("bad value {val:?}")))?;
            if !val.is_finite() {
                return Err(parse_error(lineno, field, "non-finite value"));
            }
            last = idx;
            row.push((idx - 1, val));
        }
        max_index = max_index.max(last);
        rows.push(row);
        labels.push(label);
    }
    let d = match dim {
        Some(d) if d < max_index => {
            return Err(Error::InvalidArgument(format!(
                "feature index {max_index} exceeds requested dimension {d}"
            )))
        }
        Some(d) => d,
        None => max_index,
    };
    if d == 0 {
        return Err(Error::InvalidArgument("dataset has no features".into()));
    }
    let mut features = DMatrix::zeros(rows.len(), d);
    for (i, row) in rows.iter().enumerate() {
        for &(j, v) in row {
            features[(i, j)] = v;
        }
    }
    Dataset::new(features, labels)
}

/// Writes LibSVM text with `+1`/`-1` labels, omitting zero features.
pub fn write_libsvm<W: Write>(data: &Dataset, mut w: W) -> Result<()> {
    for i in 0..data.len() {
        write!(w, "{}", if data.labels[i] > 0.0 { "+1" } else { "-1" })?;
        for j in 0..data.dim() {
            let v = data.features[(i, j)];
            if v != 0.0 {
                write!(w, " {}:{}", j + 1, v)?;
            }
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Seeded synthetic binary classification data.
///
/// Feature `j` is `N(0, 1)` scaled by `feature_spread^(j / (d - 1))`; labels
/// are the sign of a planted standard-normal hyperplane, each flipped with
/// probability `flip_prob`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub samples: usize,
    pub dim: usize,
    #[serde(default)]
    pub flip_prob: f64,
    #[serde(default = "one")]
    pub feature_spread: f64,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

impl SyntheticSpec {
    pub fn generate(&self) -> Result<Dataset> {
        if self.samples == 0 || self.dim == 0 {
            return Err(Error::InvalidArgument("synthetic data needs samples >= 1 and dim >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::InvalidArgument(format!("flip_prob {} outside [0, 1]", self.flip_prob)));
        }
        if !(self.feature_spread > 0.0 && self.feature_spread.is_finite()) {
            return Err(Error::InvalidArgument("feature_spread must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let d = self.dim;
        let scales: Vec<f64> = (0..d)
            .map(|j| {
                if d == 1 {
                    1.0
                } else {
                    self.feature_spread.powf(j as f64 / (d - 1) as f64)
                }
            })
            .collect();
        let w: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let mut features = DMatrix::zeros(self.samples, d);
        let mut labels = Vec::with_capacity(self.samples);
        for i in 0..self.samples {
            let mut dot = 0.0;
            for j in 0..d {
                let z: f64 = rng.sample(StandardNormal);
                let v = z * scales[j];
                features[(i, j)] = v;
                dot += v * w[j];
            }
            let mut b = if dot >= 0.0 { 1.0 } else { -1.0 };
            if rng.random::<f64>() < self.flip_prob {
                b = -b;
            }
            labels.push(b);
        }
        Dataset::new(features, labels)
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Logistic loss with the non-convex penalty `lambda * sum x_j^2 / (1 + x_j^2)`.
///
/// Smoothness: `L = (1/N) sum a a^T / 4 + 2 lambda I`. For a partition with
/// several layers the off-block entries are dropped and the block matrix is
/// inflated by `rho = lambda_max(B^{-1/2} L B^{-1/2})`, the smallest factor
/// with `rho B >= L`.
#[derive(Clone, Debug)]
pub struct LogisticProblem {
    data: Dataset,
    lambda: f64,
    full_smoothness: SpdMatrix,
    smoothness: BlockDiagMatrix,
    inflation: f64,
}

impl LogisticProblem {
    pub fn new(data: Dataset, lambda: f64, partition: &LayerPartition) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::InvalidArgument("empty dataset".into()));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("lambda = {lambda} must be >= 0")));
        }
        partition.check_dim(data.dim())?;
        let a = &data.features;
        let n = data.len() as f64;
        let gram = a.tr_mul(a) / (4.0 * n) + DMatrix::identity(data.dim(), data.dim()) * (2.0 * lambda);
        // Only the inflation step needs strict definiteness; with lambda = 0 the
        // estimate may be singular and is kept as is for a single layer.
        let full = SpdMatrix::new(gram)?;
        let block = BlockDiagMatrix::truncate(&full, partition)?;
        let (smoothness, inflation) = if partition.num_layers() == 1 {
            (block, 1.0)
        } else {
            let root = block.inv_sqrt()?.to_dense();
            let rho = root.congruence(&full)?.lambda_max().max(1.0);
            (block.scaled(rho)?, rho)
        };
        Ok(LogisticProblem {
            data,
            lambda,
            full_smoothness: full,
            smoothness,
            inflation,
        })
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// The dense smoothness estimate before block truncation.
    pub fn full_smoothness(&self) -> &SpdMatrix {
        &self.full_smoothness
    }

    /// Factor applied to the truncated blocks (1 for a single layer).
    pub fn inflation(&self) -> f64 {
        self.inflation
    }

    fn margins(&self, x: &[f64]) -> DVector<f64> {
        &self.data.features * DVector::from_column_slice(x)
    }

    pub fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let m = self.margins(x);
        let n = self.data.len() as f64;
        let w = DVector::from_fn(self.data.len(), |i, _| {
            let s = sigmoid(m[i]);
            s * (1.0 - s) / n
        });
        let a = &self.data.features;
        let weighted = DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] * w[i]);
        let mut h = a.tr_mul(&weighted);
        for (j, &xj) in x.iter().enumerate() {
            let s = 1.0 + xj * xj;
            h[(j, j)] += self.lambda * (2.0 - 6.0 * xj * xj) / (s * s * s);
        }
        h
    }
}

impl Objective for LogisticProblem {
    fn dim(&self) -> usize {
        self.data.dim()
    }

    fn value(&self, x: &[f64]) -> f64 {
        let m = self.margins(x);
        let loss: f64 = m
            .iter()
            .zip(&self.data.labels)
            .map(|(mi, b)| softplus(-b * mi))
            .sum::<f64>()
            / self.data.len() as f64;
        let reg: f64 = x.iter().map(|v| v * v / (1.0 + v * v)).sum();
        loss + self.lambda * reg
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let m = self.margins(x);
        let n = self.data.len() as f64;
        let c = DVector::from_fn(self.data.len(), |i, _| {
            let b = self.data.labels[i];
            -b * sigmoid(-b * m[i]) / n
        });
        let g = self.data.features.tr_mul(&c);
        x.iter()
            .enumerate()
            .map(|(j, &xj)| {
                let s = 1.0 + xj * xj;
                g[j] + self.lambda * 2.0 * xj / (s * s)
            })
            .collect()
    }

    fn smoothness(&self) -> &BlockDiagMatrix {
        &self.smoothness
    }
}

/// `f(x) = 1/2 x^T A x + b^T x + c` with strictly PD block-diagonal `A`;
/// its smoothness matrix is exactly `A`.
#[derive(Clone, Debug)]
pub struct QuadraticProblem {
    a: BlockDiagMatrix,
    b: Vec<f64>,
    c: f64,
    minimizer: Vec<f64>,
    f_inf: f64,
}

impl QuadraticProblem {
    pub fn new(a: BlockDiagMatrix, b: Vec<f64>) -> Result<Self> {
        Self::with_offset(a, b, 0.0)
    }

    pub fn with_offset(a: BlockDiagMatrix, b: Vec<f64>, c: f64) -> Result<Self> {
        a.partition().check_dim(b.len())?;
        if b.iter().any(|v| !v.is_finite()) || !c.is_finite() {
            return Err(Error::NonFinite("quadratic coefficients"));
        }
        let inv = a.inverse()?;
        let minimizer: Vec<f64> = inv.apply(&b)?.into_iter().map(|v| -v).collect();
        let f_inf = 0.5 * minimizer.iter().zip(&b).map(|(x, bi)| x * bi).sum::<f64>() + c;
        Ok(QuadraticProblem {
            a,
            b,
            c,
            minimizer,
            f_inf,
        })
    }

    /// `1/2 (x - x*)^T A (x - x*) + f_min`.
    pub fn centered(a: BlockDiagMatrix, center: &[f64], f_min: f64) -> Result<Self> {
        let ac = a.apply(center)?;
        let b: Vec<f64> = ac.iter().map(|v| -v).collect();
        let c = 0.5 * ac.iter().zip(center).map(|(x, y)| x * y).sum::<f64>() + f_min;
        Self::with_offset(a, b, c)
    }

    pub fn from_dense(a: SpdMatrix, b: Vec<f64>) -> Result<Self> {
        Self::new(BlockDiagMatrix::from(a), b)
    }

    pub fn matrix(&self) -> &BlockDiagMatrix {
        &self.a
    }

    pub fn linear(&self) -> &[f64] {
        &self.b
    }

    pub fn offset(&self) -> f64 {
        self.c
    }

    pub fn minimizer(&self) -> &[f64] {
        &self.minimizer
    }
}

impl Objective for QuadraticProblem {
    fn dim(&self) -> usize {
        self.b.len()
    }

    fn value(&self, x: &[f64]) -> f64 {
        let ax = self.a.apply(x).expect("dimension checked by caller");
        let quad: f64 = ax.iter().zip(x).map(|(u, v)| u * v).sum();
        let lin: f64 = self.b.iter().zip(x).map(|(u, v)| u * v).sum();
        0.5 * quad + lin + self.c
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = self.a.apply(x).expect("dimension checked by caller");
        for (gi, bi) in g.iter_mut().zip(&self.b) {
            *gi += bi;
        }
        g
    }

    fn smoothness(&self) -> &BlockDiagMatrix {
        &self.a
    }

    fn f_inf(&self) -> Option<f64> {
        Some(self.f_inf)
    }
}
