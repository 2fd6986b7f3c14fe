//! Dense symmetric positive (semi-)definite matrices and block-diagonal
//! compositions of them.
//!
//! All spectral quantities come from a full symmetric eigendecomposition
//! (nalgebra's `SymmetricEigen`: Householder tridiagonalization followed by
//! implicit symmetric QR steps with Wilkinson shifts). Matrices in this crate
//! are small (d up to a few hundred) so exactness wins over scalability.
//!
//! Construction validates the input: nearly-symmetric input is symmetrized,
//! anything with relative asymmetry above `1e-12` is rejected, and so is a
//! matrix whose smallest eigenvalue is below `-1e-10 * lambda_max`. There is no
//! silent projection onto the PSD cone.

use std::ops::Range;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative asymmetry accepted (and removed) by constructors.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// `lambda_min >= -PSD_TOL * lambda_max` is required of every `SpdMatrix`.
pub const PSD_TOL: f64 = 1e-10;
/// `lambda_min > STRICT_PD_TOL * lambda_max` marks a strictly definite matrix.
pub const STRICT_PD_TOL: f64 = 1e-12;

/// Eigenvalues (ascending) and matching orthonormal eigenvectors (columns).
#[derive(Clone, Debug)]
pub struct Eigen {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

/// Full symmetric eigendecomposition, eigenvalues sorted ascending.
pub fn symmetric_eigen(m: &DMatrix<f64>) -> Eigen {
    let d = m.nrows();
    if d == 0 {
        return Eigen {
            values: Vec::new(),
            vectors: DMatrix::zeros(0, 0),
        };
    }
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(d, d, |r, c| eig.eigenvectors[(r, order[c])]);
    Eigen { values, vectors }
}

/// Eigenvalues (ascending) of a symmetric matrix that need not be PSD.
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let mut v: Vec<f64> = m.clone().symmetric_eigenvalues().iter().copied().collect();
    v.sort_by(f64::total_cmp);
    v
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn check_finite(m: &DMatrix<f64>, what: &'static str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// A symmetric positive semi-definite `d x d` matrix.
///
/// Immutable after construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpdRepr", into = "SpdRepr")]
pub struct SpdMatrix {
    m: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
struct SpdRepr {
    dim: usize,
    rows: Vec<Vec<f64>>,
}

impl TryFrom<SpdRepr> for SpdMatrix {
    type Error = Error;

    fn try_from(r: SpdRepr) -> Result<Self> {
        if r.rows.len() != r.dim {
            return Err(Error::DimensionMismatch {
                expected: r.dim,
                found: r.rows.len(),
            });
        }
        SpdMatrix::from_rows(&r.rows)
    }
}

impl From<SpdMatrix> for SpdRepr {
    fn from(a: SpdMatrix) -> Self {
        SpdRepr {
            dim: a.dim(),
            rows: a.rows(),
        }
    }
}

impl SpdMatrix {
    /// Validates symmetry and positive semi-definiteness.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::NotSquare {
                rows: m.nrows(),
                cols: m.ncols(),
            });
        }
        if m.nrows() == 0 {
            return Err(Error::InvalidArgument("matrix dimension must be positive".into()));
        }
        check_finite(&m, "matrix entries")?;
        let d = m.nrows();
        let mut worst: f64 = 0.0;
        for i in 0..d {
            for j in (i + 1)..d {
                let a = m[(i, j)];
                let b = m[(j, i)];
                let rel = (a - b).abs() / a.abs().max(1.0);
                worst = worst.max(rel);
            }
        }
        if worst > SYMMETRY_TOL {
            return Err(Error::NotSymmetric { asymmetry: worst });
        }
        let m = symmetrize(&m);
        let ev = symmetric_eigenvalues(&m);
        let (lo, hi) = (ev[0], ev[d - 1]);
        if lo < -PSD_TOL * hi.max(0.0) {
            return Err(Error::NotPsd {
                lambda_min: lo,
                lambda_max: hi,
            });
        }
        Ok(SpdMatrix { m })
    }

    /// Like [`SpdMatrix::new`] but additionally requires strict definiteness.
    pub fn new_strict(m: DMatrix<f64>) -> Result<Self> {
        let a = Self::new(m)?;
        a.require_strict()?;
        Ok(a)
    }

    /// Wraps a product that is symmetric PSD by construction (congruences,
    /// expectations of congruences). Rounding asymmetry is averaged away.
    pub(crate) fn from_psd_product(m: DMatrix<f64>) -> Self {
        SpdMatrix { m: symmetrize(&m) }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.len();
        for r in rows {
            if r.len() != d {
                return Err(Error::NotSquare {
                    rows: d,
                    cols: r.len(),
                });
            }
        }
        Self::new(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
    }

    pub fn identity(d: usize) -> Self {
        SpdMatrix {
            m: DMatrix::identity(d, d),
        }
    }

    pub fn zeros(d: usize) -> Self {
        SpdMatrix {
            m: DMatrix::zeros(d, d),
        }
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        if diag.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("diagonal"));
        }
        if let Some(v) = diag.iter().find(|v| **v < 0.0) {
            return Err(Error::NotPsd {
                lambda_min: *v,
                lambda_max: diag.iter().copied().fold(f64::MIN, f64::max),
            });
        }
        Ok(SpdMatrix {
            m: DMatrix::from_diagonal(&DVector::from_column_slice(diag)),
        })
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.m
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.m[(i, j)]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim())
            .map(|i| (0..self.dim()).map(|j| self.m[(i, j)]).collect())
            .collect()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        self.m.diagonal().iter().copied().collect()
    }

    /// True if every off-diagonal entry is exactly zero.
    pub fn is_diagonal(&self) -> bool {
        let d = self.dim();
        (0..d).all(|i| (0..d).all(|j| i == j || self.m[(i, j)] == 0.0))
    }

    pub fn eigen(&self) -> Eigen {
        symmetric_eigen(&self.m)
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        symmetric_eigenvalues(&self.m)
    }

    pub fn lambda_max(&self) -> f64 {
        *self.eigenvalues().last().expect("dim > 0")
    }

    pub fn lambda_min(&self) -> f64 {
        self.eigenvalues()[0]
    }

    pub fn is_strictly_pd(&self) -> bool {
        let ev = self.eigenvalues();
        ev[0] > STRICT_PD_TOL * ev[ev.len() - 1]
    }

    fn require_strict(&self) -> Result<Vec<f64>> {
        let ev = self.eigenvalues();
        let (lo, hi) = (ev[0], ev[ev.len() - 1]);
        if lo > STRICT_PD_TOL * hi && lo > 0.0 {
            Ok(ev)
        } else {
            Err(Error::Singular {
                lambda_min: lo,
                lambda_max: hi,
            })
        }
    }

    fn spectral_map(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let Eigen { values, vectors } = self.eigen();
        let scaled = DMatrix::from_fn(self.dim(), self.dim(), |r, c| vectors[(r, c)] * f(values[c]));
        &scaled * vectors.transpose()
    }

    /// Principal square root `B` with `B * B = A`, via the eigendecomposition.
    /// Eigenvalues that are negative only through rounding are treated as 0.
    pub fn sqrt(&self) -> SpdMatrix {
        SpdMatrix::from_psd_product(self.spectral_map(|v| v.max(0.0).sqrt()))
    }

    /// `A^{-1/2}`; requires strict definiteness.
    pub fn inv_sqrt(&self) -> Result<SpdMatrix> {
        self.require_strict()?;
        Ok(SpdMatrix::from_psd_product(self.spectral_map(|v| 1.0 / v.sqrt())))
    }

    /// `A^{-1}` by Cholesky; requires strict definiteness.
    pub fn inverse(&self) -> Result<SpdMatrix> {
        let ev = self.require_strict()?;
        match self.m.clone().cholesky() {
            Some(ch) => Ok(SpdMatrix::from_psd_product(ch.inverse())),
            None => Err(Error::Singular {
                lambda_min: ev[0],
                lambda_max: ev[ev.len() - 1],
            }),
        }
    }

    /// `det(A)^{1/d}`, evaluated as `exp(mean(log lambda_i))`.
    pub fn det_root(&self) -> Result<f64> {
        let ev = self.require_strict()?;
        Ok((ev.iter().map(|v| v.ln()).sum::<f64>() / ev.len() as f64).exp())
    }

    /// `diag(A)` as a matrix.
    pub fn diag_part(&self) -> SpdMatrix {
        SpdMatrix {
            m: DMatrix::from_diagonal(&self.m.diagonal()),
        }
    }

    pub fn scaled(&self, alpha: f64) -> Result<SpdMatrix> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!("scale {alpha} must be finite and >= 0")));
        }
        Ok(SpdMatrix { m: &self.m * alpha })
    }

    /// `self * inner * self`, symmetric PSD whenever `inner` is.
    pub fn congruence(&self, inner: &SpdMatrix) -> Result<SpdMatrix> {
        same_dim(self.dim(), inner.dim())?;
        Ok(SpdMatrix::from_psd_product(&self.m * &inner.m * &self.m))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.m.norm()
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        same_dim(self.dim(), x.len())?;
        let d = self.dim();
        Ok((0..d)
            .map(|i| (0..d).map(|j| self.m[(i, j)] * x[j]).sum())
            .collect())
    }
}

fn same_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}

/// `<Qx, x>`, the squared `Q`-norm of `x`.
///
/// Tiny negative values caused by rounding (at most `1e-12 |x|^2 lambda_max(Q)`)
/// are clamped to zero.
pub fn weighted_norm_sq(x: &[f64], q: &SpdMatrix) -> Result<f64> {
    let qx = q.apply(x)?;
    let v: f64 = qx.iter().zip(x).map(|(a, b)| a * b).sum();
    Ok(v.max(0.0))
}

/// `lambda_min(B - A)`, positive when `A` is strictly below `B`.
pub fn loewner_slack(a: &SpdMatrix, b: &SpdMatrix) -> Result<f64> {
    same_dim(b.dim(), a.dim())?;
    Ok(symmetric_eigenvalues(&symmetrize(&(&b.m - &a.m)))[0])
}

/// `A <= B` in the Loewner order: `lambda_min(B - A) >= -tol * max(1, lambda_max(B))`.
pub fn loewner_leq(a: &SpdMatrix, b: &SpdMatrix, tol: f64) -> Result<bool> {
    if tol.is_nan() || tol < 0.0 {
        return Err(Error::InvalidArgument(format!("tolerance {tol} must be >= 0")));
    }
    let slack = loewner_slack(a, b)?;
    Ok(slack >= -tol * b.lambda_max().max(1.0))
}

/// Layer dimensions `d_1..d_l`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct LayerPartition {
    dims: Vec<usize>,
}

impl TryFrom<Vec<usize>> for LayerPartition {
    type Error = Error;

    fn try_from(dims: Vec<usize>) -> Result<Self> {
        LayerPartition::new(dims)
    }
}

impl From<LayerPartition> for Vec<usize> {
    fn from(p: LayerPartition) -> Self {
        p.dims
    }
}

impl LayerPartition {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::EmptyBlocks);
        }
        if dims.contains(&0) {
            return Err(Error::PartitionMismatch("layer dimensions must be positive".into()));
        }
        Ok(LayerPartition { dims })
    }

    pub fn single(d: usize) -> Self {
        assert!(d > 0, "dimension must be positive");
        LayerPartition { dims: vec![d] }
    }

    /// `l` layers of (nearly) equal width; the last layer takes the remainder.
    pub fn even(d: usize, layers: usize) -> Result<Self> {
        if layers == 0 || layers > d {
            return Err(Error::PartitionMismatch(format!(
                "cannot split dimension {d} into {layers} layers"
            )));
        }
        let base = d / layers;
        let mut dims = vec![base; layers];
        dims[layers - 1] += d - base * layers;
        Self::new(dims)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn num_layers(&self) -> usize {
        self.dims.len()
    }

    pub fn total_dim(&self) -> usize {
        self.dims.iter().sum()
    }

    pub fn ranges(&self) -> Vec<Range<usize>> {
        let mut start = 0;
        self.dims
            .iter()
            .map(|&d| {
                let r = start..start + d;
                start += d;
                r
            })
            .collect()
    }

    pub fn check_dim(&self, d: usize) -> Result<()> {
        if self.total_dim() == d {
            Ok(())
        } else {
            Err(Error::PartitionMismatch(format!(
                "partition {:?} sums to {}, expected {d}",
                self.dims,
                self.total_dim()
            )))
        }
    }
}

/// `Diag(A_1, ..., A_l)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BlockRepr", into = "BlockRepr")]
pub struct BlockDiagMatrix {
    blocks: Vec<SpdMatrix>,
    partition: LayerPartition,
}

#[derive(Serialize, Deserialize)]
struct BlockRepr {
    blocks: Vec<SpdMatrix>,
}

impl TryFrom<BlockRepr> for BlockDiagMatrix {
    type Error = Error;

    fn try_from(r: BlockRepr) -> Result<Self> {
        BlockDiagMatrix::compose(r.blocks)
    }
}

impl From<BlockDiagMatrix> for BlockRepr {
    fn from(b: BlockDiagMatrix) -> Self {
        BlockRepr { blocks: b.blocks }
    }
}

impl From<SpdMatrix> for BlockDiagMatrix {
    fn from(a: SpdMatrix) -> Self {
        BlockDiagMatrix {
            partition: LayerPartition::single(a.dim()),
            blocks: vec![a],
        }
    }
}

impl BlockDiagMatrix {
    pub fn compose(blocks: Vec<SpdMatrix>) -> Result<Self> {
        let partition = LayerPartition::new(blocks.iter().map(SpdMatrix::dim).collect())?;
        Ok(BlockDiagMatrix { blocks, partition })
    }

    pub fn identity(partition: &LayerPartition) -> Self {
        BlockDiagMatrix {
            blocks: partition.dims().iter().map(|&d| SpdMatrix::identity(d)).collect(),
            partition: partition.clone(),
        }
    }

    pub fn from_diagonal(partition: &LayerPartition, diag: &[f64]) -> Result<Self> {
        partition.check_dim(diag.len())?;
        let blocks = partition
            .ranges()
            .into_iter()
            .map(|r| SpdMatrix::from_diagonal(&diag[r]))
            .collect::<Result<Vec<_>>>()?;
        Self::compose(blocks)
    }

    /// Keeps only the diagonal blocks of a dense matrix.
    pub fn truncate(a: &SpdMatrix, partition: &LayerPartition) -> Result<Self> {
        partition.check_dim(a.dim())?;
        let blocks = partition
            .ranges()
            .into_iter()
            .map(|r| {
                let n = r.len();
                SpdMatrix::from_psd_product(a.as_matrix().view((r.start, r.start), (n, n)).into_owned())
            })
            .collect();
        Ok(BlockDiagMatrix {
            blocks,
            partition: partition.clone(),
        })
    }

    pub fn blocks(&self) -> &[SpdMatrix] {
        &self.blocks
    }

    pub fn block(&self, i: usize) -> &SpdMatrix {
        &self.blocks[i]
    }

    pub fn extract(&self, i: usize) -> Result<SpdMatrix> {
        self.blocks.get(i).cloned().ok_or_else(|| {
            Error::PartitionMismatch(format!("block {i} out of range ({} blocks)", self.blocks.len()))
        })
    }

    pub fn partition(&self) -> &LayerPartition {
        &self.partition
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn dim(&self) -> usize {
        self.partition.total_dim()
    }

    pub fn to_dense(&self) -> SpdMatrix {
        let d = self.dim();
        let mut m = DMatrix::zeros(d, d);
        for (b, r) in self.blocks.iter().zip(self.partition.ranges()) {
            m.view_mut((r.start, r.start), (r.len(), r.len())).copy_from(b.as_matrix());
        }
        SpdMatrix { m }
    }

    pub fn check_partition(&self, other: &LayerPartition) -> Result<()> {
        if &self.partition == other {
            Ok(())
        } else {
            Err(Error::PartitionMismatch(format!(
                "{:?} vs {:?}",
                self.partition.dims(),
                other.dims()
            )))
        }
    }

    pub fn lambda_max(&self) -> f64 {
        self.blocks.iter().map(SpdMatrix::lambda_max).fold(f64::MIN, f64::max)
    }

    pub fn lambda_min(&self) -> f64 {
        self.blocks.iter().map(SpdMatrix::lambda_min).fold(f64::MAX, f64::min)
    }

    pub fn is_strictly_pd(&self) -> bool {
        self.blocks.iter().all(SpdMatrix::is_strictly_pd)
    }

    pub fn is_diagonal(&self) -> bool {
        self.blocks.iter().all(SpdMatrix::is_diagonal)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        self.blocks.iter().flat_map(|b| b.diagonal()).collect()
    }

    /// `det(A)^{1/d}` from the per-block roots: `exp(sum d_i log r_i / d)`.
    pub fn det_root(&self) -> Result<f64> {
        let d = self.dim() as f64;
        let mut acc = 0.0;
        for b in &self.blocks {
            acc += b.dim() as f64 * b.det_root()?.ln();
        }
        Ok((acc / d).exp())
    }

    pub fn map_blocks(&self, f: impl Fn(&SpdMatrix) -> Result<SpdMatrix>) -> Result<Self> {
        let blocks = self.blocks.iter().map(f).collect::<Result<Vec<_>>>()?;
        for (b, &d) in blocks.iter().zip(self.partition.dims()) {
            same_dim(d, b.dim())?;
        }
        Ok(BlockDiagMatrix {
            blocks,
            partition: self.partition.clone(),
        })
    }

    pub fn sqrt(&self) -> Self {
        self.map_blocks(|b| Ok(b.sqrt())).expect("shape preserved")
    }

    pub fn inv_sqrt(&self) -> Result<Self> {
        self.map_blocks(SpdMatrix::inv_sqrt)
    }

    pub fn inverse(&self) -> Result<Self> {
        self.map_blocks(SpdMatrix::inverse)
    }

    pub fn diag_part(&self) -> Self {
        self.map_blocks(|b| Ok(b.diag_part())).expect("shape preserved")
    }

    pub fn scaled(&self, alpha: f64) -> Result<Self> {
        self.map_blocks(|b| b.scaled(alpha))
    }

    /// Scales block `i` by `alphas[i]`.
    pub fn scaled_per_block(&self, alphas: &[f64]) -> Result<Self> {
        same_dim(self.num_blocks(), alphas.len())?;
        let blocks = self
            .blocks
            .iter()
            .zip(alphas)
            .map(|(b, &a)| b.scaled(a))
            .collect::<Result<Vec<_>>>()?;
        Ok(BlockDiagMatrix {
            blocks,
            partition: self.partition.clone(),
        })
    }

    /// Blockwise `self * inner * self`.
    pub fn congruence(&self, inner: &BlockDiagMatrix) -> Result<Self> {
        inner.check_partition(&self.partition)?;
        let blocks = self
            .blocks
            .iter()
            .zip(&inner.blocks)
            .map(|(a, m)| a.congruence(m))
            .collect::<Result<Vec<_>>>()?;
        Ok(BlockDiagMatrix {
            blocks,
            partition: self.partition.clone(),
        })
    }

    /// Entrywise mean of matrices sharing one partition.
    pub fn mean(ms: &[BlockDiagMatrix]) -> Result<Self> {
        let first = ms.first().ok_or(Error::EmptyBlocks)?;
        let n = ms.len() as f64;
        let mut acc: Vec<DMatrix<f64>> = first.blocks.iter().map(|b| b.m.clone()).collect();
        for m in &ms[1..] {
            m.check_partition(&first.partition)?;
            for (a, b) in acc.iter_mut().zip(&m.blocks) {
                *a += &b.m;
            }
        }
        Ok(BlockDiagMatrix {
            blocks: acc.into_iter().map(|a| SpdMatrix::from_psd_product(a / n)).collect(),
            partition: first.partition.clone(),
        })
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        same_dim(self.dim(), x.len())?;
        let mut out = vec![0.0; x.len()];
        self.apply_into(x, &mut out);
        Ok(out)
    }

    /// Blockwise matrix-vector product; `x` and `out` must have length `dim`.
    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        for (b, r) in self.blocks.iter().zip(self.partition.ranges()) {
            let m = b.as_matrix();
            let n = r.len();
            for i in 0..n {
                let mut s = 0.0;
                for j in 0..n {
                    s += m[(i, j)] * x[r.start + j];
                }
                out[r.start + i] = s;
            }
        }
    }
}

/// Blockwise `lambda_min(B - A)`: the smallest slack over all blocks.
pub fn block_loewner_slack(a: &BlockDiagMatrix, b: &BlockDiagMatrix) -> Result<f64> {
    a.check_partition(b.partition())?;
    let mut worst = f64::INFINITY;
    for (x, y) in a.blocks().iter().zip(b.blocks()) {
        worst = worst.min(loewner_slack(x, y)?);
    }
    Ok(worst)
}

/// Blockwise [`loewner_leq`], with the tolerance scaled by `max(1, lambda_max(B))`.
pub fn block_loewner_leq(a: &BlockDiagMatrix, b: &BlockDiagMatrix, tol: f64) -> Result<bool> {
    if tol.is_nan() || tol < 0.0 {
        return Err(Error::InvalidArgument(format!("tolerance {tol} must be >= 0")));
    }
    Ok(block_loewner_slack(a, b)? >= -tol * b.lambda_max().max(1.0))
}

/// `G^T G + 1e-3 I` with standard-normal `G`: a reproducible strictly-PD instance.
pub fn random_spd<R: Rng + ?Sized>(d: usize, rng: &mut R) -> SpdMatrix {
    let g = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    SpdMatrix::from_psd_product(g.transpose() * &g + DMatrix::identity(d, d) * 1e-3)
}

/// Random block-diagonal strictly-PD matrix with the given partition.
pub fn random_block_spd<R: Rng + ?Sized>(partition: &LayerPartition, rng: &mut R) -> BlockDiagMatrix {
    BlockDiagMatrix::compose(partition.dims().iter().map(|&d| random_spd(d, rng)).collect())
        .expect("partition is non-empty")
}
