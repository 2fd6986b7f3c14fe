//! Random sketch distributions: unbiased, symmetric, PSD, drawn i.i.d.
//!
//! A [`SketchSpec`] assigns one [`LayerSketch`] to every layer of a
//! [`LayerPartition`]; the full sketch is the block-diagonal composition of
//! independent per-layer draws.
//!
//! Besides sampling, the module evaluates `E[S M S]` and `E[(S - I) M (S - I)]`
//! in closed form. These expectations back every stepsize condition.

use nalgebra::DMatrix;
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{BlockDiagMatrix, LayerPartition, SpdMatrix};
use crate::rng::StreamFactory;

/// Largest number of outcomes [`SketchSpec::as_finite_discrete`] will enumerate per layer.
pub const MAX_ENUMERATED_OUTCOMES: usize = 10_000;

const PROB_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub matrix: SpdMatrix,
    pub prob: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSketch {
    Identity,
    /// `k` coordinates chosen uniformly without replacement, scaled by `d/k`.
    RandK { k: usize },
    /// The whole layer scaled by `1/q` with probability `q`, zero otherwise.
    Bernoulli { q: f64 },
    /// Explicit outcome list, sampled by inverse CDF in listed order.
    FiniteDiscrete { outcomes: Vec<Outcome> },
}

impl LayerSketch {
    fn validate(&self, d: usize) -> Result<()> {
        match self {
            LayerSketch::Identity => Ok(()),
            LayerSketch::RandK { k } => {
                if *k == 0 || *k > d {
                    Err(Error::InvalidSketch(format!("rand-k needs 1 <= k <= {d}, got k = {k}")))
                } else {
                    Ok(())
                }
            }
            LayerSketch::Bernoulli { q } => {
                if *q > 0.0 && *q <= 1.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidSketch(format!("bernoulli needs 0 < q <= 1, got q = {q}")))
                }
            }
            LayerSketch::FiniteDiscrete { outcomes } => {
                if outcomes.is_empty() {
                    return Err(Error::InvalidSketch("finite-discrete sketch has no outcomes".into()));
                }
                let mut total = 0.0;
                let mut mean = DMatrix::<f64>::zeros(d, d);
                for o in outcomes {
                    if o.matrix.dim() != d {
                        return Err(Error::DimensionMismatch {
                            expected: d,
                            found: o.matrix.dim(),
                        });
                    }
                    if !(o.prob >= 0.0 && o.prob <= 1.0) {
                        return Err(Error::InvalidSketch(format!("probability {} outside [0, 1]", o.prob)));
                    }
                    total += o.prob;
                    mean += o.matrix.as_matrix() * o.prob;
                }
                if (total - 1.0).abs() > PROB_TOL {
                    return Err(Error::InvalidSketch(format!("probabilities sum to {total}")));
                }
                let bias = (mean - DMatrix::identity(d, d)).amax();
                if bias > PROB_TOL {
                    return Err(Error::InvalidSketch(format!(
                        "outcomes are biased: max |E[S] - I| = {bias:e}"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Expected number of transmitted coordinates for a layer of width `d`.
    pub fn expected_coordinates(&self, d: usize) -> f64 {
        match self {
            LayerSketch::Identity => d as f64,
            LayerSketch::RandK { k } => *k as f64,
            LayerSketch::Bernoulli { q } => q * d as f64,
            LayerSketch::FiniteDiscrete { outcomes } => outcomes
                .iter()
                .map(|o| o.prob * support_size(&o.matrix) as f64)
                .sum(),
        }
    }

    fn is_diagonal(&self) -> bool {
        match self {
            LayerSketch::FiniteDiscrete { outcomes } => outcomes.iter().all(|o| o.matrix.is_diagonal()),
            _ => true,
        }
    }

    /// `E[S M S]` for this layer.
    fn expected_conjugation(&self, m: &SpdMatrix) -> SpdMatrix {
        let d = m.dim();
        match self {
            LayerSketch::Identity => m.clone(),
            LayerSketch::RandK { k } => {
                if d == 1 {
                    return m.clone();
                }
                let (d, k) = (d as f64, *k as f64);
                let scale = d / k;
                let diag_w = scale * (d - k) / (d - 1.0);
                let full_w = scale * (k - 1.0) / (d - 1.0);
                let a = m.as_matrix();
                SpdMatrix::from_psd_product(DMatrix::from_fn(m.dim(), m.dim(), |i, j| {
                    if i == j {
                        diag_w * a[(i, i)] + full_w * a[(i, i)]
                    } else {
                        full_w * a[(i, j)]
                    }
                }))
            }
            LayerSketch::Bernoulli { q } => SpdMatrix::from_psd_product(m.as_matrix() / *q),
            LayerSketch::FiniteDiscrete { outcomes } => {
                let mut acc = DMatrix::zeros(d, d);
                for o in outcomes {
                    let s = o.matrix.as_matrix();
                    acc += (s * m.as_matrix() * s) * o.prob;
                }
                SpdMatrix::from_psd_product(acc)
            }
        }
    }

    fn outcome_count(&self, d: usize) -> u128 {
        match self {
            LayerSketch::Identity => 1,
            LayerSketch::RandK { k } => binomial(d as u64, *k as u64),
            LayerSketch::Bernoulli { q } => {
                if *q < 1.0 {
                    2
                } else {
                    1
                }
            }
            LayerSketch::FiniteDiscrete { outcomes } => outcomes.len() as u128,
        }
    }

    fn enumerate(&self, d: usize) -> Result<Vec<Outcome>> {
        let count = self.outcome_count(d);
        if count > MAX_ENUMERATED_OUTCOMES as u128 {
            return Err(Error::OutcomeOverflow {
                count,
                limit: MAX_ENUMERATED_OUTCOMES,
            });
        }
        Ok(match self {
            LayerSketch::Identity => vec![Outcome {
                matrix: SpdMatrix::identity(d),
                prob: 1.0,
            }],
            LayerSketch::RandK { k } => {
                let scale = d as f64 / *k as f64;
                let prob = 1.0 / count as f64;
                subsets(d, *k)
                    .into_iter()
                    .map(|set| {
                        let mut diag = vec![0.0; d];
                        for i in set {
                            diag[i] = scale;
                        }
                        Outcome {
                            matrix: SpdMatrix::from_diagonal(&diag).expect("nonnegative diagonal"),
                            prob,
                        }
                    })
                    .collect()
            }
            LayerSketch::Bernoulli { q } => {
                let mut out = Vec::with_capacity(2);
                if *q < 1.0 {
                    out.push(Outcome {
                        matrix: SpdMatrix::zeros(d),
                        prob: 1.0 - q,
                    });
                }
                out.push(Outcome {
                    matrix: SpdMatrix::identity(d).scaled(1.0 / q)?,
                    prob: *q,
                });
                out
            }
            LayerSketch::FiniteDiscrete { outcomes } => outcomes.clone(),
        })
    }

    fn sample<R: Rng + ?Sized>(&self, d: usize, rng: &mut R) -> LayerDraw {
        match self {
            LayerSketch::Identity => LayerDraw::Identity { dim: d },
            LayerSketch::RandK { k } => {
                let mut indices = index::sample(rng, d, *k).into_vec();
                indices.sort_unstable();
                LayerDraw::Coordinates {
                    dim: d,
                    indices,
                    scale: d as f64 / *k as f64,
                }
            }
            LayerSketch::Bernoulli { q } => {
                let keep = rng.random::<f64>() < *q;
                LayerDraw::Scaled {
                    dim: d,
                    factor: if keep { 1.0 / q } else { 0.0 },
                }
            }
            LayerSketch::FiniteDiscrete { outcomes } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut pick = outcomes.len() - 1;
                for (i, o) in outcomes.iter().enumerate() {
                    acc += o.prob;
                    if u < acc {
                        pick = i;
                        break;
                    }
                }
                LayerDraw::Dense(outcomes[pick].matrix.clone())
            }
        }
    }
}

/// Rows of `m` with at least one nonzero entry.
fn support_size(m: &SpdMatrix) -> usize {
    let a = m.as_matrix();
    (0..m.dim())
        .filter(|&i| (0..m.dim()).any(|j| a[(i, j)] != 0.0))
        .count()
}

pub(crate) fn binomial(n: u64, k: u64) -> u128 {
    let k = k.min(n - k.min(n));
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul((n - i) as u128) / (i + 1) as u128;
    }
    acc
}

/// All `k`-subsets of `0..n` in lexicographic order.
fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..k).collect();
    loop {
        out.push(cur.clone());
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if cur[i] != i + n - k {
                break;
            }
            if i == 0 {
                return out;
            }
        }
        cur[i] += 1;
        for j in i + 1..k {
            cur[j] = cur[j - 1] + 1;
        }
    }
}

/// A distribution over block-diagonal sketch matrices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpecRepr", into = "SpecRepr")]
pub struct SketchSpec {
    partition: LayerPartition,
    layers: Vec<LayerSketch>,
}

#[derive(Serialize, Deserialize)]
struct SpecRepr {
    dims: LayerPartition,
    layers: Vec<LayerSketch>,
}

impl TryFrom<SpecRepr> for SketchSpec {
    type Error = Error;

    fn try_from(r: SpecRepr) -> Result<Self> {
        SketchSpec::new(r.dims, r.layers)
    }
}

impl From<SketchSpec> for SpecRepr {
    fn from(s: SketchSpec) -> Self {
        SpecRepr {
            dims: s.partition,
            layers: s.layers,
        }
    }
}

/// The on-disk form `{"layers": [...]}`; the partition comes from the problem.
/// A single layer entry is broadcast to every layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SketchConfig {
    pub layers: Vec<LayerSketch>,
}

impl SketchConfig {
    pub fn into_spec(self, partition: &LayerPartition) -> Result<SketchSpec> {
        let layers = if self.layers.len() == 1 && partition.num_layers() > 1 {
            vec![self.layers[0].clone(); partition.num_layers()]
        } else {
            self.layers
        };
        SketchSpec::new(partition.clone(), layers)
    }
}

impl SketchSpec {
    pub fn new(partition: LayerPartition, layers: Vec<LayerSketch>) -> Result<Self> {
        if layers.len() != partition.num_layers() {
            return Err(Error::PartitionMismatch(format!(
                "{} sketch layers for {} partition layers",
                layers.len(),
                partition.num_layers()
            )));
        }
        for (l, &d) in layers.iter().zip(partition.dims()) {
            l.validate(d)?;
        }
        Ok(SketchSpec { partition, layers })
    }

    /// The same layer sketch on every layer.
    pub fn uniform(partition: &LayerPartition, layer: LayerSketch) -> Result<Self> {
        Self::new(partition.clone(), vec![layer; partition.num_layers()])
    }

    pub fn identity(partition: &LayerPartition) -> Self {
        Self::uniform(partition, LayerSketch::Identity).expect("identity is always valid")
    }

    pub fn partition(&self) -> &LayerPartition {
        &self.partition
    }

    pub fn layers(&self) -> &[LayerSketch] {
        &self.layers
    }

    pub fn dim(&self) -> usize {
        self.partition.total_dim()
    }

    pub fn is_identity(&self) -> bool {
        self.layers.iter().all(|l| matches!(l, LayerSketch::Identity))
    }

    /// Every realization is a diagonal matrix.
    pub fn is_diagonal(&self) -> bool {
        self.layers.iter().all(LayerSketch::is_diagonal)
    }

    pub fn expected_coordinates(&self) -> f64 {
        self.layers
            .iter()
            .zip(self.partition.dims())
            .map(|(l, &d)| l.expected_coordinates(d))
            .sum()
    }

    /// Draws all layers from one stream.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> SketchSample {
        let draws = self
            .layers
            .iter()
            .zip(self.partition.dims())
            .map(|(l, &d)| l.sample(d, rng))
            .collect();
        SketchSample::from_draws(draws)
    }

    /// Draws layer `i` from substream `(client, iteration, i)`.
    pub fn sample_stream(&self, streams: &StreamFactory, client: u64, iteration: u64) -> SketchSample {
        let draws = self
            .layers
            .iter()
            .zip(self.partition.dims())
            .enumerate()
            .map(|(i, (l, &d))| {
                let mut rng = streams.stream(client, iteration, i as u64);
                l.sample(d, &mut rng)
            })
            .collect();
        SketchSample::from_draws(draws)
    }

    /// `E[S M S]`, blockwise and in closed form.
    pub fn expected_conjugation(&self, m: &BlockDiagMatrix) -> Result<BlockDiagMatrix> {
        m.check_partition(&self.partition)?;
        let blocks = self
            .layers
            .iter()
            .zip(m.blocks())
            .map(|(l, b)| l.expected_conjugation(b))
            .collect();
        BlockDiagMatrix::compose(blocks)
    }

    /// `E[(S - I) M (S - I)] = E[S M S] - M`, using `E[S] = I`.
    pub fn expected_centered_conjugation(&self, m: &BlockDiagMatrix) -> Result<BlockDiagMatrix> {
        let e = self.expected_conjugation(m)?;
        let blocks = e
            .blocks()
            .iter()
            .zip(m.blocks())
            .map(|(a, b)| SpdMatrix::from_psd_product(a.as_matrix() - b.as_matrix()))
            .collect();
        BlockDiagMatrix::compose(blocks)
    }

    /// `omega = lambda_max(E[S^T S]) - 1`.
    pub fn omega(&self) -> f64 {
        let e = self
            .expected_conjugation(&BlockDiagMatrix::identity(&self.partition))
            .expect("partition matches");
        e.lambda_max() - 1.0
    }

    /// The same distribution written as explicit outcome lists per layer.
    pub fn as_finite_discrete(&self) -> Result<SketchSpec> {
        let layers = self
            .layers
            .iter()
            .zip(self.partition.dims())
            .map(|(l, &d)| Ok(LayerSketch::FiniteDiscrete { outcomes: l.enumerate(d)? }))
            .collect::<Result<Vec<_>>>()?;
        SketchSpec::new(self.partition.clone(), layers)
    }

    /// Joint outcomes of the whole block sketch (product over layers) with
    /// their probabilities. Fails when the product exceeds the enumeration limit.
    pub fn joint_outcomes(&self) -> Result<Vec<(BlockDiagMatrix, f64)>> {
        let per_layer = self
            .layers
            .iter()
            .zip(self.partition.dims())
            .map(|(l, &d)| l.enumerate(d))
            .collect::<Result<Vec<_>>>()?;
        let total: u128 = per_layer.iter().map(|o| o.len() as u128).product();
        if total > MAX_ENUMERATED_OUTCOMES as u128 {
            return Err(Error::OutcomeOverflow {
                count: total,
                limit: MAX_ENUMERATED_OUTCOMES,
            });
        }
        let mut acc: Vec<(Vec<SpdMatrix>, f64)> = vec![(Vec::new(), 1.0)];
        for outcomes in per_layer {
            acc = acc
                .into_iter()
                .flat_map(|(blocks, p)| {
                    outcomes.iter().map(move |o| {
                        let mut b = blocks.clone();
                        b.push(o.matrix.clone());
                        (b, p * o.prob)
                    })
                })
                .collect();
        }
        acc.into_iter()
            .map(|(b, p)| Ok((BlockDiagMatrix::compose(b)?, p)))
            .collect()
    }
}

/// One realized layer of a sketch.
#[derive(Clone, Debug, PartialEq)]
pub enum LayerDraw {
    Identity { dim: usize },
    /// `scale` on the listed (sorted) coordinates, zero elsewhere.
    Coordinates { dim: usize, indices: Vec<usize>, scale: f64 },
    /// `factor * I`.
    Scaled { dim: usize, factor: f64 },
    Dense(SpdMatrix),
}

impl LayerDraw {
    pub fn dim(&self) -> usize {
        match self {
            LayerDraw::Identity { dim } | LayerDraw::Coordinates { dim, .. } | LayerDraw::Scaled { dim, .. } => *dim,
            LayerDraw::Dense(m) => m.dim(),
        }
    }

    pub fn nonzero_coordinates(&self) -> usize {
        match self {
            LayerDraw::Identity { dim } => *dim,
            LayerDraw::Coordinates { indices, .. } => indices.len(),
            LayerDraw::Scaled { dim, factor } => {
                if *factor == 0.0 {
                    0
                } else {
                    *dim
                }
            }
            LayerDraw::Dense(m) => support_size(m),
        }
    }

    fn index_bits(&self) -> u64 {
        match self {
            LayerDraw::Coordinates { dim, indices, .. } => {
                let c = binomial(*dim as u64, indices.len() as u64);
                if c <= 1 {
                    0
                } else {
                    128 - (c - 1).leading_zeros() as u64
                }
            }
            _ => 0,
        }
    }

    fn write_diagonal(&self, out: &mut Vec<f64>) -> bool {
        match self {
            LayerDraw::Identity { dim } => out.extend(std::iter::repeat_n(1.0, *dim)),
            LayerDraw::Coordinates { dim, indices, scale } => {
                let start = out.len();
                out.extend(std::iter::repeat_n(0.0, *dim));
                for &i in indices {
                    out[start + i] = *scale;
                }
            }
            LayerDraw::Scaled { dim, factor } => out.extend(std::iter::repeat_n(*factor, *dim)),
            LayerDraw::Dense(m) => {
                if !m.is_diagonal() {
                    return false;
                }
                out.extend(m.diagonal());
            }
        }
        true
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        match self {
            LayerDraw::Identity { .. } => out.copy_from_slice(x),
            LayerDraw::Coordinates { indices, scale, .. } => {
                out.fill(0.0);
                for &i in indices {
                    out[i] = scale * x[i];
                }
            }
            LayerDraw::Scaled { factor, .. } => {
                for (o, v) in out.iter_mut().zip(x) {
                    *o = factor * v;
                }
            }
            LayerDraw::Dense(m) => {
                let a = m.as_matrix();
                for (i, o) in out.iter_mut().enumerate() {
                    *o = (0..x.len()).map(|j| a[(i, j)] * x[j]).sum();
                }
            }
        }
    }

    fn matrix(&self) -> SpdMatrix {
        match self {
            LayerDraw::Dense(m) => m.clone(),
            _ => {
                let mut diag = Vec::with_capacity(self.dim());
                self.write_diagonal(&mut diag);
                SpdMatrix::from_diagonal(&diag).expect("nonnegative diagonal")
            }
        }
    }
}

/// One realization `S` of a [`SketchSpec`].
#[derive(Clone, Debug, PartialEq)]
pub struct SketchSample {
    pub draws: Vec<LayerDraw>,
    /// Coordinates the compressed message carries.
    pub nonzero_coordinates: usize,
    /// `sum ceil(log2 C(d_i, k_i))` over rand-k layers.
    pub index_bits: u64,
}

impl SketchSample {
    fn from_draws(draws: Vec<LayerDraw>) -> Self {
        let nonzero_coordinates = draws.iter().map(LayerDraw::nonzero_coordinates).sum();
        let index_bits = draws.iter().map(LayerDraw::index_bits).sum();
        SketchSample {
            draws,
            nonzero_coordinates,
            index_bits,
        }
    }

    pub fn dim(&self) -> usize {
        self.draws.iter().map(LayerDraw::dim).sum()
    }

    pub fn matrix(&self) -> BlockDiagMatrix {
        BlockDiagMatrix::compose(self.draws.iter().map(LayerDraw::matrix).collect()).expect("at least one layer")
    }

    /// The diagonal of `S` if every layer draw is diagonal.
    pub fn diagonal(&self) -> Option<Vec<f64>> {
        let mut out = Vec::with_capacity(self.dim());
        for d in &self.draws {
            if !d.write_diagonal(&mut out) {
                return None;
            }
        }
        Some(out)
    }

    /// `out = S x`.
    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        let mut start = 0;
        for d in &self.draws {
            let n = d.dim();
            d.apply(&x[start..start + n], &mut out[start..start + n]);
            start += n;
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.apply_into(x, &mut out);
        out
    }
}
