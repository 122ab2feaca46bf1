//! Dense order-p tensors, factor matrices and the spiked-tensor generator.
//!
//! Storage is row-major (last index fastest). The signal scale uses the
//! geometric mean `N` of the mode sizes so that non-cubic shapes keep the
//! same per-entry scaling as cubic ones.

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

/// Mode sizes of an order-p tensor together with the derived geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct TensorShape {
    dims: Vec<usize>,
    strides: Vec<usize>,
    geo_mean: f64,
    ratios: Vec<f64>,
}

impl TensorShape {
    pub fn new(dims: &[usize]) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::InvalidShape("no dimensions given".into()));
        }
        if dims.len() < 2 {
            return Err(Error::InvalidShape(format!(
                "tensor order must be at least 2, got {}",
                dims.len()
            )));
        }
        if let Some(pos) = dims.iter().position(|&d| d == 0) {
            return Err(Error::InvalidShape(format!("dimension {pos} is zero")));
        }
        let p = dims.len() as f64;
        // log-domain mean keeps prod(n) == 1 to ~1e-15 for large shapes
        let log_mean = dims.iter().map(|&d| (d as f64).ln()).sum::<f64>() / p;
        let geo_mean = log_mean.exp();
        let ratios = dims
            .iter()
            .map(|&d| ((d as f64).ln() - log_mean).exp())
            .collect();
        let mut strides = vec![1; dims.len()];
        for a in (0..dims.len() - 1).rev() {
            strides[a] = strides[a + 1] * dims[a + 1];
        }
        Ok(Self {
            dims: dims.to_vec(),
            strides,
            geo_mean,
            ratios,
        })
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn dim(&self, mode: usize) -> usize {
        self.dims[mode]
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    /// Geometric mean `N` of the mode sizes.
    pub fn geo_mean(&self) -> f64 {
        self.geo_mean
    }

    /// `n_α = N_α / N`.
    pub fn ratios(&self) -> &[f64] {
        &self.ratios
    }

    pub fn ratio(&self, mode: usize) -> f64 {
        self.ratios[mode]
    }

    /// Total number of entries.
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn is_cubic(&self) -> bool {
        self.dims.iter().all(|&d| d == self.dims[0])
    }

    /// `N^{-(p-1)/2}`, the per-entry amplitude of the planted signal.
    pub fn signal_scale(&self) -> f64 {
        self.geo_mean.powf(-((self.order() - 1) as f64) / 2.0)
    }

    pub fn flat_index(&self, index: &[usize]) -> usize {
        index.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut out = vec![0; self.order()];
        for (a, s) in self.strides.iter().enumerate() {
            out[a] = flat / s;
            flat %= s;
        }
        out
    }
}

impl TryFrom<Vec<usize>> for TensorShape {
    type Error = Error;
    fn try_from(dims: Vec<usize>) -> Result<Self> {
        TensorShape::new(&dims)
    }
}

impl From<TensorShape> for Vec<usize> {
    fn from(s: TensorShape) -> Self {
        s.dims
    }
}

pub fn make_shape(dims: &[usize]) -> Result<TensorShape> {
    TensorShape::new(dims)
}

/// Dense tensor with row-major storage.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: TensorShape,
    values: Vec<f64>,
}

impl DenseTensor {
    pub fn new(shape: TensorShape, values: Vec<f64>) -> Result<Self> {
        if values.len() != shape.len() {
            return Err(Error::InvalidArgument(format!(
                "{} values for a tensor with {} entries",
                values.len(),
                shape.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("tensor contains non-finite values".into()));
        }
        Ok(Self { shape, values })
    }

    pub fn zeros(shape: TensorShape) -> Self {
        let values = vec![0.0; shape.len()];
        Self { shape, values }
    }

    pub fn shape(&self) -> &TensorShape {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        self.values[self.shape.flat_index(index)]
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn dot(&self, other: &DenseTensor) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }

    /// `‖self − other‖²`.
    pub fn dist_sq(&self, other: &DenseTensor) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }
}

/// Per-mode factor matrices; mode α is `N_α × r`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorSet {
    shape: TensorShape,
    rank: usize,
    factors: Vec<DMatrix<f64>>,
}

impl FactorSet {
    pub fn new(shape: TensorShape, factors: Vec<DMatrix<f64>>) -> Result<Self> {
        if factors.len() != shape.order() {
            return Err(Error::InvalidArgument(format!(
                "{} factor matrices for an order-{} tensor",
                factors.len(),
                shape.order()
            )));
        }
        let rank = factors[0].ncols();
        if rank == 0 {
            return Err(Error::InvalidArgument("rank must be at least 1".into()));
        }
        for (a, f) in factors.iter().enumerate() {
            if f.nrows() != shape.dim(a) || f.ncols() != rank {
                return Err(Error::InvalidArgument(format!(
                    "mode {a} factor is {}x{}, expected {}x{rank}",
                    f.nrows(),
                    f.ncols(),
                    shape.dim(a)
                )));
            }
            if f.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "mode {a} factor has non-finite entries"
                )));
            }
        }
        Ok(Self {
            shape,
            rank,
            factors,
        })
    }

    pub fn zeros(shape: TensorShape, rank: usize) -> Self {
        let factors = shape
            .dims()
            .iter()
            .map(|&d| DMatrix::zeros(d, rank))
            .collect();
        Self {
            shape,
            rank,
            factors,
        }
    }

    pub fn shape(&self) -> &TensorShape {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn order(&self) -> usize {
        self.factors.len()
    }

    pub fn mode(&self, mode: usize) -> &DMatrix<f64> {
        &self.factors[mode]
    }

    pub fn modes(&self) -> &[DMatrix<f64>] {
        &self.factors
    }

    pub fn into_modes(self) -> Vec<DMatrix<f64>> {
        self.factors
    }

    /// Replaces one mode's factor; the new matrix must keep its shape.
    pub fn set_mode(&mut self, mode: usize, factor: DMatrix<f64>) -> Result<()> {
        if factor.shape() != self.factors[mode].shape() {
            return Err(Error::InvalidArgument(format!(
                "mode {mode} factor must stay {}x{}",
                self.shape.dim(mode),
                self.rank
            )));
        }
        self.factors[mode] = factor;
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.factors.iter().all(|f| f.iter().all(|v| v.is_finite()))
    }

    fn check_compatible(&self, other: &FactorSet) -> Result<()> {
        if self.shape.dims() != other.shape.dims() || self.rank != other.rank {
            return Err(Error::InvalidArgument(format!(
                "factor sets differ: dims {:?} rank {} vs dims {:?} rank {}",
                self.shape.dims(),
                self.rank,
                other.shape.dims(),
                other.rank
            )));
        }
        Ok(())
    }

    /// Largest per-mode relative Frobenius change from `previous`.
    pub fn max_relative_change(&self, previous: &FactorSet) -> Result<f64> {
        self.check_compatible(previous)?;
        Ok(self
            .factors
            .iter()
            .zip(&previous.factors)
            .map(|(new, old)| (new - old).norm() / (old.norm() + 1e-12))
            .fold(0.0, f64::max))
    }

    /// Largest absolute entrywise difference.
    pub fn max_abs_diff(&self, other: &FactorSet) -> Result<f64> {
        self.check_compatible(other)?;
        Ok(self
            .factors
            .iter()
            .zip(&other.factors)
            .map(|(a, b)| (a - b).amax())
            .fold(0.0, f64::max))
    }
}

/// Noisy observation `Y = w + √Δ ε`.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    tensor: DenseTensor,
    delta: f64,
}

impl Observation {
    pub fn new(tensor: DenseTensor, delta: f64) -> Result<Self> {
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "noise variance must be positive, got {delta}"
            )));
        }
        Ok(Self { tensor, delta })
    }

    pub fn tensor(&self) -> &DenseTensor {
        &self.tensor
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn shape(&self) -> &TensorShape {
        self.tensor.shape()
    }
}

/// `w_a = N^{-(p-1)/2} Σ_ρ Π_α x_{α i_α}^ρ`.
pub fn low_rank_tensor(factors: &FactorSet) -> DenseTensor {
    let shape = factors.shape().clone();
    let scale = shape.signal_scale();
    let mut out = vec![0.0; shape.len()];
    let mut cur = Vec::with_capacity(shape.len());
    let mut next = Vec::with_capacity(shape.len());
    for rho in 0..factors.rank() {
        cur.clear();
        cur.extend(factors.mode(0).column(rho).iter().copied());
        for a in 1..shape.order() {
            let col = factors.mode(a).column(rho);
            next.clear();
            for &c in &cur {
                next.extend(col.iter().map(|&x| c * x));
            }
            std::mem::swap(&mut cur, &mut next);
        }
        for (o, c) in out.iter_mut().zip(&cur) {
            *o += scale * c;
        }
    }
    DenseTensor { shape, values: out }
}

/// Adds i.i.d. `N(0, Δ)` noise drawn from the seed's noise stream.
pub fn add_noise(w: &DenseTensor, delta: f64, seed: u64) -> Result<Observation> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "noise variance must be positive, got {delta}"
        )));
    }
    let mut rng = stream_rng(seed, Stream::Noise);
    let sd = delta.sqrt();
    let values = w
        .values()
        .iter()
        .map(|&v| {
            let z: f64 = StandardNormal.sample(&mut rng);
            v + sd * z
        })
        .collect();
    Observation::new(
        DenseTensor {
            shape: w.shape().clone(),
            values,
        },
        delta,
    )
}

/// Rows of the Khatri-Rao product of `modes` (row-major over those modes).
fn khatri_rao_rows(est: &FactorSet, modes: std::ops::Range<usize>) -> Vec<f64> {
    let r = est.rank();
    let mut rows = vec![1.0; r];
    for a in modes {
        let f = est.mode(a);
        let mut next = Vec::with_capacity(rows.len() * f.nrows());
        for prefix in rows.chunks_exact(r) {
            for i in 0..f.nrows() {
                next.extend((0..r).map(|rho| prefix[rho] * f[(i, rho)]));
            }
        }
        rows = next;
    }
    rows
}

/// Dot product with eight independent accumulators so the loop vectorizes;
/// the summation order is fixed by the slice length alone.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    acc.iter().sum::<f64>() + tail
}

fn axpy(acc: &mut [f64], c: f64, x: &[f64]) {
    for (a, &v) in acc.iter_mut().zip(x) {
        *a += c * v;
    }
}

/// Fixed partition count for the outer reduction; independent of the
/// thread pool so the summation order never changes.
const OUTER_CHUNKS: usize = 64;

/// Contraction of `y` with every factor except `mode`
/// (matricized tensor times Khatri-Rao product).
///
/// Row `i`, column `ρ` is `Σ_{a: i_mode = i} Y_a Π_{β≠mode} x_{β i_β}^ρ`.
/// Work is split over a fixed number of slabs along the leading modes and
/// the partial sums are added in slab order, so the result is bitwise
/// identical for any number of worker threads.
pub fn mttkrp_exclude(y: &DenseTensor, est: &FactorSet, mode: usize) -> Result<DMatrix<f64>> {
    let shape = y.shape();
    if est.shape().dims() != shape.dims() {
        return Err(Error::InvalidArgument(format!(
            "factor dims {:?} do not match tensor dims {:?}",
            est.shape().dims(),
            shape.dims()
        )));
    }
    if mode >= shape.order() {
        return Err(Error::InvalidArgument(format!(
            "mode {mode} out of range for order {}",
            shape.order()
        )));
    }
    let r = est.rank();
    let n_mode = shape.dim(mode);
    let outer: usize = shape.dims()[..mode].iter().product();
    let inner: usize = shape.dims()[mode + 1..].iter().product();
    let kr_outer = khatri_rao_rows(est, 0..mode);
    let kr_inner = khatri_rao_rows(est, mode + 1..shape.order());
    let values = y.values();

    let chunk_len = outer.div_ceil(OUTER_CHUNKS).max(1);
    let chunk_starts: Vec<usize> = (0..outer).step_by(chunk_len).collect();
    let partials: Vec<Vec<f64>> = chunk_starts
        .par_iter()
        .map(|&start| {
            let end = (start + chunk_len).min(outer);
            let mut acc = vec![0.0; n_mode * r];
            let mut s = vec![0.0; r];
            for o in start..end {
                let ko = &kr_outer[o * r..(o + 1) * r];
                if mode + 1 == shape.order() {
                    // last mode: the slab is a contiguous axpy
                    let block = &values[o * n_mode..(o + 1) * n_mode];
                    if r == 1 {
                        axpy(&mut acc, ko[0], block);
                    } else {
                        for (row, &yv) in acc.chunks_exact_mut(r).zip(block) {
                            for rho in 0..r {
                                row[rho] += ko[rho] * yv;
                            }
                        }
                    }
                    continue;
                }
                for i in 0..n_mode {
                    let base = (o * n_mode + i) * inner;
                    let block = &values[base..base + inner];
                    s.iter_mut().for_each(|v| *v = 0.0);
                    if r == 1 {
                        s[0] = dot(block, &kr_inner);
                    } else {
                        for (k, &yv) in kr_inner.chunks_exact(r).zip(block) {
                            for rho in 0..r {
                                s[rho] += yv * k[rho];
                            }
                        }
                    }
                    let row = &mut acc[i * r..(i + 1) * r];
                    for rho in 0..r {
                        row[rho] += ko[rho] * s[rho];
                    }
                }
            }
            acc
        })
        .collect();

    let mut out = DMatrix::zeros(n_mode, r);
    for part in &partials {
        for i in 0..n_mode {
            for rho in 0..r {
                out[(i, rho)] += part[i * r + rho];
            }
        }
    }
    Ok(out)
}

/// [`mttkrp_exclude`] for every mode at once, in a single pass over `y`.
///
/// The tensor is walked as rows along the last mode; each row is dotted
/// with the last factor and the result is spread onto the other modes,
/// while the row itself is accumulated into the last mode. Chunking is
/// fixed as in [`mttkrp_exclude`], so results do not depend on the thread
/// count (they differ from the per-mode version only by rounding).
pub fn mttkrp_all(y: &DenseTensor, est: &FactorSet) -> Result<Vec<DMatrix<f64>>> {
    let shape = y.shape();
    if est.shape().dims() != shape.dims() {
        return Err(Error::InvalidArgument(format!(
            "factor dims {:?} do not match tensor dims {:?}",
            est.shape().dims(),
            shape.dims()
        )));
    }
    let p = shape.order();
    let r = est.rank();
    let last = p - 1;
    let n_last = shape.dim(last);
    let rows = shape.len() / n_last;
    let lead = &shape.dims()[..last];
    let values = y.values();
    let x_last = est.mode(last);

    let chunk_len = rows.div_ceil(OUTER_CHUNKS).max(1);
    let chunk_starts: Vec<usize> = (0..rows).step_by(chunk_len).collect();
    let partials: Vec<Vec<Vec<f64>>> = chunk_starts
        .par_iter()
        .map(|&start| {
            let end = (start + chunk_len).min(rows);
            // mode α < last: row-major N_α × r; last mode: column-major
            let mut acc: Vec<Vec<f64>> = shape.dims().iter().map(|&n| vec![0.0; n * r]).collect();
            let mut idx = vec![0usize; last];
            let mut rem = start;
            for a in (0..last).rev() {
                idx[a] = rem % lead[a];
                rem /= lead[a];
            }
            let mut s = vec![0.0; r];
            for o in start..end {
                let block = &values[o * n_last..(o + 1) * n_last];
                for rho in 0..r {
                    s[rho] = dot(block, x_last.column(rho).as_slice());
                    let mut full = 1.0;
                    for a in 0..last {
                        full *= est.mode(a)[(idx[a], rho)];
                    }
                    for a in 0..last {
                        let mut excl = s[rho];
                        for b in (0..last).filter(|&b| b != a) {
                            excl *= est.mode(b)[(idx[b], rho)];
                        }
                        acc[a][idx[a] * r + rho] += excl;
                    }
                    axpy(&mut acc[last][rho * n_last..(rho + 1) * n_last], full, block);
                }
                for a in (0..last).rev() {
                    idx[a] += 1;
                    if idx[a] < lead[a] {
                        break;
                    }
                    idx[a] = 0;
                }
            }
            acc
        })
        .collect();

    let mut out: Vec<DMatrix<f64>> = shape.dims().iter().map(|&n| DMatrix::zeros(n, r)).collect();
    for part in &partials {
        for a in 0..last {
            for i in 0..shape.dim(a) {
                for rho in 0..r {
                    out[a][(i, rho)] += part[a][i * r + rho];
                }
            }
        }
        for rho in 0..r {
            for k in 0..n_last {
                out[last][(k, rho)] += part[last][rho * n_last + k];
            }
        }
    }
    Ok(out)
}
