//! Per-mode overlap matrices, the order parameter shared by AMP and state
//! evolution.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::FactorSet;

/// One `r × r` matrix per mode. For `r = 1` each matrix holds the scalar
/// overlap `m_α`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<Vec<f64>>>", into = "Vec<Vec<Vec<f64>>>")]
pub struct OverlapSet {
    mats: Vec<DMatrix<f64>>,
}

impl OverlapSet {
    pub fn new(mats: Vec<DMatrix<f64>>) -> Result<Self> {
        let Some(first) = mats.first() else {
            return Err(Error::InvalidShape("overlap set needs at least one mode".into()));
        };
        let r = first.nrows();
        if r == 0 {
            return Err(Error::InvalidShape("overlap matrices must be non-empty".into()));
        }
        for (a, m) in mats.iter().enumerate() {
            if m.nrows() != r || m.ncols() != r {
                return Err(Error::InvalidShape(format!(
                    "mode {a} overlap is {}x{}, expected {r}x{r}",
                    m.nrows(),
                    m.ncols()
                )));
            }
        }
        Ok(Self { mats })
    }

    /// `r = 1` overlaps from per-mode scalars.
    pub fn scalars(values: &[f64]) -> Result<Self> {
        Self::new(values.iter().map(|&v| DMatrix::from_element(1, 1, v)).collect())
    }

    pub fn filled(order: usize, rank: usize, value: &DMatrix<f64>) -> Self {
        debug_assert!(value.nrows() == rank && value.ncols() == rank);
        Self {
            mats: vec![value.clone(); order],
        }
    }

    pub fn order(&self) -> usize {
        self.mats.len()
    }

    pub fn rank(&self) -> usize {
        self.mats[0].nrows()
    }

    pub fn mode(&self, a: usize) -> &DMatrix<f64> {
        &self.mats[a]
    }

    pub fn modes(&self) -> &[DMatrix<f64>] {
        &self.mats
    }

    pub fn into_modes(self) -> Vec<DMatrix<f64>> {
        self.mats
    }

    /// Scalar overlaps; only meaningful for `r = 1` (takes the (0,0) entry).
    pub fn to_scalars(&self) -> Vec<f64> {
        self.mats.iter().map(|m| m[(0, 0)]).collect()
    }

    pub fn max_abs_diff(&self, other: &OverlapSet) -> f64 {
        self.mats
            .iter()
            .zip(&other.mats)
            .map(|(a, b)| (a - b).amax())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.mats.iter().all(|m| m.iter().all(|v| v.is_finite()))
    }
}

impl TryFrom<Vec<Vec<Vec<f64>>>> for OverlapSet {
    type Error = Error;

    fn try_from(rows: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let mats = rows
            .into_iter()
            .map(|m| {
                let r = m.len();
                if m.iter().any(|row| row.len() != r) {
                    return Err(Error::Format("overlap matrix is not square".into()));
                }
                Ok(DMatrix::from_row_iterator(r, r, m.into_iter().flatten()))
            })
            .collect::<Result<Vec<_>>>()?;
        OverlapSet::new(mats)
    }
}

impl From<OverlapSet> for Vec<Vec<Vec<f64>>> {
    fn from(o: OverlapSet) -> Self {
        o.mats
            .iter()
            .map(|m| (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect())
            .collect()
    }
}

/// `M_α = N_α⁻¹ Σ_i x̂_{αi} x_{αi}ᵀ`; entry `(ρ, ρ')` pairs estimate component
/// `ρ` with truth component `ρ'`.
pub fn overlap(est: &FactorSet, truth: &FactorSet) -> Result<OverlapSet> {
    if est.shape() != truth.shape() || est.rank() != truth.rank() {
        return Err(Error::InvalidArgument(format!(
            "overlap between {:?} rank {} and {:?} rank {}",
            est.shape().dims(),
            est.rank(),
            truth.shape().dims(),
            truth.rank()
        )));
    }
    let mats = est
        .modes()
        .iter()
        .zip(truth.modes())
        .map(|(x, t)| x.transpose() * t / x.nrows() as f64)
        .collect();
    OverlapSet::new(mats)
}

/// `N_α⁻¹ Σ_i x̂_{αi} x̂_{αi}ᵀ`, the estimator's own second moment.
pub fn self_overlap(est: &FactorSet) -> OverlapSet {
    let mats = est
        .modes()
        .iter()
        .map(|x| x.transpose() * x / x.nrows() as f64)
        .collect();
    OverlapSet { mats }
}
