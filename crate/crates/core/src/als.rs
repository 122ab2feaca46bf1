//! CP alternating least squares, the prior-agnostic baseline.
//!
//! Minimises `‖Y − s · Σ_ρ x_1^ρ ⊗ … ⊗ x_p^ρ‖²` one mode at a time, where
//! `s = N^{-(p-1)/2}` is the signal scale of the spiked model.

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::overlap::{overlap, OverlapSet};
use crate::rng::{stream_rng, Stream};
use crate::tensor::{low_rank_tensor, mttkrp_exclude, DenseTensor, FactorSet, Observation};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlsConfig {
    pub rank: usize,
    pub ridge: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for AlsConfig {
    fn default() -> Self {
        Self {
            rank: 1,
            ridge: 1e-10,
            tol: 1e-8,
            max_iter: 500,
            seed: 0,
        }
    }
}

impl AlsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::InvalidParameter("rank must be at least 1".into()));
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return Err(Error::InvalidParameter(format!("ridge must be non-negative, got {}", self.ridge)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidParameter(format!("tolerance must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidParameter("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlsResult {
    pub factors: FactorSet,
    /// Overlaps with the truth after every sweep, when a truth was supplied.
    pub overlap_trajectory: Vec<OverlapSet>,
    pub iterations: usize,
    pub converged: bool,
    pub final_delta_x: f64,
    pub objective: f64,
}

/// One Gauss-Seidel sweep over modes `0..p`. Each mode solves
/// `F_α G = s · mttkrp(Y, F, α)` with
/// `G = s² ⊙∏_{β≠α} F_βᵀF_β + ridge · I`.
pub fn als_step(y: &DenseTensor, est: &FactorSet, scale: f64, ridge: f64) -> Result<FactorSet> {
    if y.shape() != est.shape() {
        return Err(Error::InvalidArgument("tensor and factors have different shapes".into()));
    }
    let p = est.order();
    let r = est.rank();
    let mut cur = est.clone();
    for a in 0..p {
        let mut gram = DMatrix::from_element(r, r, scale * scale);
        for b in (0..p).filter(|&b| b != a) {
            let f = cur.mode(b);
            gram.component_mul_assign(&(f.transpose() * f));
        }
        for k in 0..r {
            gram[(k, k)] += ridge;
        }
        let rhs = mttkrp_exclude(y, &cur, a)? * scale;
        let solved = solve_gram(&gram, &rhs.transpose()).ok_or_else(|| {
            Error::Singular(format!("normal equations of mode {a} are singular"))
        })?;
        cur.set_mode(a, solved.transpose())?;
    }
    Ok(cur)
}

/// `G⁻¹ B` for symmetric PSD `G`; `None` when `G` is numerically singular.
fn solve_gram(gram: &DMatrix<f64>, b: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let scale = gram.diagonal().amax();
    if !(scale > 0.0) || !scale.is_finite() {
        return None;
    }
    let chol = gram.clone().cholesky()?;
    let l = chol.l_dirty();
    let min_pivot = (0..gram.nrows()).map(|k| l[(k, k)] * l[(k, k)]).fold(f64::INFINITY, f64::min);
    if min_pivot <= 1e-14 * scale {
        return None;
    }
    Some(chol.solve(b))
}

/// `‖Y − s·[[F]]‖²`.
pub fn als_objective(y: &DenseTensor, est: &FactorSet, scale: f64) -> Result<f64> {
    if y.shape() != est.shape() {
        return Err(Error::InvalidArgument("tensor and factors have different shapes".into()));
    }
    let w = low_rank_tensor(est);
    let ratio = scale / est.shape().signal_scale();
    Ok(y
        .values()
        .iter()
        .zip(w.values())
        .map(|(a, b)| (a - ratio * b).powi(2))
        .sum())
}

pub fn run_als(obs: &Observation, config: &AlsConfig, truth: Option<&FactorSet>) -> Result<AlsResult> {
    config.validate()?;
    let shape = obs.shape().clone();
    let scale = shape.signal_scale();
    let mut rng = stream_rng(config.seed, Stream::Als);
    let modes = shape
        .dims()
        .iter()
        .map(|&d| DMatrix::from_fn(d, config.rank, |_, _| StandardNormal.sample(&mut rng)))
        .collect();
    let mut est = FactorSet::new(shape, modes)?;
    let mut trajectory = Vec::new();
    if let Some(t) = truth {
        trajectory.push(overlap(&est, t)?);
    }
    let mut change = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < config.max_iter {
        let next = als_step(obs.tensor(), &est, scale, config.ridge)?;
        if !next.is_finite() {
            return Err(Error::Diverged(format!("ALS produced non-finite factors at sweep {}", iterations + 1)));
        }
        change = next.max_relative_change(&est)?;
        est = next;
        iterations += 1;
        if let Some(t) = truth {
            trajectory.push(overlap(&est, t)?);
        }
        if change <= config.tol {
            converged = true;
            break;
        }
    }
    let objective = als_objective(obs.tensor(), &est, scale)?;
    Ok(AlsResult {
        factors: est,
        overlap_trajectory: trajectory,
        iterations,
        converged,
        final_delta_x: change,
        objective,
    })
}
