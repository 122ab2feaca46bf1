//! Matching estimated components to the truth and the error metrics built
//! on top of that matching.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::overlap::{overlap, OverlapSet};
use crate::priors::PriorSpec;
use crate::state_evolution::mse_from_overlap;
use crate::tensor::{low_rank_tensor, FactorSet};

/// Which gauge transformations alignment may apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gauge {
    /// Permutation, signs and per-mode scales with product one (ALS).
    Full,
    /// Permutation and signs only (AMP, whose scale is set by the priors).
    Signs,
}

fn column_dot(a: &DMatrix<f64>, i: usize, b: &DMatrix<f64>, j: usize) -> f64 {
    a.column(i).dot(&b.column(j))
}

/// Greedy permutation: `perm[ρ]` is the estimated component assigned to
/// truth component `ρ`, chosen by the largest summed absolute normalised
/// correlation over modes.
fn greedy_match(est: &FactorSet, truth: &FactorSet) -> Vec<usize> {
    let r = est.rank();
    let mut score = DMatrix::zeros(r, r);
    for (e, t) in est.modes().iter().zip(truth.modes()) {
        for k in 0..r {
            for rho in 0..r {
                let denom = e.column(k).norm() * t.column(rho).norm();
                if denom > 0.0 {
                    score[(k, rho)] += (column_dot(e, k, t, rho) / denom).abs();
                }
            }
        }
    }
    let mut perm = vec![usize::MAX; r];
    let mut used = vec![false; r];
    for _ in 0..r {
        let mut best = (f64::NEG_INFINITY, 0, 0);
        for k in (0..r).filter(|&k| !used[k]) {
            for rho in (0..r).filter(|&rho| perm[rho] == usize::MAX) {
                if score[(k, rho)] > best.0 {
                    best = (score[(k, rho)], k, rho);
                }
            }
        }
        used[best.1] = true;
        perm[best.2] = best.1;
    }
    perm
}

pub fn align_with(est: &FactorSet, truth: &FactorSet, gauge: Gauge) -> Result<(FactorSet, OverlapSet)> {
    if est.shape() != truth.shape() || est.rank() != truth.rank() {
        return Err(Error::InvalidArgument(format!(
            "cannot align rank {} estimate with rank {} truth",
            est.rank(),
            truth.rank()
        )));
    }
    let p = est.order();
    let r = est.rank();
    let perm = greedy_match(est, truth);
    let mut modes: Vec<DMatrix<f64>> = est
        .modes()
        .iter()
        .map(|m| DMatrix::from_fn(m.nrows(), r, |i, rho| m[(i, perm[rho])]))
        .collect();
    for rho in 0..r {
        let corr: Vec<f64> = (0..p)
            .map(|a| {
                let denom = modes[a].column(rho).norm() * truth.mode(a).column(rho).norm();
                if denom > 0.0 {
                    column_dot(&modes[a], rho, truth.mode(a), rho) / denom
                } else {
                    0.0
                }
            })
            .collect();
        let mut signs: Vec<f64> = corr.iter().map(|&c| if c < 0.0 { -1.0 } else { 1.0 }).collect();
        if signs.iter().product::<f64>() < 0.0 {
            // an odd number of flips would flip the tensor; keep the mode
            // we are least sure about unflipped
            let weakest = (0..p)
                .min_by(|&a, &b| corr[a].abs().total_cmp(&corr[b].abs()))
                .expect("order >= 2");
            signs[weakest] = -signs[weakest];
        }
        let mut factors = signs;
        if gauge == Gauge::Full {
            let ratios: Vec<f64> = (0..p)
                .map(|a| modes[a].column(rho).norm() / truth.mode(a).column(rho).norm())
                .collect();
            if ratios.iter().all(|r| r.is_finite() && *r > 0.0) {
                let log_g = ratios.iter().map(|r| r.ln()).sum::<f64>() / p as f64;
                for a in 0..p {
                    factors[a] *= (log_g - ratios[a].ln()).exp();
                }
            }
        }
        for a in 0..p {
            let mut col = modes[a].column_mut(rho);
            col *= factors[a];
        }
    }
    let aligned = FactorSet::new(est.shape().clone(), modes)?;
    let m = overlap(&aligned, truth)?;
    Ok((aligned, m))
}

/// Full-gauge alignment: permutation, signs and balanced per-mode scales.
pub fn align_components(est: &FactorSet, truth: &FactorSet) -> Result<(FactorSet, OverlapSet)> {
    align_with(est, truth, Gauge::Full)
}

/// Overlap-based factor MSE, `(1/p) Σ_α (E[x²] − m_α) / σ_α²`.
pub fn factor_mse(aligned: &FactorSet, truth: &FactorSet, priors: &[PriorSpec]) -> Result<f64> {
    mse_from_overlap(&overlap(aligned, truth)?, priors)
}

/// `(1/p) Σ_α ‖x̂_α − x_α‖²_F / (N_α r σ_α²)`.
pub fn direct_mse(aligned: &FactorSet, truth: &FactorSet, priors: &[PriorSpec]) -> Result<f64> {
    if aligned.shape() != truth.shape() || aligned.rank() != truth.rank() || priors.len() != truth.order() {
        return Err(Error::InvalidArgument("metric inputs do not match".into()));
    }
    let r = truth.rank() as f64;
    let total: f64 = aligned
        .modes()
        .iter()
        .zip(truth.modes())
        .zip(priors)
        .map(|((e, t), p)| (e - t).norm_squared() / (e.nrows() as f64 * r * p.mse_scale()))
        .sum();
    Ok(total / truth.order() as f64)
}

/// `‖Ŵ − W‖² / ‖W‖²`; gauge invariant.
pub fn tensor_mse(est: &FactorSet, truth: &FactorSet) -> Result<f64> {
    if est.shape() != truth.shape() {
        return Err(Error::InvalidArgument("metric inputs do not match".into()));
    }
    let w = low_rank_tensor(truth);
    let norm = w.norm_sq();
    if norm == 0.0 {
        return Err(Error::NumericDomain("truth tensor is zero".into()));
    }
    Ok(low_rank_tensor(est).dist_sq(&w) / norm)
}
