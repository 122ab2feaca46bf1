//! Phase boundaries from state evolution.
//!
//! `Δ_alg` is where the uninformed fixed point leaves the low-error branch,
//! `Δ_dyn` where the informed one does. Both are found by bisection on the
//! fixed-point MSE class.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::priors::PriorSpec;
use crate::state_evolution::{
    informed_init, mse_from_overlap, se_fixed_point, uninformed_init, ModeScaling, SeParams,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitRegime {
    Informed,
    Uninformed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MseClass {
    Low,
    High,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseQuery {
    pub priors: Vec<PriorSpec>,
    /// Mode ratios `n_α`, product 1.
    pub ratios: Vec<f64>,
    pub delta_bracket: (f64, f64),
    /// Default 0.75: the informed branch ends with MSE up to about 0.6,
    /// the uninformed one starts near 0.9.
    pub mse_threshold: f64,
    pub bisect_tol: f64,
    pub se_tol: f64,
    pub se_max_iter: usize,
    pub quadrature_nodes: usize,
    pub scaling: ModeScaling,
}

impl PhaseQuery {
    pub fn new(priors: Vec<PriorSpec>, ratios: Vec<f64>) -> Result<Self> {
        let q = Self {
            priors,
            ratios,
            delta_bracket: (1e-4, 10.0),
            mse_threshold: 0.75,
            bisect_tol: 1e-4,
            se_tol: 1e-10,
            se_max_iter: 10_000,
            quadrature_nodes: 41,
            scaling: ModeScaling::default(),
        };
        q.validate()?;
        Ok(q)
    }

    pub fn cubic(priors: Vec<PriorSpec>) -> Result<Self> {
        let p = priors.len();
        Self::new(priors, vec![1.0; p])
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.delta_bracket;
        if !(lo > 0.0 && lo < hi && hi.is_finite()) {
            return Err(Error::InvalidParameter(format!("bad delta bracket ({lo}, {hi})")));
        }
        if !(self.mse_threshold > 0.0 && self.mse_threshold < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "mse threshold {} not in (0, 1)",
                self.mse_threshold
            )));
        }
        if !(self.bisect_tol > 0.0) {
            return Err(Error::InvalidParameter("bisection tolerance must be positive".into()));
        }
        self.params(lo).map(|_| ())
    }

    fn params(&self, delta: f64) -> Result<SeParams> {
        let mut p = SeParams::with_ratios(self.priors.clone(), self.ratios.clone(), delta)?;
        p.quadrature_nodes = self.quadrature_nodes;
        p.scaling = self.scaling;
        Ok(p)
    }

    fn zero_mean_modes(&self) -> usize {
        self.priors.iter().filter(|p| p.mean() == 0.0).count()
    }
}

/// Fixed-point MSE from the given start; `(mse, converged)`.
pub fn fixed_point_mse(query: &PhaseQuery, delta: f64, init: InitRegime) -> Result<(f64, bool)> {
    if !(delta > 0.0) {
        return Err(Error::InvalidParameter(format!("delta must be positive, got {delta}")));
    }
    let params = query.params(delta)?;
    let start = match init {
        InitRegime::Informed => informed_init(&params),
        InitRegime::Uninformed => uninformed_init(&params),
    };
    let out = se_fixed_point(&start, &params, query.se_tol, query.se_max_iter)?;
    Ok((mse_from_overlap(&out.fixed_point, &query.priors)?, out.converged))
}

/// Class of the fixed point reached from `init`; non-convergence is an
/// [`Error::Indeterminate`].
pub fn classify_delta(query: &PhaseQuery, delta: f64, init: InitRegime) -> Result<MseClass> {
    let (mse, converged) = fixed_point_mse(query, delta, init)?;
    if !converged {
        return Err(Error::Indeterminate { delta });
    }
    Ok(class_of(query, mse))
}

fn class_of(query: &PhaseQuery, mse: f64) -> MseClass {
    if mse < query.mse_threshold {
        MseClass::Low
    } else {
        MseClass::High
    }
}

/// Bisection classifier: very close to a bifurcation the recursion slows
/// down critically and may run out of iterations; the last iterate's MSE is
/// then used, which only affects points within a hair of the boundary.
fn classify_lenient(query: &PhaseQuery, delta: f64, init: InitRegime) -> Result<MseClass> {
    let (mse, _) = fixed_point_mse(query, delta, init)?;
    Ok(class_of(query, mse))
}

fn bisect(query: &PhaseQuery, init: InitRegime) -> Result<f64> {
    query.validate()?;
    let (mut lo, mut hi) = query.delta_bracket;
    let c_lo = classify_lenient(query, lo, init)?;
    let c_hi = classify_lenient(query, hi, init)?;
    if c_lo != MseClass::Low || c_hi != MseClass::High {
        return Err(Error::Bracket { lo, hi });
    }
    while hi - lo > query.bisect_tol {
        let mid = 0.5 * (lo + hi);
        match classify_lenient(query, mid, init)? {
            MseClass::Low => lo = mid,
            MseClass::High => hi = mid,
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Edge of the easy regime. Returns 0 when two or more modes have zero
/// prior mean: the uninformed fixed point `M = 0` is then stable at any Δ.
pub fn find_delta_alg(query: &PhaseQuery) -> Result<f64> {
    if query.zero_mean_modes() >= 2 {
        return Ok(0.0);
    }
    bisect(query, InitRegime::Uninformed)
}

/// Edge of the hard regime.
pub fn find_delta_dyn(query: &PhaseQuery) -> Result<f64> {
    bisect(query, InitRegime::Informed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeRow {
    pub n_x: f64,
    pub delta_alg: f64,
    pub delta_dyn: f64,
}

/// Order-3 shapes `n = (1, n_x, 1/n_x)`.
pub fn sweep_shape(query: &PhaseQuery, nx_grid: &[f64]) -> Result<Vec<ShapeRow>> {
    if query.priors.len() != 3 {
        return Err(Error::InvalidArgument("shape sweep needs an order-3 query".into()));
    }
    nx_grid
        .par_iter()
        .map(|&n_x| {
            if !(n_x > 0.0) {
                return Err(Error::InvalidParameter(format!("n_x must be positive, got {n_x}")));
            }
            let q = PhaseQuery {
                ratios: vec![1.0, n_x, 1.0 / n_x],
                ..query.clone()
            };
            Ok(ShapeRow {
                n_x,
                delta_alg: find_delta_alg(&q)?,
                delta_dyn: find_delta_dyn(&q)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeansRow {
    pub mu1: f64,
    pub mu2: f64,
    pub delta_alg: f64,
    pub delta_dyn: f64,
}

/// Gaussian order-3 grid over the first two means with `μ_3 = 0`. The
/// variances are taken from the query's priors.
pub fn sweep_means(query: &PhaseQuery, mu1_grid: &[f64], mu2_grid: &[f64]) -> Result<Vec<MeansRow>> {
    if query.priors.len() != 3 {
        return Err(Error::InvalidArgument("means sweep needs an order-3 query".into()));
    }
    let sigmas = query
        .priors
        .iter()
        .map(|p| match *p {
            PriorSpec::Gaussian { sigma2, .. } => Ok(sigma2),
            _ => Err(Error::Unsupported("means sweep needs Gaussian priors".into())),
        })
        .collect::<Result<Vec<_>>>()?;
    let cells: Vec<(f64, f64)> = mu1_grid
        .iter()
        .flat_map(|&a| mu2_grid.iter().map(move |&b| (a, b)))
        .collect();
    cells
        .par_iter()
        .map(|&(mu1, mu2)| {
            let priors = vec![
                PriorSpec::gaussian(mu1, sigmas[0])?,
                PriorSpec::gaussian(mu2, sigmas[1])?,
                PriorSpec::gaussian(0.0, sigmas[2])?,
            ];
            let q = PhaseQuery {
                priors,
                ..query.clone()
            };
            Ok(MeansRow {
                mu1,
                mu2,
                delta_alg: find_delta_alg(&q)?,
                delta_dyn: find_delta_dyn(&q)?,
            })
        })
        .collect()
}
