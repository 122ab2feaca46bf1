//! State evolution: the deterministic overlap recursion that tracks AMP in
//! the large-N limit.
//!
//! With `M̄_α` the effective signal-to-noise of mode α, one step is
//! `M'_α = E[f_α(M̄_α, M̄_α x⁰ + M̄_α^{1/2} z) x⁰ᵀ]`.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::overlap::OverlapSet;
use crate::priors::{self, prior_moments, PriorSpec};
use crate::quadrature::GaussHermite;
use crate::rng::{stream_rng, Stream};
use crate::tensor::TensorShape;

/// How the mode ratio `n_α` enters the effective field of mode α.
///
/// `Consistent` follows from expanding the data term: the signal reaching
/// mode α carries `(n_α Δ)⁻¹ ∏_{β≠α} M_β`. `Literal` uses `n_α / Δ`, the
/// prefactor written in the update equations. Both agree on cubic tensors.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeScaling {
    #[default]
    Consistent,
    Literal,
}

impl ModeScaling {
    /// Factor multiplying `Δ⁻¹ ∏_{β≠α} M_β`.
    pub fn mbar_factor(self, ratio: f64) -> f64 {
        match self {
            ModeScaling::Consistent => 1.0 / ratio,
            ModeScaling::Literal => ratio,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeParams {
    pub priors: Vec<PriorSpec>,
    /// Mode ratios `n_α = N_α / N`; their product is 1.
    pub ratios: Vec<f64>,
    pub delta: f64,
    pub rank: usize,
    pub quadrature_nodes: usize,
    pub scaling: ModeScaling,
    /// Same convex damping as AMP: `M ← λM + (1−λ)F(M)`. Fixed points do not
    /// depend on it; trajectories do.
    pub damping: f64,
    /// Monte-Carlo sample count for `r > 1`.
    pub mc_samples: usize,
    pub seed: u64,
}

impl SeParams {
    pub fn new(priors: Vec<PriorSpec>, shape: &TensorShape, delta: f64) -> Result<Self> {
        Self::with_ratios(priors, shape.ratios().to_vec(), delta)
    }

    /// Geometry given directly by real mode ratios, so shape sweeps do not
    /// need integer dimensions.
    pub fn with_ratios(priors: Vec<PriorSpec>, ratios: Vec<f64>, delta: f64) -> Result<Self> {
        let params = Self {
            priors,
            ratios,
            delta,
            rank: 1,
            quadrature_nodes: 41,
            scaling: ModeScaling::default(),
            damping: 0.0,
            mc_samples: 20_000,
            seed: 0,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn order(&self) -> usize {
        self.ratios.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.ratios.len() < 2 {
            return Err(Error::InvalidShape("state evolution needs order p >= 2".into()));
        }
        if self.priors.len() != self.ratios.len() {
            return Err(Error::InvalidArgument(format!(
                "{} priors for an order-{} tensor",
                self.priors.len(),
                self.ratios.len()
            )));
        }
        if self.ratios.iter().any(|&n| !(n > 0.0 && n.is_finite())) {
            return Err(Error::InvalidShape("mode ratios must be positive".into()));
        }
        let log_prod: f64 = self.ratios.iter().map(|n| n.ln()).sum();
        if log_prod.abs() > 1e-9 {
            return Err(Error::InvalidShape(format!(
                "mode ratios multiply to {}, expected 1",
                log_prod.exp()
            )));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::InvalidParameter(format!("delta must be positive, got {}", self.delta)));
        }
        if self.rank == 0 {
            return Err(Error::InvalidParameter("rank must be at least 1".into()));
        }
        if self.quadrature_nodes < 3 {
            return Err(Error::InvalidParameter("quadrature needs at least 3 nodes".into()));
        }
        if !(0.0..1.0).contains(&self.damping) {
            return Err(Error::InvalidParameter(format!("damping {} not in [0, 1)", self.damping)));
        }
        for p in &self.priors {
            p.validate()?;
        }
        Ok(())
    }

    pub fn with_delta(&self, delta: f64) -> Self {
        Self { delta, ..self.clone() }
    }

    fn all_gaussian_rank_one(&self) -> bool {
        self.rank == 1 && self.priors.iter().all(PriorSpec::is_gaussian)
    }
}

/// `M̄_α = c_α Δ⁻¹ ⊙∏_{β≠α} M_β` with `c_α` from [`ModeScaling`].
pub fn mbar(m: &OverlapSet, params: &SeParams, mode: usize) -> DMatrix<f64> {
    let r = m.rank();
    let mut out = DMatrix::from_element(r, r, 1.0);
    for (b, mb) in m.modes().iter().enumerate() {
        if b != mode {
            out.component_mul_assign(mb);
        }
    }
    out * (params.scaling.mbar_factor(params.ratios[mode]) / params.delta)
}

/// Closed-form Gaussian step:
/// `m' = (μ²/σ² + (σ² + μ²) m̄) / (σ⁻² + m̄)`.
pub fn se_step_gaussian(m: &[f64], params: &SeParams) -> Result<Vec<f64>> {
    if params.rank != 1 {
        return Err(Error::Unsupported("closed-form step needs rank 1".into()));
    }
    if m.len() != params.order() {
        return Err(Error::InvalidArgument(format!(
            "{} overlaps for an order-{} tensor",
            m.len(),
            params.order()
        )));
    }
    (0..m.len())
        .map(|a| {
            let PriorSpec::Gaussian { mu, sigma2 } = params.priors[a] else {
                return Err(Error::Unsupported(format!(
                    "closed-form step needs Gaussian priors, mode {a} is {}",
                    params.priors[a]
                )));
            };
            let prod: f64 = m.iter().enumerate().filter(|&(b, _)| b != a).map(|(_, v)| v).product();
            let mb = prod * params.scaling.mbar_factor(params.ratios[a]) / params.delta;
            Ok((mu * mu / sigma2 + (sigma2 + mu * mu) * mb) / (1.0 / sigma2 + mb))
        })
        .collect()
}

/// Quadrature step for any prior at `r = 1`; Monte-Carlo over `(x⁰, z)` for
/// Gaussian priors at `r > 1`.
pub fn se_step_generic(m: &OverlapSet, params: &SeParams) -> Result<OverlapSet> {
    if m.order() != params.order() || m.rank() != params.rank {
        return Err(Error::InvalidArgument(format!(
            "overlap set of order {} rank {} for params of order {} rank {}",
            m.order(),
            m.rank(),
            params.order(),
            params.rank
        )));
    }
    if params.rank == 1 {
        let gh = GaussHermite::new(params.quadrature_nodes)?;
        let next = (0..m.order())
            .map(|a| {
                let s = mbar(m, params, a)[(0, 0)];
                scalar_update(&params.priors[a], s, &gh)
            })
            .collect::<Result<Vec<_>>>()?;
        return OverlapSet::scalars(&next);
    }
    let next = (0..m.order())
        .map(|a| {
            let prior = &params.priors[a];
            if !prior.is_gaussian() {
                return Err(Error::Unsupported(format!(
                    "state evolution for {prior} needs rank 1"
                )));
            }
            let mb = mbar(m, params, a);
            monte_carlo_update(prior, &mb, params.mc_samples, params.seed.wrapping_add(a as u64))
        })
        .collect::<Result<Vec<_>>>()?;
    OverlapSet::new(next)
}

/// `E[f(s, s x⁰ + √s z) x⁰]` for one mode at `r = 1`.
fn scalar_update(prior: &PriorSpec, s: f64, gh: &GaussHermite) -> Result<f64> {
    if s < -1e-12 || !s.is_finite() {
        return Err(Error::NumericDomain(format!("effective signal {s} is negative")));
    }
    let s = s.max(0.0);
    let root = s.sqrt();
    // E_z[f(s, s x0 + √s z)] x0 for a fixed atom x0
    let at = |x0: f64| -> Result<f64> {
        let mut acc = 0.0;
        for (z, w) in gh.iter() {
            acc += w * prior.scalar_moments(s, s * x0 + root * z)?.0;
        }
        Ok(acc * x0)
    };
    let gaussian_part = |mu: f64, sigma2: f64| -> Result<f64> {
        let sd = sigma2.sqrt();
        let mut acc = 0.0;
        for (t, w) in gh.iter() {
            acc += w * at(mu + sd * t)?;
        }
        Ok(acc)
    };
    match *prior {
        PriorSpec::Gaussian { mu, sigma2 } => gaussian_part(mu, sigma2),
        // the zero atom contributes x0 = 0
        PriorSpec::Bernoulli { rho } => Ok(rho * at(1.0)?),
        PriorSpec::GaussBernoulli { rho, mu, sigma2 } => Ok(rho * gaussian_part(mu, sigma2)?),
    }
}

/// Symmetric PSD square root, eigenvalues below 1e-14 clamped to zero.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut sym = m.clone();
    priors::symmetrize(&mut sym);
    let eig = sym.symmetric_eigen();
    let vals = eig.eigenvalues.map(|v| if v < 1e-14 { 0.0 } else { v.sqrt() });
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

fn monte_carlo_update(prior: &PriorSpec, mb: &DMatrix<f64>, samples: usize, seed: u64) -> Result<DMatrix<f64>> {
    let r = mb.nrows();
    let mut a = mb.clone();
    priors::symmetrize(&mut a);
    priors::check_precision(&a)?;
    let root = psd_sqrt(&a);
    // same stream every call so the fixed-point iteration sees a smooth map
    let mut rng = stream_rng(seed, Stream::MonteCarlo);
    let mut acc = DMatrix::zeros(r, r);
    let mut x0 = DVector::zeros(r);
    let mut z = DVector::zeros(r);
    for _ in 0..samples.max(1) {
        for k in 0..r {
            x0[k] = priors::draw(prior, &mut rng);
            z[k] = StandardNormal.sample(&mut rng);
        }
        let u = &a * &x0 + &root * &z;
        let (f, _) = priors::moments_unchecked(prior, &a, &u)?;
        acc += f * x0.transpose();
    }
    acc /= samples.max(1) as f64;
    priors::symmetrize(&mut acc);
    Ok(acc)
}

fn step(m: &OverlapSet, params: &SeParams) -> Result<OverlapSet> {
    let raw = if params.all_gaussian_rank_one() {
        OverlapSet::scalars(&se_step_gaussian(&m.to_scalars(), params)?)?
    } else {
        se_step_generic(m, params)?
    };
    if params.damping == 0.0 {
        return Ok(raw);
    }
    let lam = params.damping;
    OverlapSet::new(
        m.modes()
            .iter()
            .zip(raw.modes())
            .map(|(old, new)| old * lam + new * (1.0 - lam))
            .collect(),
    )
}

/// Result of iterating the recursion.
#[derive(Debug, Clone, PartialEq)]
pub struct SeOutcome {
    pub fixed_point: OverlapSet,
    /// Iterates visited, starting with the initial condition.
    pub trajectory: Vec<OverlapSet>,
    pub iterations: usize,
    pub converged: bool,
}

/// Iterates until `max |M' − M| ≤ tol`. Running out of iterations is
/// reported through `converged`, not as an error.
pub fn se_fixed_point(init: &OverlapSet, params: &SeParams, tol: f64, max_iter: usize) -> Result<SeOutcome> {
    params.validate()?;
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance must be positive, got {tol}")));
    }
    let mut current = init.clone();
    let mut trajectory = vec![init.clone()];
    for it in 1..=max_iter {
        let next = step(&current, params)?;
        if !next.is_finite() {
            return Err(Error::Diverged(format!("state evolution left the finite range at step {it}")));
        }
        if next.max_abs_diff(&current) <= tol {
            return Ok(SeOutcome {
                fixed_point: next,
                trajectory,
                iterations: it,
                converged: true,
            });
        }
        trajectory.push(next.clone());
        current = next;
    }
    Ok(SeOutcome {
        fixed_point: current,
        trajectory,
        iterations: max_iter,
        converged: false,
    })
}

/// Exactly `steps` iterations, for per-iteration comparisons with AMP.
pub fn se_trajectory(init: &OverlapSet, params: &SeParams, steps: usize) -> Result<Vec<OverlapSet>> {
    params.validate()?;
    let mut out = Vec::with_capacity(steps + 1);
    out.push(init.clone());
    for _ in 0..steps {
        let next = step(out.last().expect("non-empty"), params)?;
        out.push(next);
    }
    Ok(out)
}

fn moment_matrix(prior: &PriorSpec, rank: usize, jitter: f64, informed: bool) -> DMatrix<f64> {
    let (mean, second) = prior_moments(prior);
    let mut m = DMatrix::from_element(rank, rank, mean * mean);
    for k in 0..rank {
        m[(k, k)] = if informed { second } else { mean * mean + jitter };
    }
    m
}

/// Perfect-overlap start: `M⁰_α = E[x⁰x⁰ᵀ]`.
pub fn informed_init(params: &SeParams) -> OverlapSet {
    let mats = params
        .priors
        .iter()
        .map(|p| moment_matrix(p, params.rank, 0.0, true))
        .collect();
    OverlapSet::new(mats).expect("consistent ranks")
}

/// Prior-sample start: `M⁰_α = (E x⁰)² + 1e-8` on the diagonal.
pub fn uninformed_init(params: &SeParams) -> OverlapSet {
    let mats = params
        .priors
        .iter()
        .map(|p| moment_matrix(p, params.rank, 1e-8, false))
        .collect();
    OverlapSet::new(mats).expect("consistent ranks")
}

/// `(1/p) Σ_α (E[x²] − m_α) / σ_α²`, with traces over components for `r > 1`.
pub fn mse_from_overlap(m: &OverlapSet, priors: &[PriorSpec]) -> Result<f64> {
    if m.order() != priors.len() {
        return Err(Error::InvalidArgument(format!(
            "{} overlaps for {} priors",
            m.order(),
            priors.len()
        )));
    }
    let r = m.rank() as f64;
    let total: f64 = m
        .modes()
        .iter()
        .zip(priors)
        .map(|(ma, p)| (r * p.second_moment() - ma.trace()) / (r * p.mse_scale()))
        .sum();
    Ok(total / m.order() as f64)
}
