//! Bayes-optimal AMP for the spiked tensor model.
//!
//! Every mode is updated in parallel from the same time slice. For mode α
//! and node i the incoming field and precision are
//!
//! ```text
//! u_αi = c_α · mttkrp(Y, x̂ᵗ, α)_i − R_αi
//! A_α  = Δ⁻¹ ⊙∏_{β≠α} Q_β,         Q_β = x̂_βᵀ x̂_β / N
//! ```
//!
//! where `R` is the Onsager reaction built from `Σ_β` (averaged posterior
//! covariances) and `D_αβ` (lag-one overlaps of the remaining modes).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::overlap::{overlap, OverlapSet};
use crate::priors::{self, PriorSpec};
use crate::rng::{stream_rng, Stream};
use crate::state_evolution::ModeScaling;
use crate::tensor::{mttkrp_all, FactorSet, Observation};

/// Which mode size normalises the Onsager averages `Σ_β` and `D_αβ`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OnsagerNorm {
    /// Divide by the geometric-mean size `N`.
    #[default]
    GeometricMean,
    /// Divide by the size `N_β` of the mode being summed.
    ModeSize,
}

/// Form of the Onsager reaction term.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OnsagerTerm {
    /// Reaction accumulated with the same damping as the estimates:
    /// `R ← (1−λ)·O x̂ᵗ⁻¹ + λ·R`, with `O` built from undamped covariances.
    /// Matches the damped message dynamics, so every λ shares the same
    /// fixed points and stays in their basin.
    #[default]
    Damped,
    /// `R = O x̂ᵗ⁻¹` with `O` built from the damped covariances.
    Literal,
    /// No reaction term (for regression tests only).
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmpConfig {
    /// At low noise the norm map has slope near 3λ − 2, so λ ≤ 1/3
    /// oscillates with period two; the default is 0.5.
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub scaling: ModeScaling,
    pub onsager_norm: OnsagerNorm,
    pub onsager: OnsagerTerm,
}

impl Default for AmpConfig {
    fn default() -> Self {
        Self {
            damping: 0.5,
            tol: 1e-8,
            max_iter: 500,
            scaling: ModeScaling::default(),
            onsager_norm: OnsagerNorm::default(),
            onsager: OnsagerTerm::default(),
        }
    }
}

impl AmpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.damping) {
            return Err(Error::InvalidParameter(format!("damping {} not in [0, 1)", self.damping)));
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

/// Starting point of the iteration.
#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    /// `x̂⁰` drawn from the priors.
    Uninformed,
    /// `x̂⁰ = blend·truth + (1 − blend)·prior sample`.
    Informed { truth: FactorSet, blend: f64 },
    /// Caller-supplied `x̂⁰`.
    Given(FactorSet),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AmpState {
    pub xhat: FactorSet,
    pub xhat_prev: FactorSet,
    /// Mode α holds one row per node with the row-major `r × r` covariance.
    pub sigma: Vec<DMatrix<f64>>,
    /// Precision `A_α` that produced the current estimates (at `t = 0`,
    /// evaluated from `x̂⁰`).
    pub a: Vec<DMatrix<f64>>,
    pub iteration: usize,
    /// Running Onsager reaction, `N_α × r` per mode.
    reaction: Vec<DMatrix<f64>>,
    /// Per-mode sum of the undamped posterior covariances of the last step.
    fresh_cov_sum: Vec<DMatrix<f64>>,
}

impl AmpState {
    pub fn rank(&self) -> usize {
        self.xhat.rank()
    }

    /// Covariance of node `i` in mode `mode`.
    pub fn node_sigma(&self, mode: usize, i: usize) -> DMatrix<f64> {
        let r = self.rank();
        DMatrix::from_row_slice(r, r, &self.sigma[mode].row(i).iter().copied().collect::<Vec<_>>())
    }

    /// Per-mode `(Σ_i σ̂_αi)`.
    pub fn sigma_sum(&self, mode: usize) -> DMatrix<f64> {
        let r = self.rank();
        let col_sums = self.sigma[mode].row_sum();
        DMatrix::from_row_slice(r, r, col_sums.as_slice())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AmpResult {
    pub factors: FactorSet,
    pub sigma: Vec<DMatrix<f64>>,
    /// Overlaps with the truth at `t = 0, 1, …` when a truth was supplied.
    pub overlap_trajectory: Vec<OverlapSet>,
    pub iterations: usize,
    pub converged: bool,
    pub final_delta_x: f64,
}

fn check_priors(obs: &Observation, priors: &[PriorSpec]) -> Result<()> {
    if priors.len() != obs.shape().order() {
        return Err(Error::InvalidArgument(format!(
            "{} priors for an order-{} tensor",
            priors.len(),
            obs.shape().order()
        )));
    }
    priors.iter().try_for_each(PriorSpec::validate)
}

/// `A_α = Δ⁻¹ ⊙∏_{β≠α} (x̂_βᵀ x̂_β / norm_β)`.
pub fn precision(xhat: &FactorSet, delta: f64, mode: usize, scaling: ModeScaling) -> DMatrix<f64> {
    let shape = xhat.shape();
    let r = xhat.rank();
    let mut a = DMatrix::from_element(r, r, 1.0 / delta);
    for (b, x) in xhat.modes().iter().enumerate() {
        if b == mode {
            continue;
        }
        let norm = match scaling {
            ModeScaling::Consistent => shape.geo_mean(),
            ModeScaling::Literal => shape.dim(b) as f64,
        };
        a.component_mul_assign(&(x.transpose() * x / norm));
    }
    priors::symmetrize(&mut a);
    a
}

fn flat_identity(n: usize, r: usize, value: f64) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, r * r);
    for i in 0..n {
        for k in 0..r {
            m[(i, k * r + k)] = value;
        }
    }
    m
}

pub fn init_state(
    obs: &Observation,
    priors: &[PriorSpec],
    rank: usize,
    init: &Init,
    seed: u64,
    config: &AmpConfig,
) -> Result<AmpState> {
    check_priors(obs, priors)?;
    if rank == 0 {
        return Err(Error::InvalidParameter("rank must be at least 1".into()));
    }
    let shape = obs.shape().clone();
    let mut rng = stream_rng(seed, Stream::Init);
    let sample = |rng: &mut _| -> Vec<DMatrix<f64>> {
        priors
            .iter()
            .enumerate()
            .map(|(a, p)| priors::sample_prior_with(p, shape.dim(a), rank, rng))
            .collect()
    };
    let modes = match init {
        Init::Uninformed => sample(&mut rng),
        Init::Informed { truth, blend } => {
            if truth.shape() != &shape || truth.rank() != rank {
                return Err(Error::InvalidArgument("informed truth does not match the observation".into()));
            }
            if !(0.0..=1.0).contains(blend) {
                return Err(Error::InvalidParameter(format!("blend {blend} not in [0, 1]")));
            }
            if *blend == 1.0 {
                truth.modes().to_vec()
            } else {
                sample(&mut rng)
                    .into_iter()
                    .zip(truth.modes())
                    .map(|(s, t)| t * *blend + s * (1.0 - blend))
                    .collect()
            }
        }
        Init::Given(x) => {
            if x.shape() != &shape || x.rank() != rank {
                return Err(Error::InvalidArgument("initial estimate does not match the observation".into()));
            }
            x.modes().to_vec()
        }
    };
    let xhat = FactorSet::new(shape.clone(), modes)?;
    let sigma = priors
        .iter()
        .enumerate()
        .map(|(a, p)| flat_identity(shape.dim(a), rank, p.variance()))
        .collect();
    let fresh_cov_sum = priors
        .iter()
        .enumerate()
        .map(|(a, p)| DMatrix::identity(rank, rank) * (p.variance() * shape.dim(a) as f64))
        .collect();
    let a = (0..shape.order())
        .map(|m| precision(&xhat, obs.delta(), m, config.scaling))
        .collect();
    let reaction = shape.dims().iter().map(|&d| DMatrix::zeros(d, rank)).collect();
    Ok(AmpState {
        xhat_prev: FactorSet::zeros(shape, rank),
        xhat,
        sigma,
        a,
        iteration: 0,
        reaction,
        fresh_cov_sum,
    })
}

/// Onsager matrix `O_α = Δ⁻¹ Σ_{β≠α} Σ_β ⊙ ⊙∏_{γ≠α,β} C_γ`, with
/// `C_γ = x̂_γᵗᵀ x̂_γᵗ⁻¹ / norm_γ`.
fn onsager_matrix(state: &AmpState, cov_sums: &[DMatrix<f64>], delta: f64, mode: usize, norm: OnsagerNorm) -> DMatrix<f64> {
    let shape = state.xhat.shape();
    let r = state.rank();
    let p = shape.order();
    let scale = |b: usize| match norm {
        OnsagerNorm::GeometricMean => shape.geo_mean(),
        OnsagerNorm::ModeSize => shape.dim(b) as f64,
    };
    let lag: Vec<DMatrix<f64>> = (0..p)
        .map(|g| state.xhat.mode(g).transpose() * state.xhat_prev.mode(g) / scale(g))
        .collect();
    let mut out = DMatrix::zeros(r, r);
    for b in (0..p).filter(|&b| b != mode) {
        let mut term = &cov_sums[b] / scale(b);
        for g in (0..p).filter(|&g| g != mode && g != b) {
            term.component_mul_assign(&lag[g]);
        }
        out += term;
    }
    out / delta
}

/// One parallel update of all modes.
pub fn amp_step(state: &AmpState, obs: &Observation, priors: &[PriorSpec], config: &AmpConfig) -> Result<AmpState> {
    check_priors(obs, priors)?;
    if state.xhat.shape() != obs.shape() {
        return Err(Error::InvalidArgument("state does not match the observation".into()));
    }
    let lam = config.damping;
    let shape = obs.shape();
    let p = shape.order();
    let r = state.rank();
    let delta = obs.delta();
    let data_scale = shape.signal_scale() / delta;

    let cov_sums: Vec<DMatrix<f64>> = match config.onsager {
        OnsagerTerm::Damped => state.fresh_cov_sum.clone(),
        _ => (0..p).map(|b| state.sigma_sum(b)).collect(),
    };

    let mut fields = mttkrp_all(obs.tensor(), &state.xhat)?.into_iter();
    let mut new_modes = Vec::with_capacity(p);
    let mut new_sigma = Vec::with_capacity(p);
    let mut new_a = Vec::with_capacity(p);
    let mut new_reaction = Vec::with_capacity(p);
    let mut new_fresh = Vec::with_capacity(p);
    for a in 0..p {
        let prec = precision(&state.xhat, delta, a, config.scaling);
        priors::check_precision(&prec)?;
        let field_scale = match config.scaling {
            ModeScaling::Consistent => data_scale,
            ModeScaling::Literal => data_scale * shape.ratio(a),
        };
        let mut u = fields.next().expect("one field per mode") * field_scale;

        let reaction = match config.onsager {
            OnsagerTerm::Off => DMatrix::zeros(shape.dim(a), r),
            OnsagerTerm::Literal => {
                let o = onsager_matrix(state, &cov_sums, delta, a, config.onsager_norm);
                state.xhat_prev.mode(a) * o.transpose()
            }
            OnsagerTerm::Damped => {
                let o = onsager_matrix(state, &cov_sums, delta, a, config.onsager_norm);
                state.xhat_prev.mode(a) * o.transpose() * (1.0 - lam) + &state.reaction[a] * lam
            }
        };
        u -= &reaction;

        let n = shape.dim(a);
        let old_x = state.xhat.mode(a);
        let old_s = &state.sigma[a];
        let mut x = DMatrix::zeros(n, r);
        let mut s = DMatrix::zeros(n, r * r);
        let mut fresh = DMatrix::zeros(r, r);
        let prior = &priors[a];
        if r == 1 {
            let a00 = prec[(0, 0)];
            for i in 0..n {
                let (f, v) = prior.scalar_moments(a00, u[(i, 0)])?;
                x[(i, 0)] = lam * old_x[(i, 0)] + (1.0 - lam) * f;
                s[(i, 0)] = lam * old_s[(i, 0)] + (1.0 - lam) * v;
                fresh[(0, 0)] += v;
            }
        } else {
            for i in 0..n {
                let ui = DVector::from_iterator(r, u.row(i).iter().copied());
                let (f, c) = priors::moments_unchecked(prior, &prec, &ui)?;
                for k in 0..r {
                    x[(i, k)] = lam * old_x[(i, k)] + (1.0 - lam) * f[k];
                    for l in 0..r {
                        s[(i, k * r + l)] = lam * old_s[(i, k * r + l)] + (1.0 - lam) * c[(k, l)];
                    }
                }
                fresh += c;
            }
        }
        if x.iter().chain(s.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Diverged(format!(
                "non-finite estimate in mode {a} at iteration {}",
                state.iteration + 1
            )));
        }
        new_modes.push(x);
        new_sigma.push(s);
        new_a.push(prec);
        new_reaction.push(reaction);
        new_fresh.push(fresh);
    }
    Ok(AmpState {
        xhat_prev: state.xhat.clone(),
        xhat: FactorSet::new(shape.clone(), new_modes)?,
        sigma: new_sigma,
        a: new_a,
        iteration: state.iteration + 1,
        reaction: new_reaction,
        fresh_cov_sum: new_fresh,
    })
}

/// Iterates [`amp_step`] until the largest per-mode relative change is at
/// most `config.tol` or `config.max_iter` steps have run.
pub fn run_amp(
    obs: &Observation,
    priors: &[PriorSpec],
    rank: usize,
    init: &Init,
    config: &AmpConfig,
    seed: u64,
    truth: Option<&FactorSet>,
) -> Result<AmpResult> {
    config.validate()?;
    let mut state = init_state(obs, priors, rank, init, seed, config)?;
    let mut trajectory = Vec::new();
    if let Some(t) = truth {
        trajectory.push(overlap(&state.xhat, t)?);
    }
    let mut change = f64::INFINITY;
    let mut converged = false;
    while state.iteration < config.max_iter {
        let next = amp_step(&state, obs, priors, config)?;
        change = next.xhat.max_relative_change(&state.xhat)?;
        state = next;
        if let Some(t) = truth {
            trajectory.push(overlap(&state.xhat, t)?);
        }
        if change <= config.tol {
            converged = true;
            break;
        }
    }
    Ok(AmpResult {
        factors: state.xhat,
        sigma: state.sigma,
        overlap_trajectory: trajectory,
        iterations: state.iteration,
        converged,
        final_delta_x: change,
    })
}
