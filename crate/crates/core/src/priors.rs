//! Per-mode priors and their input-channel functions.
//!
//! The channel for a node with precision `A` and field `u` is the tilted
//! prior `P(x) exp(uᵀx − ½ xᵀAx)`; its normaliser is `Z(A, u)`. The posterior
//! mean is `∂ log Z / ∂u` and the covariance the second derivative.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

const SYMMETRY_TOL: f64 = 1e-12;
const PSD_TOL: f64 = -1e-10;

/// Prior of a single mode; entries of the factor are i.i.d. across rows and
/// components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum PriorSpec {
    Gaussian { mu: f64, sigma2: f64 },
    Bernoulli { rho: f64 },
    GaussBernoulli { rho: f64, mu: f64, sigma2: f64 },
}

impl PriorSpec {
    pub fn gaussian(mu: f64, sigma2: f64) -> Result<Self> {
        let p = PriorSpec::Gaussian { mu, sigma2 };
        p.validate()?;
        Ok(p)
    }

    pub fn bernoulli(rho: f64) -> Result<Self> {
        let p = PriorSpec::Bernoulli { rho };
        p.validate()?;
        Ok(p)
    }

    pub fn gauss_bernoulli(rho: f64, mu: f64, sigma2: f64) -> Result<Self> {
        let p = PriorSpec::GaussBernoulli { rho, mu, sigma2 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let check_sigma = |s: f64| {
            if s.is_finite() && s > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("sigma2 must be positive, got {s}")))
            }
        };
        let check_rho = |r: f64| {
            if r > 0.0 && r <= 1.0 {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("rho must lie in (0, 1], got {r}")))
            }
        };
        let check_mu = |m: f64| {
            if m.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("mu must be finite, got {m}")))
            }
        };
        match *self {
            PriorSpec::Gaussian { mu, sigma2 } => {
                check_mu(mu)?;
                check_sigma(sigma2)
            }
            PriorSpec::Bernoulli { rho } => check_rho(rho),
            PriorSpec::GaussBernoulli { rho, mu, sigma2 } => {
                check_rho(rho)?;
                check_mu(mu)?;
                check_sigma(sigma2)
            }
        }
    }

    pub fn mean(&self) -> f64 {
        prior_moments(self).0
    }

    pub fn second_moment(&self) -> f64 {
        prior_moments(self).1
    }

    pub fn variance(&self) -> f64 {
        let (m, s) = prior_moments(self);
        (s - m * m).max(0.0)
    }

    /// Normaliser used by the per-mode MSE: `σ²` for the Gaussian families
    /// and 1 for Bernoulli.
    pub fn mse_scale(&self) -> f64 {
        match *self {
            PriorSpec::Gaussian { sigma2, .. } | PriorSpec::GaussBernoulli { sigma2, .. } => sigma2,
            PriorSpec::Bernoulli { .. } => 1.0,
        }
    }

    pub fn is_gaussian(&self) -> bool {
        matches!(self, PriorSpec::Gaussian { .. })
    }

    /// Scalar channel: returns `(mean, variance)` of the tilted prior for
    /// `r = 1`. `a` is not checked for sign, only the Gaussian part of the
    /// precision has to stay positive.
    pub fn scalar_moments(&self, a: f64, u: f64) -> Result<(f64, f64)> {
        match *self {
            PriorSpec::Gaussian { mu, sigma2 } => {
                let prec = a + 1.0 / sigma2;
                if !(prec > 0.0) {
                    return Err(Error::NumericDomain(format!(
                        "Gaussian channel precision {prec} is not positive"
                    )));
                }
                Ok(((mu / sigma2 + u) / prec, 1.0 / prec))
            }
            PriorSpec::Bernoulli { rho } => {
                if rho >= 1.0 {
                    return Ok((1.0, 0.0));
                }
                let z = u - 0.5 * a + (rho / (1.0 - rho)).ln();
                let f = sigmoid(z);
                // f(1-f) loses precision near saturation, sigmoid(-z) does not
                Ok((f, f * sigmoid(-z)))
            }
            PriorSpec::GaussBernoulli { rho, mu, sigma2 } => {
                let prec = a + 1.0 / sigma2;
                if !(prec > 0.0) {
                    return Err(Error::NumericDomain(format!(
                        "Gauss-Bernoulli channel precision {prec} is not positive"
                    )));
                }
                let b = mu / sigma2 + u;
                let g_mean = b / prec;
                let g_var = 1.0 / prec;
                if rho >= 1.0 {
                    return Ok((g_mean, g_var));
                }
                // log of Z_gauss / Z_zero
                let log_g = -0.5 * (sigma2 * prec).ln() + 0.5 * b * b / prec
                    - 0.5 * mu * mu / sigma2;
                let z = log_g + (rho / (1.0 - rho)).ln();
                let pi = sigmoid(z);
                let f = pi * g_mean;
                let var = pi * g_var + pi * sigmoid(-z) * g_mean * g_mean;
                Ok((f, var))
            }
        }
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

impl fmt::Display for PriorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            PriorSpec::Gaussian { mu, sigma2 } => write!(f, "gaussian({mu},{sigma2})"),
            PriorSpec::Bernoulli { rho } => write!(f, "bernoulli({rho})"),
            PriorSpec::GaussBernoulli { rho, mu, sigma2 } => {
                write!(f, "gauss_bernoulli({rho},{mu},{sigma2})")
            }
        }
    }
}

impl FromStr for PriorSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::Config(format!("cannot parse prior `{s}`"));
        let open = s.find('(').ok_or_else(bad)?;
        if !s.ends_with(')') {
            return Err(bad());
        }
        let name = s[..open].trim().to_ascii_lowercase();
        let args: Vec<f64> = s[open + 1..s.len() - 1]
            .split(',')
            .map(|a| a.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        let prior = match (name.as_str(), args.as_slice()) {
            ("gaussian", &[mu, sigma2]) => PriorSpec::Gaussian { mu, sigma2 },
            ("bernoulli", &[rho]) => PriorSpec::Bernoulli { rho },
            ("gauss_bernoulli", &[rho, mu, sigma2]) => PriorSpec::GaussBernoulli { rho, mu, sigma2 },
            _ => return Err(bad()),
        };
        prior
            .validate()
            .map_err(|e| Error::Config(format!("prior `{s}`: {e}")))?;
        Ok(prior)
    }
}

impl TryFrom<String> for PriorSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<PriorSpec> for String {
    fn from(p: PriorSpec) -> String {
        p.to_string()
    }
}

/// Precision and field of the incoming messages at one node.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelState {
    a: DMatrix<f64>,
    u: DVector<f64>,
}

impl ChannelState {
    pub fn new(a: DMatrix<f64>, u: DVector<f64>) -> Result<Self> {
        check_precision(&a)?;
        if u.len() != a.nrows() {
            return Err(Error::InvalidShape(format!(
                "field has length {} but precision is {}x{}",
                u.len(),
                a.nrows(),
                a.ncols()
            )));
        }
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericDomain("non-finite channel field".into()));
        }
        Ok(Self { a, u })
    }

    pub fn scalar(a: f64, u: f64) -> Result<Self> {
        Self::new(DMatrix::from_element(1, 1, a), DVector::from_element(1, u))
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn u(&self) -> &DVector<f64> {
        &self.u
    }

    pub fn rank(&self) -> usize {
        self.u.len()
    }
}

/// Square, symmetric within 1e-12 and PSD within −1e-10.
pub fn check_precision(a: &DMatrix<f64>) -> Result<()> {
    if a.nrows() != a.ncols() || a.nrows() == 0 {
        return Err(Error::InvalidShape(format!(
            "precision must be square and non-empty, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericDomain("non-finite channel precision".into()));
    }
    let r = a.nrows();
    for i in 0..r {
        for j in 0..i {
            if (a[(i, j)] - a[(j, i)]).abs() > SYMMETRY_TOL {
                return Err(Error::NumericDomain(format!(
                    "precision is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    let min_eig = if r == 1 {
        a[(0, 0)]
    } else {
        a.clone().symmetric_eigen().eigenvalues.min()
    };
    if min_eig < PSD_TOL {
        return Err(Error::NumericDomain(format!(
            "precision is not positive semidefinite (eigenvalue {min_eig:e})"
        )));
    }
    Ok(())
}

pub fn posterior_mean(prior: &PriorSpec, ch: &ChannelState) -> Result<DVector<f64>> {
    Ok(moments_unchecked(prior, &ch.a, &ch.u)?.0)
}

pub fn posterior_cov(prior: &PriorSpec, ch: &ChannelState) -> Result<DMatrix<f64>> {
    Ok(moments_unchecked(prior, &ch.a, &ch.u)?.1)
}

/// Mean and covariance together; cheaper than two separate calls.
pub fn posterior_moments(prior: &PriorSpec, ch: &ChannelState) -> Result<(DVector<f64>, DMatrix<f64>)> {
    moments_unchecked(prior, &ch.a, &ch.u)
}

/// Channel moments without the PSD check on `a`. Callers that already
/// validated `a` once per mode (AMP) or that legitimately see slightly
/// indefinite cavity precisions (BP) go through here.
pub(crate) fn moments_unchecked(
    prior: &PriorSpec,
    a: &DMatrix<f64>,
    u: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let r = u.len();
    if r == 1 {
        let (m, v) = prior.scalar_moments(a[(0, 0)], u[0])?;
        return Ok((DVector::from_element(1, m), DMatrix::from_element(1, 1, v)));
    }
    match *prior {
        PriorSpec::Gaussian { mu, sigma2 } => {
            let prec = a + DMatrix::identity(r, r) / sigma2;
            let chol = prec.cholesky().ok_or_else(|| {
                Error::NumericDomain("Gaussian channel precision is not positive definite".into())
            })?;
            let b = u + DVector::from_element(r, mu / sigma2);
            let mean = chol.solve(&b);
            let mut cov = chol.inverse();
            symmetrize(&mut cov);
            Ok((mean, cov))
        }
        PriorSpec::Bernoulli { .. } | PriorSpec::GaussBernoulli { .. } => {
            for i in 0..r {
                for j in 0..r {
                    if i != j && a[(i, j)].abs() > SYMMETRY_TOL {
                        return Err(Error::NumericDomain(format!(
                            "{prior} prior needs a diagonal precision when r > 1"
                        )));
                    }
                }
            }
            let mut mean = DVector::zeros(r);
            let mut cov = DMatrix::zeros(r, r);
            for k in 0..r {
                let (m, v) = prior.scalar_moments(a[(k, k)], u[k])?;
                mean[k] = m;
                cov[(k, k)] = v;
            }
            Ok((mean, cov))
        }
    }
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let r = m.nrows();
    for i in 0..r {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub fn prior_moments(prior: &PriorSpec) -> (f64, f64) {
    match *prior {
        PriorSpec::Gaussian { mu, sigma2 } => (mu, sigma2 + mu * mu),
        PriorSpec::Bernoulli { rho } => (rho, rho),
        PriorSpec::GaussBernoulli { rho, mu, sigma2 } => (rho * mu, rho * (sigma2 + mu * mu)),
    }
}

/// One draw from the prior.
pub fn draw<R: Rng + ?Sized>(prior: &PriorSpec, rng: &mut R) -> f64 {
    match *prior {
        PriorSpec::Gaussian { mu, sigma2 } => {
            let z: f64 = StandardNormal.sample(rng);
            mu + sigma2.sqrt() * z
        }
        PriorSpec::Bernoulli { rho } => {
            if rng.random::<f64>() < rho {
                1.0
            } else {
                0.0
            }
        }
        PriorSpec::GaussBernoulli { rho, mu, sigma2 } => {
            let on = rng.random::<f64>() < rho;
            let z: f64 = StandardNormal.sample(rng);
            if on {
                mu + sigma2.sqrt() * z
            } else {
                0.0
            }
        }
    }
}

/// `count × rank` matrix of i.i.d. draws, filled row by row.
pub fn sample_prior_with<R: Rng + ?Sized>(
    prior: &PriorSpec,
    count: usize,
    rank: usize,
    rng: &mut R,
) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(count, rank);
    for i in 0..count {
        for k in 0..rank {
            out[(i, k)] = draw(prior, rng);
        }
    }
    out
}

pub fn sample_prior(prior: &PriorSpec, count: usize, rank: usize, seed: u64) -> Result<DMatrix<f64>> {
    if count == 0 || rank == 0 {
        return Err(Error::InvalidArgument("count and rank must be at least 1".into()));
    }
    let mut rng = stream_rng(seed, Stream::Truth);
    Ok(sample_prior_with(prior, count, rank, &mut rng))
}
