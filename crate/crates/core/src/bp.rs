//! Directed-message belief propagation on the full factor graph.
//!
//! Every tensor entry `a` is a factor node; each variable `(α, i)` sends a
//! message `(x̂_{αi→a}, σ_{αi→a})` to every factor containing it. The cost is
//! `O(p · entries)` per sweep, so this is only a validation oracle for AMP
//! on small tensors. No Bayes-optimal simplification is applied: the factor
//! messages use `S_a = Y_a/Δ` and `R_a = S_a² − 1/Δ`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::priors::{self, PriorSpec};
use crate::rng::{stream_rng, Stream};
use crate::tensor::{FactorSet, Observation};

/// Largest tensor (in entries) accepted by [`bp_reference`].
pub const MAX_ENTRIES: usize = 100_000;

/// BP from a prior sample (seeded like AMP's uninformed start), damping 0.3.
pub fn bp_reference(obs: &Observation, priors: &[PriorSpec], rank: usize, iters: usize, seed: u64) -> Result<FactorSet> {
    guard(obs)?;
    if priors.len() != obs.shape().order() {
        return Err(Error::InvalidArgument(format!(
            "{} priors for an order-{} tensor",
            priors.len(),
            obs.shape().order()
        )));
    }
    if rank == 0 {
        return Err(Error::InvalidParameter("rank must be at least 1".into()));
    }
    let shape = obs.shape();
    let mut rng = stream_rng(seed, Stream::Init);
    let modes = priors
        .iter()
        .enumerate()
        .map(|(a, p)| priors::sample_prior_with(p, shape.dim(a), rank, &mut rng))
        .collect();
    let init = FactorSet::new(shape.clone(), modes)?;
    bp_from(obs, priors, &init, &BpOptions { iters, ..BpOptions::default() })
}

/// Which factor-to-variable precision is used.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum BpForm {
    /// `s² Σ_b [S_b² ∏x̂x̂ᵀ − R_b ∏(σ + x̂x̂ᵀ)]`, valid for any prior.
    #[default]
    General,
    /// Bayes-optimal averages `S_b² → 1/Δ`, `R_b → 0`. Needed when the
    /// per-entry signal is not small against the noise (near-noiseless
    /// runs), where the general form loses positivity.
    BayesOptimal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BpOptions {
    pub iters: usize,
    pub damping: f64,
    /// Initial message variance; `None` uses each prior's variance.
    pub init_var: Option<f64>,
    pub form: BpForm,
}

impl Default for BpOptions {
    fn default() -> Self {
        Self {
            iters: 50,
            damping: 0.3,
            init_var: None,
            form: BpForm::General,
        }
    }
}

fn guard(obs: &Observation) -> Result<()> {
    let entries = obs.shape().len();
    if entries > MAX_ENTRIES {
        return Err(Error::TooLarge {
            entries,
            limit: MAX_ENTRIES,
        });
    }
    Ok(())
}

/// BP with every outgoing message initialised to `init`. Returns the node
/// marginals after `opts.iters` synchronous sweeps.
pub fn bp_from(obs: &Observation, priors: &[PriorSpec], init: &FactorSet, opts: &BpOptions) -> Result<FactorSet> {
    let BpOptions { iters, damping, init_var, form } = *opts;
    guard(obs)?;
    let shape = obs.shape().clone();
    if init.shape() != &shape {
        return Err(Error::InvalidArgument("initial estimate does not match the observation".into()));
    }
    if priors.len() != shape.order() {
        return Err(Error::InvalidArgument("one prior per mode is required".into()));
    }
    if !(0.0..1.0).contains(&damping) {
        return Err(Error::InvalidParameter(format!("damping {damping} not in [0, 1)")));
    }
    let p = shape.order();
    let r = init.rank();
    let rr = r * r;
    let len = shape.len();
    let delta = obs.delta();
    let s1 = shape.signal_scale();
    let s2 = s1 * s1;
    let y = obs.tensor().values();

    // msg_x[(α·len + a)·r + k], msg_s[(α·len + a)·rr + k·r + l]
    let mut msg_x = vec![0.0; p * len * r];
    let mut msg_s = vec![0.0; p * len * rr];
    let mut index = vec![0usize; p];
    for a in 0..len {
        for (m, idx) in index.iter().enumerate() {
            for k in 0..r {
                msg_x[(m * len + a) * r + k] = init.mode(m)[(*idx, k)];
                msg_s[(m * len + a) * rr + k * r + k] = init_var.unwrap_or_else(|| priors[m].variance());
            }
        }
        advance(&mut index, shape.dims());
    }

    let mut contrib_u = vec![0.0; p * len * r];
    let mut contrib_a = vec![0.0; p * len * rr];
    let mut marg = (Vec::new(), Vec::new());
    for sweep in 0..=iters {
        // factor-to-variable contributions
        let mut full_u: Vec<Vec<f64>> = shape.dims().iter().map(|&d| vec![0.0; d * r]).collect();
        let mut full_a: Vec<Vec<f64>> = shape.dims().iter().map(|&d| vec![0.0; d * rr]).collect();
        index.iter_mut().for_each(|v| *v = 0);
        let mut prod_x = vec![0.0; r];
        let mut prod_s = vec![0.0; rr];
        for a in 0..len {
            let sa = y[a] / delta;
            let (sq, ra) = match form {
                BpForm::General => (sa * sa, sa * sa - 1.0 / delta),
                BpForm::BayesOptimal => (1.0 / delta, 0.0),
            };
            for m in 0..p {
                prod_x.iter_mut().for_each(|v| *v = 1.0);
                prod_s.iter_mut().for_each(|v| *v = 1.0);
                for b in (0..p).filter(|&b| b != m) {
                    let xb = &msg_x[(b * len + a) * r..(b * len + a + 1) * r];
                    let sb = &msg_s[(b * len + a) * rr..(b * len + a + 1) * rr];
                    for k in 0..r {
                        prod_x[k] *= xb[k];
                        for l in 0..r {
                            prod_s[k * r + l] *= sb[k * r + l] + xb[k] * xb[l];
                        }
                    }
                }
                let i = index[m];
                for k in 0..r {
                    let cu = s1 * sa * prod_x[k];
                    contrib_u[(m * len + a) * r + k] = cu;
                    full_u[m][i * r + k] += cu;
                    for l in 0..r {
                        let ca = s2 * (sq * prod_x[k] * prod_x[l] - ra * prod_s[k * r + l]);
                        contrib_a[(m * len + a) * rr + k * r + l] = ca;
                        full_a[m][i * rr + k * r + l] += ca;
                    }
                }
            }
            advance(&mut index, shape.dims());
        }

        if sweep == iters {
            marg = (full_u, full_a);
            break;
        }

        // variable-to-factor messages
        index.iter_mut().for_each(|v| *v = 0);
        let mut u = DVector::zeros(r);
        let mut am = DMatrix::zeros(r, r);
        for a in 0..len {
            for m in 0..p {
                let i = index[m];
                let base = m * len + a;
                for k in 0..r {
                    u[k] = full_u[m][i * r + k] - contrib_u[base * r + k];
                    for l in 0..r {
                        am[(k, l)] = full_a[m][i * rr + k * r + l] - contrib_a[base * rr + k * r + l];
                    }
                }
                priors::symmetrize(&mut am);
                let (f, c) = priors::moments_unchecked(&priors[m], &am, &u)?;
                for k in 0..r {
                    let slot = &mut msg_x[base * r + k];
                    *slot = damping * *slot + (1.0 - damping) * f[k];
                    for l in 0..r {
                        let slot = &mut msg_s[base * rr + k * r + l];
                        *slot = damping * *slot + (1.0 - damping) * c[(k, l)];
                    }
                }
            }
            advance(&mut index, shape.dims());
        }
        if msg_x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged(format!("BP messages became non-finite in sweep {}", sweep + 1)));
        }
    }

    let (full_u, full_a) = marg;
    let modes = (0..p)
        .map(|m| {
            let n = shape.dim(m);
            let mut out = DMatrix::zeros(n, r);
            for i in 0..n {
                let u = DVector::from_row_slice(&full_u[m][i * r..(i + 1) * r]);
                let mut am = DMatrix::from_row_slice(r, r, &full_a[m][i * rr..(i + 1) * rr]);
                priors::symmetrize(&mut am);
                let (f, _) = priors::moments_unchecked(&priors[m], &am, &u)?;
                out.row_mut(i).copy_from(&f.transpose());
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    FactorSet::new(shape, modes)
}

/// Row-major odometer step.
fn advance(index: &mut [usize], dims: &[usize]) {
    for m in (0..dims.len()).rev() {
        index[m] += 1;
        if index[m] < dims[m] {
            return;
        }
        index[m] = 0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::priors::sample_prior;
    use crate::tensor::{add_noise, low_rank_tensor, TensorShape};

    #[test]
    fn size_guard() {
        let shape = TensorShape::new(&[50, 50, 50]).unwrap();
        let obs = add_noise(&crate::tensor::DenseTensor::zeros(shape), 1.0, 0).unwrap();
        let priors = vec![PriorSpec::gaussian(0.0, 1.0).unwrap(); 3];
        assert!(matches!(
            bp_reference(&obs, &priors, 1, 1, 0),
            Err(Error::TooLarge { entries: 125_000, .. })
        ));
    }

    #[test]
    fn near_noiseless_recovers_truth() {
        let shape = TensorShape::new(&[6, 7, 5]).unwrap();
        let priors = vec![PriorSpec::gaussian(0.2, 1.0).unwrap(); 3];
        let modes = (0..3)
            .map(|a| sample_prior(&priors[a], shape.dim(a), 1, 70 + a as u64).unwrap())
            .collect();
        let truth = FactorSet::new(shape, modes).unwrap();
        let obs = add_noise(&low_rank_tensor(&truth), 1e-9, 3).unwrap();
        let opts = BpOptions { iters: 20, damping: 0.3, init_var: Some(0.0), form: BpForm::BayesOptimal };
        let est = bp_from(&obs, &priors, &truth, &opts).unwrap();
        assert!(est.max_abs_diff(&truth).unwrap() < 1e-3);
    }
}
