//! Gauss-Hermite rules for expectations over a standard normal variable.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// `K`-node rule with `E[g(Z)] ≈ Σ_k w_k g(x_k)` for `Z ~ N(0, 1)`.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussHermite {
    /// Nodes come from Newton iteration on the orthonormal Hermite
    /// recurrence, started from the usual asymptotic guesses.
    pub fn new(k: usize) -> Result<Self> {
        if k < 1 {
            return Err(Error::InvalidParameter("Gauss-Hermite needs at least one node".into()));
        }
        let pim4 = PI.powf(-0.25);
        let m = k.div_ceil(2);
        let nf = k as f64;
        let mut x = vec![0.0; k];
        let mut w = vec![0.0; k];
        let mut z = 0.0f64;
        for i in 0..m {
            z = match i {
                0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
                1 => z - 1.14 * nf.powf(0.426) / z,
                2 => 1.86 * z - 0.86 * x[0],
                3 => 1.91 * z - 0.91 * x[1],
                _ => 2.0 * z - x[i - 2],
            };
            let mut pp = 0.0;
            let mut converged = false;
            for _ in 0..100 {
                let mut p1 = pim4;
                let mut p2 = 0.0;
                for j in 0..k {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
                }
                pp = (2.0 * nf).sqrt() * p2;
                let z1 = z;
                z = z1 - p1 / pp;
                if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                    converged = true;
                    break;
                }
            }
            if !converged {
                return Err(Error::NumericDomain(format!(
                    "Gauss-Hermite root {i} of {k} did not converge"
                )));
            }
            x[i] = z;
            x[k - 1 - i] = -z;
            w[i] = 2.0 / (pp * pp);
            w[k - 1 - i] = w[i];
        }
        // physicists' rule (weight e^{-t²}) to standard normal expectation
        let nodes = x.iter().rev().map(|t| t * 2f64.sqrt()).collect();
        let weights = w.iter().rev().map(|v| v / PI.sqrt()).collect();
        Ok(Self { nodes, weights })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.nodes.iter().copied().zip(self.weights.iter().copied())
    }

    /// `E[g(Z)]`, `Z ~ N(0, 1)`.
    pub fn expect(&self, mut g: impl FnMut(f64) -> f64) -> f64 {
        self.iter().map(|(x, w)| w * g(x)).sum()
    }
}
