//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tensor_amp::{FactorSet, PriorSpec, TensorShape};

/// Adaptive Simpson on `[a, b]` to absolute tolerance `eps`.
pub fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, eps: f64) -> f64 {
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, eps: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let diff = left + right - whole;
        if depth == 0 || diff.abs() <= 15.0 * eps {
            return left + right + diff / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, 0.5 * eps, depth - 1) + rec(f, m, b, fm, frm, fb, right, 0.5 * eps, depth - 1)
    }
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, eps, 40)
}

/// Posterior mean and variance of the scalar channel
/// `P(x) ∝ P_prior(x) exp(u x − A x²/2)`, integrated numerically.
///
/// The continuous part is integrated over `[-60, 60]` split into panels,
/// after shifting the log-weight by its maximum on a fine grid.
pub fn quad_moments(prior: &PriorSpec, a: f64, u: f64) -> (f64, f64) {
    let channel = |x: f64| u * x - 0.5 * a * x * x;
    let gauss_log = |x: f64, mu: f64, s2: f64| -0.5 * (x - mu).powi(2) / s2 - 0.5 * (2.0 * std::f64::consts::PI * s2).ln();
    let (atoms, cont): (Vec<(f64, f64)>, Option<(f64, f64, f64)>) = match *prior {
        PriorSpec::Gaussian { mu, sigma2 } => (vec![], Some((1.0, mu, sigma2))),
        PriorSpec::Bernoulli { rho } => (vec![(0.0, 1.0 - rho), (1.0, rho)], None),
        PriorSpec::GaussBernoulli { rho, mu, sigma2 } => (vec![(0.0, 1.0 - rho)], Some((rho, mu, sigma2))),
    };
    let atoms: Vec<(f64, f64)> = atoms.into_iter().filter(|&(_, w)| w > 0.0).collect();
    let cont_log = |x: f64| -> f64 {
        match cont {
            Some((w, mu, s2)) => w.ln() + gauss_log(x, mu, s2) + channel(x),
            None => f64::NEG_INFINITY,
        }
    };
    let mut shift = atoms
        .iter()
        .map(|&(x, w)| w.ln() + channel(x))
        .fold(f64::NEG_INFINITY, f64::max);
    if cont.is_some() {
        let grid_max = (0..=120_000)
            .map(|k| -60.0 + 1e-3 * k as f64)
            .map(cont_log)
            .fold(f64::NEG_INFINITY, f64::max);
        shift = shift.max(grid_max);
    }
    let mut z = [0.0; 3];
    for &(x, w) in &atoms {
        let g = (w.ln() + channel(x) - shift).exp();
        z[0] += g;
        z[1] += g * x;
        z[2] += g * x * x;
    }
    if cont.is_some() {
        for (k, zk) in z.iter_mut().enumerate() {
            let f = |x: f64| (cont_log(x) - shift).exp() * x.powi(k as i32);
            let panels = 600;
            let mut acc = 0.0;
            for j in 0..panels {
                let lo = -60.0 + 120.0 * j as f64 / panels as f64;
                let hi = lo + 120.0 / panels as f64;
                acc += simpson(&f, lo, hi, 1e-15);
            }
            *zk += acc;
        }
    }
    let mean = z[1] / z[0];
    (mean, z[2] / z[0] - mean * mean)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_factors(dims: &[usize], rank: usize, seed: u64) -> FactorSet {
    let mut r = rng(seed);
    let shape = TensorShape::new(dims).unwrap();
    let modes = dims
        .iter()
        .map(|&d| DMatrix::from_fn(d, rank, |_, _| r.random_range(-1.0..1.0)))
        .collect();
    FactorSet::new(shape, modes).unwrap()
}

/// Calls `visit(index)` for every multi-index of `dims`, last index fastest.
pub fn for_each_index(dims: &[usize], mut visit: impl FnMut(&[usize])) {
    let total: usize = dims.iter().product();
    let mut idx = vec![0; dims.len()];
    for _ in 0..total {
        visit(&idx);
        for a in (0..dims.len()).rev() {
            idx[a] += 1;
            if idx[a] < dims[a] {
                break;
            }
            idx[a] = 0;
        }
    }
}

/// Nested-loop `N^{-(p-1)/2} Σ_ρ Π_α x_{α i_α}^ρ`, row-major.
pub fn brute_low_rank(f: &FactorSet) -> Vec<f64> {
    let dims = f.shape().dims().to_vec();
    let n = (dims.iter().map(|&d| d as f64).product::<f64>()).powf(1.0 / dims.len() as f64);
    let scale = n.powf(-(dims.len() as f64 - 1.0) / 2.0);
    let mut out = Vec::new();
    for_each_index(&dims, |idx| {
        let mut s = 0.0;
        for rho in 0..f.rank() {
            s += idx.iter().enumerate().map(|(a, &i)| f.mode(a)[(i, rho)]).product::<f64>();
        }
        out.push(scale * s);
    });
    out
}

/// Nested-loop contraction with every factor except `mode`.
pub fn brute_mttkrp(y: &[f64], f: &FactorSet, mode: usize) -> DMatrix<f64> {
    let dims = f.shape().dims().to_vec();
    let mut out = DMatrix::zeros(dims[mode], f.rank());
    let mut flat = 0;
    for_each_index(&dims, |idx| {
        for rho in 0..f.rank() {
            let w: f64 = idx
                .iter()
                .enumerate()
                .filter(|&(a, _)| a != mode)
                .map(|(a, &i)| f.mode(a)[(i, rho)])
                .product();
            out[(idx[mode], rho)] += y[flat] * w;
        }
        flat += 1;
    });
    out
}
