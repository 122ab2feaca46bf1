mod common;

use nalgebra::{DMatrix, DVector};
use tensor_amp::amp::{amp_step, init_state, run_amp, AmpConfig, Init, OnsagerTerm};
use tensor_amp::harness::experiment::generate_problem;
use tensor_amp::harness::{align_with, direct_mse, Gauge};
use tensor_amp::{add_noise, low_rank_tensor, self_overlap, FactorSet, PriorSpec, TensorShape};

/// Rank-one matrix AMP for `Y = uvᵀ/√N + √Δ W` with Gaussian priors:
/// `x̂_a = (μ/σ² + B_a)/(A_a + 1/σ²)` with
/// `B_a = Y x̂_b/(√N Δ) − (Σ_i σ_bi)/(N Δ) · x̂_a^{t-1}` and
/// `A_a = ‖x̂_b‖²/(N Δ)`.
struct MatrixAmp {
    y: DMatrix<f64>,
    n: f64,
    delta: f64,
    mu: f64,
    s2: f64,
}

impl MatrixAmp {
    fn step(&self, x: &[DVector<f64>; 2], prev: &[DVector<f64>; 2], var: &[DVector<f64>; 2], onsager: bool) -> ([DVector<f64>; 2], [DVector<f64>; 2]) {
        let fields = [&self.y * &x[1], self.y.transpose() * &x[0]];
        let mut nx = [DVector::zeros(0), DVector::zeros(0)];
        let mut nv = [DVector::zeros(0), DVector::zeros(0)];
        for a in 0..2 {
            let b = 1 - a;
            let prec = x[b].norm_squared() / (self.n * self.delta);
            let mut field = &fields[a] / (self.n.sqrt() * self.delta);
            if onsager {
                field -= &prev[a] * (var[b].sum() / (self.n * self.delta));
            }
            let denom = prec + 1.0 / self.s2;
            nx[a] = field.map(|bv| (self.mu / self.s2 + bv) / denom);
            nv[a] = DVector::from_element(nx[a].len(), 1.0 / denom);
        }
        (nx, nv)
    }
}

fn matrix_problem() -> (FactorSet, tensor_amp::Observation, Vec<PriorSpec>) {
    let shape = TensorShape::new(&[30, 50]).unwrap();
    let priors = vec![PriorSpec::gaussian(0.3, 1.0).unwrap(); 2];
    let (truth, obs) = generate_problem(&shape, &priors, 1, 0.4, 3).unwrap();
    (truth, obs, priors)
}

fn check_against_hand_rolled(onsager: OnsagerTerm) {
    let (truth, obs, priors) = matrix_problem();
    let y = DMatrix::from_row_slice(30, 50, obs.tensor().values());
    let reference = MatrixAmp {
        y,
        n: (30.0f64 * 50.0).sqrt(),
        delta: 0.4,
        mu: 0.3,
        s2: 1.0,
    };
    let start = common::random_factors(&[30, 50], 1, 9);
    let cfg = AmpConfig { damping: 0.0, onsager, ..AmpConfig::default() };
    let mut state = init_state(&obs, &priors, 1, &Init::Given(start.clone()), 0, &cfg).unwrap();
    let col = |f: &FactorSet, a: usize| DVector::from_column_slice(f.mode(a).as_slice());
    let mut x = [col(&start, 0), col(&start, 1)];
    let mut prev = [DVector::zeros(30), DVector::zeros(50)];
    let mut var = [DVector::from_element(30, 1.0), DVector::from_element(50, 1.0)];
    for t in 0..8 {
        state = amp_step(&state, &obs, &priors, &cfg).unwrap();
        let (nx, nv) = reference.step(&x, &prev, &var, onsager != OnsagerTerm::Off);
        prev = x;
        x = nx;
        var = nv;
        for a in 0..2 {
            let diff = (col(&state.xhat, a) - &x[a]).amax();
            assert!(diff < 1e-10, "{onsager:?} step {t} mode {a}: {diff}");
        }
    }
    let _ = truth;
}

#[test]
fn matrix_case_without_reaction() {
    check_against_hand_rolled(OnsagerTerm::Off);
}

#[test]
fn matrix_case_with_reaction() {
    check_against_hand_rolled(OnsagerTerm::Literal);
    check_against_hand_rolled(OnsagerTerm::Damped);
}

#[test]
fn damping_does_not_move_fixed_points() {
    let shape = TensorShape::new(&[40, 30, 50]).unwrap();
    let priors = vec![PriorSpec::gaussian(0.3, 1.0).unwrap(); 3];
    let (truth, obs) = generate_problem(&shape, &priors, 1, 0.1, 2).unwrap();
    let init = Init::Informed { truth: truth.clone(), blend: 1.0 };
    let fixed: Vec<FactorSet> = [0.2, 0.6]
        .iter()
        .map(|&damping| {
            let cfg = AmpConfig { damping, tol: 1e-11, max_iter: 3000, ..AmpConfig::default() };
            let out = run_amp(&obs, &priors, 1, &init, &cfg, 1, None).unwrap();
            assert!(out.converged);
            out.factors
        })
        .collect();
    assert!(fixed[0].max_abs_diff(&fixed[1]).unwrap() < 1e-7);
}

// At low noise the norm map of the Gaussian channel has slope 3λ − 2,
// so these runs need λ > 1/3.
fn low_noise_config() -> AmpConfig {
    AmpConfig { damping: 0.6, max_iter: 2000, ..AmpConfig::default() }
}

#[test]
fn near_noiseless_recovery_rank_two() {
    let shape = TensorShape::new(&[30, 30, 30]).unwrap();
    let priors = vec![PriorSpec::gaussian(0.0, 1.0).unwrap(); 3];
    let (truth, obs) = generate_problem(&shape, &priors, 2, 1e-4, 6).unwrap();
    let init = Init::Informed { truth: truth.clone(), blend: 0.9 };
    let out = run_amp(&obs, &priors, 2, &init, &low_noise_config(), 2, None).unwrap();
    let (aligned, _) = align_with(&out.factors, &truth, Gauge::Signs).unwrap();
    let mse = direct_mse(&aligned, &truth, &priors).unwrap();
    assert!(mse < 1e-2, "{mse}");
}

#[test]
fn vanishing_noise_overlap() {
    // per-mode scales c_α with Π c_α = 1 are pinned only by the prior, at
    // strength O(Δ), so only their product is tight from a blended start
    let shape = TensorShape::new(&[60, 50, 70]).unwrap();
    let priors = vec![PriorSpec::gaussian(0.1, 1.0).unwrap(); 3];
    let (truth, obs) = generate_problem(&shape, &priors, 1, 1e-6, 8).unwrap();
    let own = self_overlap(&truth);
    let cfg = AmpConfig { max_iter: 200, ..low_noise_config() };
    for blend in [1.0, 0.9] {
        let init = Init::Informed { truth: truth.clone(), blend };
        let out = run_amp(&obs, &priors, 1, &init, &cfg, 8, None).unwrap();
        let (_, m) = align_with(&out.factors, &truth, Gauge::Signs).unwrap();
        let ratios: Vec<f64> = (0..3).map(|a| m.mode(a)[(0, 0)] / own.mode(a)[(0, 0)]).collect();
        if blend == 1.0 {
            assert!(ratios.iter().all(|&q| q >= 0.999), "{ratios:?}");
        }
        let prod: f64 = ratios.iter().product();
        assert!((prod - 1.0).abs() < 1e-3, "{ratios:?}");
    }
}

#[test]
fn zero_signal_keeps_zero_mean_estimates_small() {
    let shape = TensorShape::new(&[25, 25, 25]).unwrap();
    let priors = vec![PriorSpec::gaussian(0.0, 1.0).unwrap(); 3];
    let w = low_rank_tensor(&FactorSet::zeros(shape, 1));
    let obs = add_noise(&w, 1.0, 4).unwrap();
    let out = run_amp(&obs, &priors, 1, &Init::Uninformed, &AmpConfig::default(), 4, None).unwrap();
    let rms = out.factors.modes().iter().map(|m| m.norm() / (m.nrows() as f64).sqrt()).fold(0.0, f64::max);
    assert!(rms < 0.2, "{rms}");
}
