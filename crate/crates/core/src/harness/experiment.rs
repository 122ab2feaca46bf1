//! Batches of runs over seeds and noise levels.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use super::align::{align_with, direct_mse, factor_mse, tensor_mse, Gauge};
use super::config::{Algorithm, ExperimentConfig};
use super::records::{
    write_compare_csv, write_jsonl, write_means_csv, write_records_csv, write_serialized_csv, write_shape_csv,
    CompareRow, CompareTable, Method, RunRecord,
};
use crate::als::run_als;
use crate::amp::{run_amp, Init};
use crate::error::{Error, Result};
use crate::phase::{find_delta_alg, find_delta_dyn, sweep_means, sweep_shape, InitRegime, MeansRow, ShapeRow};
use crate::priors::{sample_prior_with, PriorSpec};
use crate::rng::{stream_rng, Stream};
use crate::state_evolution::{informed_init, mse_from_overlap, se_fixed_point, uninformed_init};
use crate::tensor::{add_noise, low_rank_tensor, FactorSet, Observation, TensorShape};

/// Planted instance: factors from the `Truth` stream, noise from `Noise`.
pub fn generate_problem(
    shape: &TensorShape,
    priors: &[PriorSpec],
    rank: usize,
    delta: f64,
    seed: u64,
) -> Result<(FactorSet, Observation)> {
    if priors.len() != shape.order() {
        return Err(Error::InvalidArgument(format!(
            "{} priors for an order-{} tensor",
            priors.len(),
            shape.order()
        )));
    }
    let mut rng = stream_rng(seed, Stream::Truth);
    let modes = priors
        .iter()
        .zip(shape.dims())
        .map(|(p, &n)| sample_prior_with(p, n, rank, &mut rng))
        .collect();
    let truth = FactorSet::new(shape.clone(), modes)?;
    let obs = add_noise(&low_rank_tensor(&truth), delta, seed)?;
    Ok((truth, obs))
}

struct Base {
    dims: Vec<usize>,
    rank: usize,
    priors: Vec<PriorSpec>,
}

fn blank(base: &Base, method: Method, seed: Option<u64>, delta: f64, init: InitRegime) -> RunRecord {
    RunRecord {
        method,
        seed,
        delta,
        init,
        dims: base.dims.clone(),
        rank: base.rank,
        priors: base.priors.clone(),
        overlaps: None,
        factor_mse: None,
        direct_mse: None,
        tensor_mse: None,
        iterations: 0,
        converged: false,
        success: None,
        wall_time_s: None,
        error: None,
    }
}

fn estimate(
    cfg: &ExperimentConfig,
    method: Method,
    truth: &FactorSet,
    obs: &Observation,
    priors: &[PriorSpec],
    seed: u64,
) -> Result<(FactorSet, usize, bool)> {
    match method {
        Method::Amp => {
            let init = match cfg.init {
                InitRegime::Uninformed => Init::Uninformed,
                InitRegime::Informed => Init::Informed {
                    truth: truth.clone(),
                    blend: cfg.amp.blend,
                },
            };
            let out = run_amp(obs, priors, cfg.rank, &init, &cfg.amp_config(), seed, None)?;
            Ok((out.factors, out.iterations, out.converged))
        }
        Method::Als => {
            let out = run_als(obs, &cfg.als_config(seed), None)?;
            Ok((out.factors, out.iterations, out.converged))
        }
        Method::Se => Err(Error::InvalidArgument("state evolution needs no instance".into())),
    }
}

fn score(
    cfg: &ExperimentConfig,
    method: Method,
    truth: &FactorSet,
    obs: &Observation,
    priors: &[PriorSpec],
    seed: u64,
    rec: &mut RunRecord,
) -> Result<()> {
    let (est, iterations, converged) = estimate(cfg, method, truth, obs, priors, seed)?;
    rec.iterations = iterations;
    rec.converged = converged;
    let gauge = if method == Method::Als { Gauge::Full } else { Gauge::Signs };
    let (aligned, m) = align_with(&est, truth, gauge)?;
    let direct = direct_mse(&aligned, truth, priors)?;
    rec.factor_mse = Some(factor_mse(&aligned, truth, priors)?);
    rec.direct_mse = Some(direct);
    rec.tensor_mse = Some(tensor_mse(&est, truth)?);
    rec.overlaps = Some(m);
    rec.success = Some(direct < cfg.success_threshold);
    Ok(())
}

/// All methods on one planted instance.
fn run_cell(cfg: &ExperimentConfig, base: &Base, methods: &[Method], delta: f64, seed: u64) -> Vec<RunRecord> {
    let start = Instant::now();
    let problem = cfg
        .shape()
        .and_then(|shape| generate_problem(&shape, &base.priors, cfg.rank, delta, seed))
        .map_err(|e| e.to_string());
    methods
        .iter()
        .map(|&method| {
            let mut rec = blank(base, method, Some(seed), delta, cfg.init);
            let t0 = Instant::now();
            let res = match &problem {
                Ok((truth, obs)) => score(cfg, method, truth, obs, &base.priors, seed, &mut rec).map_err(|e| e.to_string()),
                Err(e) => Err(e.clone()),
            };
            if let Err(e) = res {
                rec.error = Some(e);
            }
            if !cfg.deterministic {
                let generation = if method == methods[0] { t0 - start } else { Default::default() };
                rec.wall_time_s = Some((t0.elapsed() + generation).as_secs_f64());
            }
            rec
        })
        .collect()
}

fn se_record(cfg: &ExperimentConfig, base: &Base, delta: f64, init: InitRegime) -> RunRecord {
    let t0 = Instant::now();
    let mut rec = blank(base, Method::Se, None, delta, init);
    let res = cfg.se_params(delta).and_then(|params| {
        let start = match init {
            InitRegime::Informed => informed_init(&params),
            InitRegime::Uninformed => uninformed_init(&params),
        };
        let out = se_fixed_point(&start, &params, cfg.se.tol, cfg.se.max_iter)?;
        Ok((mse_from_overlap(&out.fixed_point, &base.priors)?, out))
    });
    match res {
        Ok((mse, out)) => {
            rec.factor_mse = Some(mse);
            rec.iterations = out.iterations;
            rec.converged = out.converged;
            rec.success = Some(mse < cfg.success_threshold);
            rec.overlaps = Some(out.fixed_point);
        }
        Err(e) => rec.error = Some(e.to_string()),
    }
    if !cfg.deterministic {
        rec.wall_time_s = Some(t0.elapsed().as_secs_f64());
    }
    rec
}

fn methods_for(algorithm: Algorithm) -> Vec<Method> {
    match algorithm {
        Algorithm::Amp => vec![Method::Amp],
        Algorithm::Als => vec![Method::Als],
        Algorithm::Compare => vec![Method::Amp, Method::Als],
        Algorithm::Se | Algorithm::Phase => Vec::new(),
    }
}

fn in_pool<T: Send>(threads: usize, job: impl FnOnce() -> T + Send) -> Result<T> {
    if threads == 0 {
        return Ok(job());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {threads} workers: {e}")))?;
    Ok(pool.install(job))
}

/// Records in a fixed order: Δ, then seed, then method. State evolution
/// yields one record per Δ and start (informed first); phase sweeps yield
/// none (see [`run_phase`]).
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    cfg.validate()?;
    let base = Base {
        dims: cfg.dims.clone(),
        rank: cfg.rank,
        priors: cfg.mode_priors()?,
    };
    let deltas = cfg.delta_grid();
    in_pool(cfg.threads, || match cfg.algorithm {
        Algorithm::Phase => Vec::new(),
        Algorithm::Se => {
            let cells: Vec<(f64, InitRegime)> = deltas
                .iter()
                .flat_map(|&d| [(d, InitRegime::Informed), (d, InitRegime::Uninformed)])
                .collect();
            cells.par_iter().map(|&(d, init)| se_record(cfg, &base, d, init)).collect()
        }
        alg => {
            let methods = methods_for(alg);
            let cells: Vec<(f64, u64)> = deltas
                .iter()
                .flat_map(|&d| cfg.seeds.iter().map(move |&s| (d, s)))
                .collect();
            let nested: Vec<Vec<RunRecord>> = cells
                .par_iter()
                .map(|&(d, s)| run_cell(cfg, &base, &methods, d, s))
                .collect();
            nested.into_iter().flatten().collect()
        }
    })
}

/// Success rates and mean MSEs per Δ. Failed runs count as unsuccessful
/// and are left out of the means.
pub fn summarize(records: &[RunRecord], deltas: &[f64]) -> Vec<CompareRow> {
    let stats = |method: Method, delta: f64| {
        let runs: Vec<&RunRecord> = records
            .iter()
            .filter(|r| r.method == method && r.delta == delta)
            .collect();
        if runs.is_empty() {
            return (f64::NAN, f64::NAN);
        }
        let wins = runs.iter().filter(|r| r.success == Some(true)).count();
        let mses: Vec<f64> = runs.iter().filter_map(|r| r.direct_mse).collect();
        let mean = if mses.is_empty() {
            f64::NAN
        } else {
            mses.iter().sum::<f64>() / mses.len() as f64
        };
        (wins as f64 / runs.len() as f64, mean)
    };
    deltas
        .iter()
        .map(|&delta| {
            let (amp_success_rate, amp_mean_mse) = stats(Method::Amp, delta);
            let (als_success_rate, als_mean_mse) = stats(Method::Als, delta);
            CompareRow {
                delta,
                amp_success_rate,
                als_success_rate,
                amp_mean_mse,
                als_mean_mse,
            }
        })
        .collect()
}

/// State-evolution `Δ_alg` for the configured priors and shape.
pub fn predicted_delta_alg(cfg: &ExperimentConfig) -> Result<f64> {
    find_delta_alg(&cfg.phase_query()?)
}

pub fn compare_amp_als(cfg: &ExperimentConfig) -> Result<(CompareTable, Vec<RunRecord>)> {
    if cfg.delta_grid().is_empty() {
        return Err(Error::Config("comparison needs a non-empty delta grid".into()));
    }
    let cfg = ExperimentConfig {
        algorithm: Algorithm::Compare,
        ..cfg.clone()
    };
    let records = run_experiment(&cfg)?;
    let table = CompareTable {
        delta_alg: predicted_delta_alg(&cfg).ok(),
        rows: summarize(&records, &cfg.delta_grid()),
    };
    Ok((table, records))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Boundaries {
    pub delta_alg: f64,
    pub delta_dyn: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PhaseOutput {
    /// Boundaries for the configured priors and shape.
    pub boundaries: Option<Boundaries>,
    pub shape: Vec<ShapeRow>,
    pub means: Vec<MeansRow>,
}

/// Boundaries at the configured point plus the optional sweeps.
pub fn run_phase(cfg: &ExperimentConfig) -> Result<PhaseOutput> {
    let q = cfg.phase_query()?;
    in_pool(cfg.threads, || {
        let boundaries = Boundaries {
            delta_alg: find_delta_alg(&q)?,
            delta_dyn: find_delta_dyn(&q)?,
        };
        let shape = if cfg.phase.nx_grid.is_empty() {
            Vec::new()
        } else {
            sweep_shape(&q, &cfg.phase.nx_grid)?
        };
        let means = if cfg.phase.mu1_grid.is_empty() || cfg.phase.mu2_grid.is_empty() {
            Vec::new()
        } else {
            sweep_means(&q, &cfg.phase.mu1_grid, &cfg.phase.mu2_grid)?
        };
        Ok(PhaseOutput {
            boundaries: Some(boundaries),
            shape,
            means,
        })
    })?
}

/// Writes everything an experiment produces under `dir`: the effective
/// configuration, `runs.jsonl`, `runs.csv` and the algorithm's summary.
pub fn write_outputs(
    dir: &Path,
    cfg: &ExperimentConfig,
    records: &[RunRecord],
    compare: Option<&CompareTable>,
    phase: Option<&PhaseOutput>,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("config.toml"), cfg.to_toml()?)?;
    if cfg.algorithm != Algorithm::Phase {
        write_jsonl(&dir.join("runs.jsonl"), records)?;
        write_records_csv(&dir.join("runs.csv"), records)?;
    }
    if let Some(t) = compare {
        write_compare_csv(&dir.join("compare.csv"), t)?;
        let meta = serde_json::to_string_pretty(&serde_json::json!({ "delta_alg": t.delta_alg }))
            .map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(dir.join("compare_meta.json"), meta)?;
    }
    if let Some(p) = phase {
        if let Some(b) = &p.boundaries {
            write_serialized_csv(&dir.join("boundaries.csv"), std::slice::from_ref(b))?;
        }
        if !p.shape.is_empty() {
            write_shape_csv(&dir.join("phase_shape.csv"), &p.shape)?;
        }
        if !p.means.is_empty() {
            write_means_csv(&dir.join("phase_means.csv"), &p.means)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(algorithm: Algorithm) -> ExperimentConfig {
        ExperimentConfig {
            algorithm,
            dims: vec![12, 10, 14],
            deltas: vec![0.05, 2.0],
            seeds: vec![1, 2],
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn empty_seed_list() {
        let cfg = ExperimentConfig {
            seeds: Vec::new(),
            ..small(Algorithm::Amp)
        };
        assert!(run_experiment(&cfg).unwrap().is_empty());
    }

    #[test]
    fn record_order_and_count() {
        let recs = run_experiment(&small(Algorithm::Compare)).unwrap();
        assert_eq!(recs.len(), 8);
        let key: Vec<_> = recs.iter().map(|r| (r.delta, r.seed, r.method)).collect();
        assert_eq!(key[0], (0.05, Some(1), Method::Amp));
        assert_eq!(key[1], (0.05, Some(1), Method::Als));
        assert_eq!(key[7], (2.0, Some(2), Method::Als));
        for r in &recs {
            assert!(r.error.is_none(), "{:?}", r.error);
            assert!(r.direct_mse.unwrap() >= 0.0 && r.tensor_mse.unwrap() >= 0.0);
        }
    }

    #[test]
    fn same_problem_for_same_seed() {
        let shape = TensorShape::new(&[5, 6, 7]).unwrap();
        let priors = vec![PriorSpec::gaussian(0.1, 1.0).unwrap(); 3];
        let a = generate_problem(&shape, &priors, 1, 0.3, 4).unwrap();
        let b = generate_problem(&shape, &priors, 1, 0.3, 4).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1.tensor(), b.1.tensor());
    }

    #[test]
    fn se_records_have_both_branches() {
        let cfg = ExperimentConfig {
            priors: vec![
                PriorSpec::gaussian(0.1, 1.0).unwrap(),
                PriorSpec::gaussian(0.1, 1.0).unwrap(),
                PriorSpec::gaussian(0.3, 1.0).unwrap(),
            ],
            deltas: vec![0.2],
            ..small(Algorithm::Se)
        };
        let recs = run_experiment(&cfg).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].init, InitRegime::Informed);
        assert!(recs[1].factor_mse.unwrap() - recs[0].factor_mse.unwrap() > 0.3);
    }

    #[test]
    fn summary_counts_failures() {
        let recs = run_experiment(&small(Algorithm::Compare)).unwrap();
        let rows = summarize(&recs, &[0.05, 2.0]);
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].amp_success_rate, 1.0);
        assert!(rows[1].amp_success_rate <= 0.5);
    }
}
