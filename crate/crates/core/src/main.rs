use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tensor_amp::amp::{run_amp, Init};
use tensor_amp::als::run_als;
use tensor_amp::harness::experiment::{compare_amp_als, generate_problem, run_experiment, run_phase, write_outputs};
use tensor_amp::harness::{Algorithm, ExperimentConfig};
use tensor_amp::io::{read_tensor, write_factors, write_tensor};
use tensor_amp::{Error, Observation, Result};

#[derive(Parser)]
#[command(name = "tensor-amp", version, about = "Low-rank tensor decomposition by approximate message passing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a planted tensor and its true factors.
    Generate(Common),
    /// Run AMP on planted instances, or on a tensor file with --input.
    Amp(WithInput),
    /// Run ALS on planted instances, or on a tensor file with --input.
    Als(WithInput),
    /// State-evolution fixed points from informed and uninformed starts.
    Se(Common),
    /// Phase boundaries and the configured sweeps.
    Phase(Common),
    /// AMP and ALS success rates over a noise grid.
    Compare(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run a single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    deterministic: bool,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct WithInput {
    #[command(flatten)]
    common: Common,
    /// Tensor file to decompose; the noise level comes from its header or
    /// the configured `delta`.
    #[arg(long)]
    input: Option<PathBuf>,
}

fn load(common: &Common, algorithm: Algorithm, needs_delta: bool) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?
        }
        None => ExperimentConfig::default(),
    };
    cfg.algorithm = algorithm;
    if let Some(s) = common.seed {
        cfg.seeds = vec![s];
    }
    if let Some(out) = &common.out {
        cfg.output = out.clone();
    }
    if common.deterministic {
        cfg.deterministic = true;
    }
    if let Some(t) = common.threads {
        cfg.threads = t;
    }
    if needs_delta || cfg.algorithm != Algorithm::Amp && cfg.algorithm != Algorithm::Als {
        cfg.validate()?;
    }
    Ok(cfg)
}

fn batch_status(records: &[tensor_amp::harness::RunRecord]) -> ExitCode {
    let failed: Vec<_> = records.iter().filter_map(|r| r.error.as_ref()).collect();
    for e in &failed {
        eprintln!("run failed: {e}");
    }
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    }
}

fn generate(common: &Common) -> Result<ExitCode> {
    let cfg = load(common, Algorithm::Amp, true)?;
    let shape = cfg.shape()?;
    let priors = cfg.mode_priors()?;
    let delta = cfg.delta_grid()[0];
    let seed = cfg.seeds.first().copied().unwrap_or(0);
    let (truth, obs) = generate_problem(&shape, &priors, cfg.rank, delta, seed)?;
    std::fs::create_dir_all(&cfg.output)?;
    write_tensor(&cfg.output.join("tensor.bin"), obs.tensor(), Some(delta))?;
    write_factors(&cfg.output.join("truth"), &truth)?;
    std::fs::write(cfg.output.join("config.toml"), cfg.to_toml()?)?;
    println!("wrote {}", cfg.output.display());
    Ok(ExitCode::SUCCESS)
}

fn decompose_file(cfg: &ExperimentConfig, input: &Path) -> Result<ExitCode> {
    let (tensor, header_delta) = read_tensor(input)?;
    let delta = header_delta
        .or(cfg.delta)
        .ok_or_else(|| Error::Config("noise level missing from tensor header and config".into()))?;
    let dims = tensor.shape().dims().to_vec();
    let cfg = ExperimentConfig {
        dims,
        delta: Some(delta),
        deltas: Vec::new(),
        ..cfg.clone()
    };
    cfg.validate()?;
    let obs = Observation::new(tensor, delta)?;
    let seed = cfg.seeds.first().copied().unwrap_or(0);
    let (factors, iterations, converged) = match cfg.algorithm {
        Algorithm::Als => {
            let out = run_als(&obs, &cfg.als_config(seed), None)?;
            (out.factors, out.iterations, out.converged)
        }
        _ => {
            let out = run_amp(&obs, &cfg.mode_priors()?, cfg.rank, &Init::Uninformed, &cfg.amp_config(), seed, None)?;
            (out.factors, out.iterations, out.converged)
        }
    };
    write_factors(&cfg.output, &factors)?;
    std::fs::write(cfg.output.join("config.toml"), cfg.to_toml()?)?;
    println!("{iterations} iterations, converged: {converged}; factors in {}", cfg.output.display());
    Ok(ExitCode::SUCCESS)
}

fn decompose(args: &WithInput, algorithm: Algorithm) -> Result<ExitCode> {
    let cfg = load(&args.common, algorithm, args.input.is_none())?;
    if let Some(input) = &args.input {
        return decompose_file(&cfg, input);
    }
    let records = run_experiment(&cfg)?;
    write_outputs(&cfg.output, &cfg, &records, None, None)?;
    println!("{} runs written to {}", records.len(), cfg.output.display());
    Ok(batch_status(&records))
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Generate(c) => generate(&c),
        Command::Amp(a) => decompose(&a, Algorithm::Amp),
        Command::Als(a) => decompose(&a, Algorithm::Als),
        Command::Se(c) => {
            let cfg = load(&c, Algorithm::Se, true)?;
            let records = run_experiment(&cfg)?;
            write_outputs(&cfg.output, &cfg, &records, None, None)?;
            for r in &records {
                if let Some(mse) = r.factor_mse {
                    println!("delta {:<10} {:?}: mse {mse:.6}", r.delta, r.init);
                }
            }
            Ok(batch_status(&records))
        }
        Command::Phase(c) => {
            let cfg = load(&c, Algorithm::Phase, true)?;
            let out = run_phase(&cfg)?;
            write_outputs(&cfg.output, &cfg, &[], None, Some(&out))?;
            if let Some(b) = &out.boundaries {
                println!("delta_alg {:.6}  delta_dyn {:.6}", b.delta_alg, b.delta_dyn);
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Compare(c) => {
            let cfg = load(&c, Algorithm::Compare, true)?;
            let (table, records) = compare_amp_als(&cfg)?;
            write_outputs(&cfg.output, &cfg, &records, Some(&table), None)?;
            if let Some(d) = table.delta_alg {
                println!("predicted delta_alg {d:.6}");
            }
            for row in &table.rows {
                println!(
                    "delta {:<10} amp {:.2} (mse {:.4})  als {:.2} (mse {:.4})",
                    row.delta, row.amp_success_rate, row.amp_mean_mse, row.als_success_rate, row.als_mean_mse
                );
            }
            Ok(batch_status(&records))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
