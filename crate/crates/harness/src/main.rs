use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use scorekit_harness::config::{parse_config, parse_grid, RunConfig};
use scorekit_harness::error::{HarnessError, Result};
use scorekit_harness::grid::grid_search;
use scorekit_harness::metrics::{moments, sliced_w2, w2_1d};
use scorekit_harness::order::measure_order;
use scorekit_harness::report::emit_report;
use scorekit_harness::run::{
    build_model, draw_samples, read_points, run_id, run_sample, train_from_config, write_points,
};

#[derive(Parser)]
#[command(
    name = "scorekit",
    version,
    about = "Score-based sampler experiments on toy distributions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw samples for one config and write samples plus metrics.
    Sample {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a network and save it as JSON.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every cell of a grid file.
    Grid {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Cells run at once; overrides SCOREKIT_MAX_PARALLEL.
        #[arg(long)]
        max_parallel: Option<usize>,
    },
    /// Compare two sample CSV files.
    Eval {
        #[arg(long)]
        samples: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long, default_value_t = 64)]
        projections: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Measure the empirical convergence order of the configured sampler.
    Order {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "8,16,32,64,128,256")]
        steps: Vec<usize>,
    },
    /// Record solver trajectories as JSON.
    Trajectory {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load(path: &Path) -> Result<RunConfig> {
    let cfg = parse_config(&std::fs::read_to_string(path)?)?;
    cfg.validate()?;
    Ok(cfg)
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let text =
        serde_json::to_string_pretty(value).map_err(|e| HarnessError::Format(e.to_string()))?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Sample { config, out } => {
            let cfg = load(&config)?;
            let (points, row) = run_sample(&cfg)?;
            std::fs::create_dir_all(&out)?;
            write_points(&out.join("samples.csv"), &points)?;
            emit_report(std::slice::from_ref(&row), &[], &cfg.output.formats, &out)?;
            println!("{} sw2={:.6} nfe={}", row.run_id, row.sw2, row.nfe);
        }
        Command::Train { config, out } => {
            let cfg = load(&config)?;
            let trained = train_from_config(&cfg)?;
            let model = if cfg.train.use_ema {
                &trained.ema
            } else {
                &trained.model
            };
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            std::fs::write(&out, model.to_json()?)?;
            let last = trained.losses.last().copied().unwrap_or(f64::NAN);
            println!("saved {} (final loss {last:.6})", out.display());
        }
        Command::Grid {
            config,
            out,
            max_parallel,
        } => {
            let spec = parse_grid(&std::fs::read_to_string(&config)?)?;
            let report = grid_search(&spec, max_parallel)?;
            emit_report(
                &report.rows,
                &report.failures,
                &spec.base.output.formats,
                &out,
            )?;
            for (metric, id) in &report.best {
                println!("best {metric}: {id}");
            }
            if !report.failures.is_empty() {
                for f in &report.failures {
                    eprintln!("cell {} failed: {}", f.run_id, f.error);
                }
                return Err(HarnessError::Grid(format!(
                    "{} of {} cells failed",
                    report.failures.len(),
                    report.failures.len() + report.rows.len()
                )));
            }
        }
        Command::Eval {
            samples,
            reference,
            projections,
            seed,
        } => {
            let a = read_points(&samples)?;
            let b = read_points(&reference)?;
            let mut rng = scorekit::substream(seed, 0);
            let sw2 = sliced_w2(&a, &b, projections, &mut rng)?;
            let (mean_err, cov_err) = moments(&a, &b)?;
            let dim = a.first().map_or(0, Vec::len);
            let mut marginals = Vec::with_capacity(dim);
            for j in 0..dim {
                let pa: Vec<f64> = a.iter().map(|p| p[j]).collect();
                let pb: Vec<f64> = b.iter().map(|p| p[j]).collect();
                marginals.push(w2_1d(&pa, &pb)?);
            }
            let v = json!({ "sw2": sw2, "mean_err": mean_err, "cov_err": cov_err, "marginal_w2": marginals });
            println!(
                "{}",
                serde_json::to_string_pretty(&v)
                    .map_err(|e| HarnessError::Format(e.to_string()))?
            );
        }
        Command::Order { config, steps } => {
            let cfg = load(&config)?;
            let sampler = cfg.sampler_choice()?.ok_or_else(|| {
                HarnessError::validation(
                    "sampler.kind",
                    "order measurement needs a deterministic sampler",
                )
            })?;
            let gmm = cfg.gmm()?;
            let x_t = vec![cfg.sampler.sigma_max * 0.5; gmm.dim()];
            let s = &cfg.sampler;
            let report = measure_order(
                sampler,
                &gmm,
                &steps,
                s.grid,
                s.sigma_min,
                s.sigma_max,
                s.rho,
                &x_t,
            )?;
            println!(
                "{}",
                serde_json::to_string_pretty(&report)
                    .map_err(|e| HarnessError::Format(e.to_string()))?
            );
        }
        Command::Trajectory { config, out } => {
            let cfg = load(&config)?;
            let model = build_model(&cfg)?;
            let set = draw_samples(&cfg, &model, true)?;
            let paths: Vec<_> = set
                .trajectories
                .iter()
                .map(|t| {
                    t.records
                        .iter()
                        .map(|r| json!({ "sigma": r.sigma, "x": r.x, "denoised": r.denoised }))
                        .collect::<Vec<_>>()
                })
                .collect();
            let doc = json!({ "run_id": run_id(&cfg), "nfe": set.nfe, "trajectories": paths });
            write_json(&out, &doc)?;
            println!("wrote {} trajectories to {}", paths.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
