//! `sdlab` — score-distillation experiments on analytic mixture worlds.

mod config;
mod presets;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use sdlab_core::artifacts::{coefficient_rows, write_coefficients_csv};
use sdlab_core::distill::WeightingSchedule;
use sdlab_core::schedule::{NoiseSchedule, ScheduleKind};
use sdlab_core::verify;

use config::RunConfig;

#[derive(Parser)]
#[command(name = "sdlab", about = "Score-distillation editing on analytic mixture worlds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the (t, phi, psi) coefficient tables as CSV.
    Coeffs {
        /// Noise schedule kind: linear, scaled-linear or cosine.
        #[arg(long, default_value = "linear")]
        schedule: String,
        /// Number of training timesteps.
        #[arg(long, default_value_t = 1000)]
        t_max: usize,
        #[arg(long, default_value_t = 1e-4)]
        beta_start: f64,
        #[arg(long, default_value_t = 0.02)]
        beta_end: f64,
        /// DDIM inference-grid size for the stochastic-latent curve.
        #[arg(long, default_value_t = 500)]
        inference_steps: usize,
        /// Output directory.
        #[arg(long, default_value = "out/coeffs")]
        out: PathBuf,
    },
    /// Run the self-check suite and report each check's measured error.
    Verify,
    /// Run a distillation edit from a config file or a named preset.
    Edit {
        /// Config file path (omit when using --preset).
        config: Option<PathBuf>,
        /// Named preset: fast, hq, ablation-sampling, ablation-freeu.
        #[arg(long, conflicts_with = "config")]
        preset: Option<String>,
        /// Override the seed from the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run DDIM-based SDEdit on a scene from a config file.
    Sdedit {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Coeffs { schedule, t_max, beta_start, beta_end, inference_steps, out } => {
            let kind = parse_schedule_kind(&schedule)?;
            let sched = NoiseSchedule::build(kind, t_max, beta_start, beta_end)?;
            let dc = coefficient_rows(&WeightingSchedule::dreamcatalyst(), &sched)?;
            write_coefficients_csv(&out.join("dreamcatalyst_coefficients.csv"), &dc)?;
            let pds = coefficient_rows(&WeightingSchedule::pds_derived(inference_steps), &sched)?;
            write_coefficients_csv(&out.join("pds_coefficients.csv"), &pds)?;
            println!(
                "wrote {} and {} ({} rows each)",
                out.join("dreamcatalyst_coefficients.csv").display(),
                out.join("pds_coefficients.csv").display(),
                dc.len()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify => {
            let results = verify::run_all();
            let mut all_ok = true;
            for r in &results {
                println!(
                    "[{}] {:<37} tolerance {:>8.1e}  measured {:>10.3e}  ({})",
                    if r.passed { "PASS" } else { "FAIL" },
                    r.name,
                    r.tolerance,
                    r.max_error,
                    r.detail
                );
                all_ok &= r.passed;
            }
            println!(
                "{}/{} checks passed",
                results.iter().filter(|r| r.passed).count(),
                results.len()
            );
            Ok(if all_ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Edit { config, preset, seed, out } => {
            match (config, preset) {
                (Some(path), None) => {
                    let mut cfg = load_config(&path)?;
                    if let Some(seed) = seed {
                        cfg.seed = seed;
                    }
                    if let Some(out) = &out {
                        cfg.out = out.display().to_string();
                    }
                    let out_dir = PathBuf::from(&cfg.out);
                    let outcome = run::run_edit(&cfg, &out_dir)?;
                    println!(
                        "edit finished: {} iterations, final d_id {:.4}, final d_edit {:.4} -> {}",
                        outcome.records.len(),
                        outcome.final_d_id(),
                        outcome.final_d_edit(),
                        out_dir.display()
                    );
                }
                (None, Some(name)) => {
                    let out_dir = out.unwrap_or_else(|| PathBuf::from(format!("out/{name}")));
                    presets::run_preset(&name, &out_dir, seed)?;
                    println!("preset `{name}` finished -> {}", out_dir.display());
                }
                (None, None) => bail!("pass a config file or --preset NAME"),
                (Some(_), Some(_)) => unreachable!("clap conflicts_with"),
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Sdedit { config, seed, out } => {
            let mut cfg = load_config(&config)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if let Some(out) = &out {
                cfg.out = out.display().to_string();
            }
            let out_dir = PathBuf::from(&cfg.out);
            run::run_sdedit_cmd(&cfg, &out_dir)?;
            println!("sdedit finished -> {}", out_dir.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn parse_schedule_kind(name: &str) -> Result<ScheduleKind> {
    Ok(match name {
        "linear" => ScheduleKind::Linear,
        "scaled-linear" => ScheduleKind::ScaledLinear,
        "cosine" => ScheduleKind::Cosine,
        other => bail!("unknown schedule kind `{other}`"),
    })
}

fn load_config(path: &PathBuf) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    RunConfig::parse(&text).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
}
