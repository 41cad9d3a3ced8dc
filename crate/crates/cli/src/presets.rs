//! Registered experiment presets: named configurations and paired ablations.

use std::path::Path;

use anyhow::{bail, Result};
use sdlab_core::schedule::TimestepKind;

use crate::config::RunConfig;
use crate::run::{run_edit, EditOutcome};

pub const PRESET_NAMES: [&str; 4] = ["fast", "hq", "ablation-sampling", "ablation-freeu"];

fn base_config(seed_override: Option<u64>) -> RunConfig {
    let mut cfg = RunConfig::default();
    if let Some(seed) = seed_override {
        cfg.seed = seed;
    }
    cfg
}

/// Execute a named preset under `out_dir`, writing a `summary.txt` at the
/// top level for multi-run presets.
pub fn run_preset(name: &str, out_dir: &Path, seed_override: Option<u64>) -> Result<()> {
    match name {
        "fast" => {
            let mut cfg = base_config(seed_override);
            cfg.n_iters = 1000;
            cfg.out = out_dir.display().to_string();
            run_edit(&cfg, out_dir)?;
            Ok(())
        }
        "hq" => {
            let mut cfg = base_config(seed_override);
            cfg.n_iters = 3000;
            cfg.out = out_dir.display().to_string();
            run_edit(&cfg, out_dir)?;
            Ok(())
        }
        "ablation-sampling" => {
            let mut random = base_config(seed_override);
            random.plan_kind = TimestepKind::Random;
            random.n_iters = 500;
            let mut decreasing = random.clone();
            decreasing.plan_kind = TimestepKind::Decreasing;

            let random_out = run_edit(&random, &out_dir.join("random"))?;
            let decreasing_out = run_edit(&decreasing, &out_dir.join("decreasing"))?;
            let summary = sampling_summary(&random_out, &decreasing_out);
            std::fs::write(out_dir.join("summary.txt"), &summary)?;
            print!("{summary}");
            Ok(())
        }
        "ablation-freeu" => {
            let mut lines = vec![
                "# FreeU ablation: backbone gain b vs edit/identity metrics".to_string(),
                "# metrics are means over the final 50 iterations".to_string(),
            ];
            for (label, b) in [("1.0", None), ("1.1", Some(1.1)), ("1.3", Some(1.3))] {
                let mut cfg = base_config(seed_override);
                cfg.n_iters = 500;
                if let Some(b) = b {
                    cfg.freeu_enabled = true;
                    cfg.freeu_b = b;
                }
                let outcome = run_edit(&cfg, &out_dir.join(format!("b-{label}")))?;
                lines.push(format!(
                    "b = {label}: d_edit = {:.4}, d_id = {:.6}",
                    outcome.tail_mean(50, |r| r.d_edit),
                    outcome.tail_mean(50, |r| r.d_id),
                ));
            }
            let summary = lines.join("\n") + "\n";
            std::fs::write(out_dir.join("summary.txt"), &summary)?;
            print!("{summary}");
            Ok(())
        }
        other => bail!("unknown preset `{other}` (expected one of {PRESET_NAMES:?})"),
    }
}

fn sampling_summary(random: &EditOutcome, decreasing: &EditOutcome) -> String {
    let tau = random.final_d_edit();
    let hit = decreasing.iterations_to(tau);
    let n = random.records.len();
    let ratio = hit.map(|h| h as f64 / n as f64);
    format!(
        "# Sampling ablation: random vs decreasing timesteps, {n} iterations each\n\
         random_final_d_edit = {tau}\n\
         random_final_d_id = {}\n\
         decreasing_final_d_edit = {}\n\
         decreasing_final_d_id = {}\n\
         decreasing_iterations_to_random_final = {}\n\
         fraction_of_budget = {}\n",
        random.final_d_id(),
        decreasing.final_d_edit(),
        decreasing.final_d_id(),
        hit.map(|h| h.to_string()).unwrap_or_else(|| "none".into()),
        ratio.map(|r| format!("{r:.3}")).unwrap_or_else(|| "none".into()),
    )
}
