//! Config-driven experiment runner for subject-independent activity
//! recognition: dataset preparation, training, LOSO sweeps, and reports.

mod config;
mod overrides;
mod plots;
mod runner;

use clap::Parser;
use config::ExperimentConfig;
use std::path::PathBuf;

#[derive(Parser, Debug)]
#[command(name = "tasked", version, about = "Subject-independent HAR experiment runner")]
struct Args {
    /// Experiment config (TOML).
    config: PathBuf,

    /// Dotted-key overrides applied to the config, e.g.
    /// `--override train.epochs=50` (repeatable).
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Parallel fold workers; overrides the config value.
    #[arg(long)]
    workers: Option<usize>,

    /// Output directory; overrides the config value.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load_config(args: &Args) -> anyhow::Result<ExperimentConfig> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", args.config.display()))?;
    let mut value: toml::Value = toml::from_str(&text)?;
    for spec in &args.overrides {
        overrides::apply_override(&mut value, spec)?;
    }
    let mut cfg = ExperimentConfig::from_value(value)?;
    if let Some(w) = args.workers {
        cfg.workers = w;
    }
    if let Some(out) = &args.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

fn main() {
    let args = Args::parse();
    let cfg = match load_config(&args) {
        Ok(cfg) => cfg,
        Err(e) => {
            let report = serde_json::json!({"error": "config", "detail": format!("{e:#}")});
            eprintln!("{report}");
            std::process::exit(2);
        }
    };
    if let Err(e) = runner::run(&cfg) {
        let report = serde_json::json!({"error": "run", "detail": format!("{e:#}")});
        eprintln!("{report}");
        let _ = std::fs::create_dir_all(&cfg.out_dir);
        let _ = std::fs::write(
            cfg.out_dir.join("error.json"),
            serde_json::to_string_pretty(&report).unwrap_or_default(),
        );
        std::process::exit(1);
    }
}
