use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use streamgp::harness::{emit_results, run_experiment, run_scaling_study, ExperimentConfig, ResultTable};

/// Streaming sparse GP benchmark on lawnmower sampling streams.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Replay the batch stream through every configured model.
    Run(Common),
    /// Run the streaming model with M = ceil(alpha * log(N)^2 + 1) for each alpha, plus a full GPR reference.
    ScalingStudy {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "0.5,1,2,4")]
        alphas: Vec<f64>,
    },
}

#[derive(Args)]
struct Common {
    /// Experiment config file (`key = value` lines).
    #[arg(long)]
    config: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    output: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::from_file(&self.config)
            .with_context(|| format!("loading {}", self.config.display()))?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.output {
            cfg.output = o.clone();
        }
        Ok(cfg)
    }
}

fn write(table: &ResultTable, path: &Path) -> Result<()> {
    emit_results(table, path)?;
    let failed = table.rows.iter().filter(|r| r.failed).count();
    println!("wrote {} rows to {}{}", table.rows.len(), path.display(), if failed > 0 { format!(" ({failed} failed)") } else { String::new() });
    Ok(())
}

fn summarize(table: &ResultTable) {
    let mut seen = Vec::new();
    for r in &table.rows {
        if !seen.contains(&r.model) {
            seen.push(r.model.clone());
        }
    }
    for m in seen {
        if let Some(r) = table.last_for(&m) {
            println!(
                "{:>8}  n={:<5} m={:<4} rmse={:.4} nlpd={:.4} onboard={}",
                r.model, r.cumulative_n, r.m_pseudo, r.rmse, r.nlpd, r.onboard_points
            );
        }
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run(common) => {
            let cfg = common.load()?;
            let table = run_experiment(&cfg)?;
            summarize(&table);
            write(&table, &cfg.output.join("results.csv"))?;
        }
        Command::ScalingStudy { common, alphas } => {
            if alphas.iter().any(|a| !(*a > 0.0)) {
                bail!("alphas must be positive");
            }
            let cfg = common.load()?;
            let study = run_scaling_study(&cfg, &alphas)?;
            summarize(&study.reference);
            write(&study.reference, &cfg.output.join("gpr_reference.csv"))?;
            for (alpha, table) in &study.runs {
                print!("alpha={alpha}: ");
                summarize(table);
                write(table, &cfg.output.join(format!("ssgp_alpha_{alpha}.csv")))?;
            }
        }
    }
    Ok(())
}
