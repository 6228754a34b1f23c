use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use repsample::harness::{
    complexity_sweep, fairness_sweep, simulate, theory_table, write_json, ComplexitySweepConfig, FairnessSweepConfig,
    SimulateConfig, TheoryConfig,
};
use repsample::ingest::{partition_sites, preprocess, DatasetSchema, IngestSummary, RawTable};

#[derive(Parser)]
#[command(name = "repsample", version, about = "Representative and fair multi-site data collection experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Site-sampling runs; writes trajectory.csv, final.csv, summary.json.
    Simulate(Common),
    /// Closed-form vs simulated unfairness; writes theory.csv, summary.json.
    Theory(Common),
    /// Group-proportion sweep; writes fairness.csv, summary.json.
    FairnessSweep(Common),
    /// GBDT depth/size grid; writes complexity.csv, summary.json.
    ComplexitySweep(Common),
    /// Preprocess a CSV and partition it into sites; writes summary.json.
    Ingest(IngestArgs),
}

#[derive(Args)]
struct Common {
    /// JSON config; missing fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Replicates (simulate), trials (theory) or folds (sweeps).
    #[arg(long)]
    replicates: Option<usize>,
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    csv: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
    }
}

fn out_dir(p: &Path) -> Result<&Path> {
    fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))?;
    Ok(p)
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Simulate(c) => {
            let mut cfg: SimulateConfig = load_config(c.config.as_deref())?;
            cfg.seed = c.seed.unwrap_or(cfg.seed);
            cfg.replicates = c.replicates.unwrap_or(cfg.replicates);
            let out = simulate(&cfg)?;
            let dir = out_dir(&c.out)?;
            out.trajectory_table().write(dir.join("trajectory.csv"))?;
            out.final_table().write(dir.join("final.csv"))?;
            write_json(dir.join("summary.json"), &out.summary)?;
            for p in &out.summary.policies {
                println!("{:<16} final distance {:.6} (se {:.6})", p.policy, p.mean_final_distance, p.std_error);
            }
        }
        Command::Theory(c) => {
            let mut cfg: TheoryConfig = load_config(c.config.as_deref())?;
            cfg.seed = c.seed.unwrap_or(cfg.seed);
            cfg.trials = c.replicates.unwrap_or(cfg.trials);
            let out = theory_table(&cfg)?;
            let dir = out_dir(&c.out)?;
            out.table().write(dir.join("theory.csv"))?;
            write_json(dir.join("summary.json"), &out)?;
            for r in &out.rows {
                println!(
                    "n0={:<5} n1={:<5} expected {:+.6}  simulated {:+.6} (se {:.6})",
                    r.n0, r.n1, r.expected, r.mc_mean, r.mc_se
                );
            }
        }
        Command::FairnessSweep(c) => {
            let mut cfg: FairnessSweepConfig = load_config(c.config.as_deref())?;
            cfg.seed = c.seed.unwrap_or(cfg.seed);
            cfg.folds = c.replicates.unwrap_or(cfg.folds);
            let out = fairness_sweep(&cfg)?;
            let dir = out_dir(&c.out)?;
            out.table().write(dir.join("fairness.csv"))?;
            write_json(dir.join("summary.json"), &out.summary)?;
            for cell in &out.summary.cells {
                let p = cell.proportion.map(|p| format!("{p:.3}")).unwrap_or_else(|| "-".into());
                println!("{:<12} p={p:<6} |dAUC| {:.4} (se {:.4})", cell.sampler, cell.mean_abs_delta_auc, cell.se_abs_delta_auc);
            }
            for w in &out.summary.warnings {
                eprintln!("warning: {w}");
            }
        }
        Command::ComplexitySweep(c) => {
            let mut cfg: ComplexitySweepConfig = load_config(c.config.as_deref())?;
            cfg.seed = c.seed.unwrap_or(cfg.seed);
            cfg.folds = c.replicates.unwrap_or(cfg.folds);
            let out = complexity_sweep(&cfg)?;
            let dir = out_dir(&c.out)?;
            out.table().write(dir.join("complexity.csv"))?;
            write_json(dir.join("summary.json"), &out.summary)?;
            println!("{} rows over {} grid cells", out.rows.len(), out.summary.cells.len());
            for w in &out.summary.warnings {
                eprintln!("warning: {w}");
            }
        }
        Command::Ingest(a) => {
            let schema = DatasetSchema::load(&a.schema)?;
            let table = RawTable::load(&a.csv)?;
            let (pre, data) = preprocess(&table, &schema)?;
            let partition = if schema.location.is_some() {
                Some(partition_sites(&data.records, &data.locations, schema.min_site_size)?)
            } else {
                None
            };
            let summary = IngestSummary::new(&pre, &data, partition.as_ref());
            write_json(out_dir(&a.out)?.join("summary.json"), &summary)?;
            println!(
                "{} of {} rows kept, {} sites, {} records in excluded locations",
                summary.kept_rows,
                summary.input_rows,
                summary.sites.len(),
                summary.excluded_records
            );
        }
    }
    Ok(())
}
