use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use mats::experiments::{self, Case, ExperimentConfig};
use mats::io::read_trajectory;
use mats::offline::OfflineBundle;

#[derive(Parser)]
#[command(name = "mats", version, about = "Transported-subspace reduced models for 1D conservation laws")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Collect snapshots and build the offline bundle.
    Offline {
        #[arg(long)]
        config: PathBuf,
        /// Bundle path; defaults to `<output_dir>/bundle.mats`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the reduced model for the test parameters and compare with the full model.
    Online {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        bundle: PathBuf,
    },
    /// Offline and online runs over the configured (N, M) grid.
    Sweep {
        #[arg(long)]
        config: PathBuf,
    },
    /// Per-step runtime of the full and reduced models across grid sizes.
    Timing {
        #[arg(long)]
        config: PathBuf,
    },
    /// Reconstruct every step of a trajectory dump on the full grid.
    Reconstruct {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        trajectory: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print configuration.
    Config {
        /// Print the default config for `--case`.
        #[arg(long)]
        defaults: bool,
        #[arg(long, default_value = "color")]
        case: String,
    },
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::load(path).with_context(|| format!("reading config {}", path.display()))
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Offline { config, out } => {
            let cfg = load_config(&config)?;
            let outcome = experiments::run_offline(&cfg)?;
            experiments::write_offline_artifacts(&cfg, &outcome)?;
            if let Some(p) = out {
                outcome.bundle.save(&p)?;
            }
            let r = &outcome.report;
            println!(
                "signature {}  |S_l| = {}  |S_g| = {}  cond(Z) = {:.3e}  cond(Vq) = {:.3e}",
                r.signature, r.n_local_snapshots, r.n_global_snapshots, r.z_condition, r.vq_condition
            );
            println!("bundle written to {}", cfg.bundle_path().display());
        }
        Command::Online { config, bundle } => {
            let cfg = load_config(&config)?;
            let bundle = OfflineBundle::load(&bundle).with_context(|| format!("reading bundle {}", bundle.display()))?;
            let report = experiments::run_online(&cfg, &bundle)?;
            experiments::write_online_artifacts(&cfg, &report)?;
            for r in &report.runs {
                println!(
                    "test {:2}  steps {:5}/{:5}  stop {:18}  mean rel L1 {:.3e}{}",
                    r.test_index,
                    r.k_done,
                    r.k_target,
                    r.stop.map(|s| s.as_str()).unwrap_or("none"),
                    r.mean_error(),
                    if r.discarded { "  (discarded)" } else { "" }
                );
            }
            match report.mean_over_completed() {
                Some(m) => println!("mean over {} completed runs: {m:.3e}", report.n_completed()),
                None => println!("no run completed"),
            }
        }
        Command::Sweep { config } => {
            let cfg = load_config(&config)?;
            let cells = experiments::sweep_nm(&cfg, &cfg.sweep_n, &cfg.sweep_m)?;
            experiments::write_sweep_artifacts(&cfg, &cells)?;
            for c in &cells {
                match &c.outcome {
                    Ok(r) => println!(
                        "N {:2} M {:2}  completed {:2}  discarded {:2}  mean {}",
                        c.n_local,
                        c.n_modes,
                        r.n_completed(),
                        r.n_discarded(),
                        r.mean_over_completed().map(|m| format!("{m:.3e}")).unwrap_or_else(|| "-".into())
                    ),
                    Err(e) => println!("N {:2} M {:2}  failed: {e}", c.n_local, c.n_modes),
                }
            }
        }
        Command::Timing { config } => {
            let cfg = load_config(&config)?;
            let rows = experiments::runtime_scaling(&cfg, &cfg.timing_n_delta)?;
            experiments::write_timing_artifacts(&cfg, &rows)?;
            for r in &rows {
                println!("n_delta {:6}  full {:.3e} s  reduced {:.3e} s", r.n_delta, r.full_step_s, r.reduced_step_s);
            }
        }
        Command::Reconstruct { bundle, trajectory, out } => {
            let bundle = OfflineBundle::load(&bundle).with_context(|| format!("reading bundle {}", bundle.display()))?;
            let traj = read_trajectory(&trajectory)?;
            let n = experiments::reconstruct_trajectory(&bundle, &traj, &out)?;
            println!("{n} snapshots written to {}", out.display());
        }
        Command::Config { defaults, case } => {
            if !defaults {
                bail!("only `mats config --defaults [--case <case>]` is supported");
            }
            let case = Case::parse(&case).with_context(|| {
                let names: Vec<&str> = Case::ALL.iter().map(|c| c.name()).collect();
                format!("unknown case {case:?}; expected one of {}", names.join(", "))
            })?;
            print!("{}", ExperimentConfig::defaults(case).to_toml());
        }
    }
    Ok(())
}
