//! `gridflex` command-line entry point.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gridflex::commands::{self, CommandError};
use gridflex::config::{ScenarioConfig, SweepAxis};
use gridflex::simulation::ModeVariant;

#[derive(Parser)]
#[command(name = "gridflex", version, about = "Demand-response pricing simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the population and weather series.
    Generate(Common),
    /// Fit the context classifier and write a checkpoint.
    Train(Common),
    /// Run the scenario and its benchmark; write traces, metrics and plot data.
    Simulate(Common),
    /// Re-run the scenario along one axis and write a comparison table.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Axis to vary; defaults to `sweep.axis` from the config.
        #[arg(long)]
        axis: Option<SweepAxis>,
    },
    /// Recompute every metric of a `simulate` output directory from its traces.
    Verify {
        /// Directory written by `simulate`.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    /// Scenario TOML; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replace a named seed, e.g. `weather=4`. Repeatable.
    #[arg(long = "seed-override", value_name = "NAME=INT")]
    seed_override: Vec<String>,
    /// Pricing mode variant.
    #[arg(long)]
    mode: Option<ModeVariant>,
}

impl Common {
    fn load(&self) -> Result<ScenarioConfig, CommandError> {
        let mut cfg = match &self.config {
            Some(p) => ScenarioConfig::load(p)?,
            None => ScenarioConfig::default(),
        };
        for s in &self.seed_override {
            cfg.apply_seed_override(s)?;
        }
        if let Some(m) = self.mode {
            cfg.set_mode(m);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<(), CommandError> {
    match cli.command {
        Command::Generate(c) => {
            let r = commands::cmd_generate(&c.load()?, c.out.as_deref())?;
            println!(
                "generated {} households ({} with PV and battery, {} participating) and {} weather days in {}",
                r.n_households,
                r.n_pv_battery,
                r.n_participating,
                r.days,
                r.dir.display()
            );
        }
        Command::Train(c) => {
            let r = commands::cmd_train(&c.load()?, c.out.as_deref())?;
            println!("loss {:.6} -> {:.6}; checkpoint {}", r.initial_loss, r.final_loss, r.checkpoint.display());
        }
        Command::Simulate(c) => {
            let r = commands::cmd_simulate(&c.load()?, c.out.as_deref())?;
            let s = r.summary;
            println!(
                "{} evaluation days: mean PDS {:.2}%, AMPS {:.2}%, variation reduction {:.2}%, energy reduction {:.2}%",
                s.days, s.mean_pds_pct, s.amps_pct, s.variation_reduction_pct, s.energy_reduction_pct
            );
            println!("wrote {} files to {}", r.files.len() + 1, r.dir.display());
        }
        Command::Sweep { common, axis } => {
            let rows = commands::cmd_sweep(&common.load()?, axis, common.out.as_deref())?;
            for r in rows {
                println!(
                    "{} = {:>8}: PDS {:6.2}%  variation {:6.2}%  energy {:6.2}%",
                    r.axis, r.value, r.mean_pds_pct, r.variation_reduction_pct, r.energy_reduction_pct
                );
            }
        }
        Command::Verify { out } => {
            let r = commands::cmd_verify(&out)?;
            println!("verified {} values, max discrepancy {:e}", r.values_checked, r.max_discrepancy);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("gridflex: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
