//! `enduro` — battery-electric endurance-race strategy toolchain.
//!
//! Pipeline: `synth-track` (or your own measured inputs) → `fit` →
//! `surface` → `race` → `validate`, with `stint` available for solving a
//! single charge/lap combination. All artifacts land in the configured
//! output directory and reruns are byte-identical.

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

use enduro::cli;
use enduro::config::{parse_duration, RunConfig};
use enduro::error::Error;

#[derive(Parser)]
#[command(
    name = "enduro",
    version,
    about = "Maximum-distance strategies for battery-electric endurance racing",
    long_about = "Computes how far a battery-electric race car can travel in a fixed race \
                  duration by choosing when to pit, how long to charge, and how fast to \
                  drive each stint. Minimum-time stints are solved as convex programs, a \
                  stint-time surface is fitted over (laps, charge time), and the race plan \
                  is found by exact branch-and-bound on that surface."
)]
struct CliArgs {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Path to the run configuration (JSON).
    #[arg(short, long, value_name = "FILE")]
    config: PathBuf,
    /// Override the configured output directory.
    #[arg(short, long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Override the worker-thread count (0 = all logical cores).
    #[arg(short, long, value_name = "N")]
    jobs: Option<usize>,
    /// Override the track discretization step in meters.
    #[arg(long, value_name = "METERS")]
    delta_s: Option<f64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig, Error> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        if let Some(jobs) = self.jobs {
            cfg.jobs = jobs;
        }
        if let Some(delta) = self.delta_s {
            if !(delta > 0.0) {
                return Err(Error::Config(format!(
                    "--delta-s must be positive, got {delta}"
                )));
            }
            cfg.delta_s_m = delta;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic track, vehicle, charge model, EM loss samples,
    /// and a ready-to-run config.
    SynthTrack {
        /// Fixture preset: "desk" (full-size circuit) or "toy" (small, fast).
        #[arg(long, default_value = "desk")]
        preset: String,
        /// Track discretization step in meters (defaults to the preset's).
        #[arg(long, value_name = "METERS")]
        delta_s: Option<f64>,
        /// Directory to write the fixture into.
        #[arg(short, long, value_name = "DIR")]
        out: PathBuf,
        /// Seed for the synthetic EM loss samples.
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Fit powertrain models from measurement CSVs.
    Fit {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// EM loss samples CSV (v_mps,F_m_N,F_ac_N).
        #[arg(long, value_name = "FILE")]
        em: Option<PathBuf>,
        /// Inverter power samples CSV (p_ac_w,p_dc_w).
        #[arg(long, value_name = "FILE")]
        inverter: Option<PathBuf>,
        /// Charge curve samples CSV (t_s,e_b_j).
        #[arg(long, value_name = "FILE")]
        charge_samples: Option<PathBuf>,
    },
    /// Solve one minimum-time stint for a given lap count and charge time.
    Stint {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Number of laps in the stint.
        #[arg(short, long, value_name = "LAPS")]
        n_laps: usize,
        /// Charge time before the stint; bare seconds or "450s"/"7.5min"/"1h".
        #[arg(short, long, value_name = "DURATION")]
        t_charge: String,
    },
    /// Sweep the stint solver over the configured grid and fit the
    /// stint-time surface.
    Surface {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Solve the race strategy on the fitted surface and compare it against
    /// the flat-out baseline.
    Race {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Audit the computed strategy against the average-velocity surface.
    Validate {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::SynthTrack {
            preset,
            delta_s,
            out,
            seed,
        } => cli::cmd_synth_track(&preset, delta_s, &out, seed),
        Command::Fit {
            cfg,
            em,
            inverter,
            charge_samples,
        } => cli::cmd_fit(
            &cfg.load()?,
            em.as_deref(),
            inverter.as_deref(),
            charge_samples.as_deref(),
        ),
        Command::Stint {
            cfg,
            n_laps,
            t_charge,
        } => {
            let t_charge_s = t_charge
                .trim()
                .parse::<f64>()
                .ok()
                .map(Ok)
                .unwrap_or_else(|| parse_duration(&t_charge))
                .map_err(Error::Config)?;
            cli::cmd_stint(&cfg.load()?, n_laps, t_charge_s)
        }
        Command::Surface { cfg } => cli::cmd_surface(&cfg.load()?),
        Command::Race { cfg } => cli::cmd_race(&cfg.load()?),
        Command::Validate { cfg } => cli::cmd_validate(&cfg.load()?),
    }
}

fn main() {
    let args = CliArgs::parse();
    if let Err(e) = run(args.command) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
