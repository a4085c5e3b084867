use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mmwave_backhaul::channel::{assemble_channel, sample_paths};
use mmwave_backhaul::config::{self, ConfigError, Preset};
use mmwave_backhaul::estimation::{channel_nmse, estimate_channel, SoundingChannel};
use mmwave_backhaul::report::{self, RunManifest};
use mmwave_backhaul::rng::{stream_id, substream};
use mmwave_backhaul::sim::{self, ScenarioConfig};

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;
const CONFIG_FILE: &str = "config.toml";

#[derive(Parser)]
#[command(name = "backhaul-sim", version, about = "mmWave massive-MIMO backhaul simulator")]
struct Cli {
    /// Scenario config (TOML).
    #[arg(long, global = true, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in scenario.
    #[arg(long, global = true, value_parser = ["fig2", "fig5"])]
    preset: Option<String>,
    /// Overrides master_seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the trial count.
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Singular-value energy profile per path count (defaults to fig2).
    RankProfile,
    /// Sum-capacity sweep over the SNR grid (defaults to fig5).
    CapacitySweep,
    /// One channel estimation run with diagnostics (defaults to fig5).
    EstimateDemo {
        /// Observation SNR in dB; defaults to the configured training SNR or 20.
        #[arg(long)]
        snr: Option<f64>,
    },
    /// Factorization residuals of the configured channels (defaults to fig5).
    Factorize,
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<mmwave_backhaul::Error> for Failure {
    fn from(e: mmwave_backhaul::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<report::ReportError> for Failure {
    fn from(e: report::ReportError) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn resolve_config(cli: &Cli) -> Result<ScenarioConfig, Failure> {
    let mut cfg = match (&cli.config, &cli.preset) {
        (Some(path), _) => config::parse_config(path)?,
        (None, Some(name)) => name.parse::<Preset>()?.config(),
        (None, None) => match cli.command {
            Command::RankProfile => Preset::Fig2.config(),
            _ => Preset::Fig5.config(),
        },
    };
    if let Some(seed) = cli.seed {
        cfg.master_seed = seed;
    }
    if let Some(trials) = cli.trials {
        cfg.trials = trials;
    }
    cfg.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
    Ok(cfg)
}

fn prepare_out(out: &Path, cfg: &ScenarioConfig) -> Result<(), Failure> {
    std::fs::create_dir_all(out).map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", out.display())))?;
    report::write_file(&out.join(CONFIG_FILE), &config::to_toml(cfg))?;
    Ok(())
}

fn finish(out: &Path, cfg: &ScenarioConfig, outputs: &[&str]) -> Result<(), Failure> {
    RunManifest::new(out, CONFIG_FILE, cfg.master_seed, outputs)?.write(out)?;
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let cfg = resolve_config(cli)?;
    let out = cli.out.as_path();
    prepare_out(out, &cfg)?;
    match &cli.command {
        Command::RankProfile => {
            let profiles = sim::rank_profiles(&cfg)?;
            report::emit_profile_csv(&profiles, &out.join("rank_profile.csv"))?;
            for (l, p) in &profiles {
                let tail: f64 = p.iter().skip(*l).sum();
                println!("L={l}: top-1 energy {:.6}, energy beyond index L {:.3e}", p[0], tail);
            }
            finish(out, &cfg, &["rank_profile.csv"])
        }
        Command::CapacitySweep => {
            let result = sim::run_scenario(&cfg)?;
            report::emit_capacity_csv(&result.rows, &out.join("capacity.csv"))?;
            println!("{} rows written to {}", result.rows.len(), out.join("capacity.csv").display());
            finish(out, &cfg, &["capacity.csv"])
        }
        Command::EstimateDemo { snr } => {
            let snr_db = snr.or(cfg.estimation.training_snr_db).unwrap_or(20.0);
            let setup = cfg.link_setup()?;
            let dist = cfg.path_distribution(cfg.k_factor_db[0])?;
            let mut rng = substream(cfg.master_seed, stream_id(0xd0, 0, 0, 0));
            let paths = sample_paths(&dist, &mut rng);
            let h = assemble_channel(&setup.tx, &setup.rx, &paths);
            let noise = 1.0 / 10f64.powf(snr_db / 10.0);
            let mut oracle = SoundingChannel::new(h.clone(), noise, substream(cfg.master_seed, stream_id(0xd1, 0, 0, 0)))?;
            let est = estimate_channel(&mut oracle, &setup, &cfg.estimation.pipeline)?;
            println!("observation SNR {snr_db} dB, {} true paths", paths.len());
            println!("true AoDs (rad): {:?}", paths.aods());
            println!("true AoAs (rad): {:?}", paths.aoas());
            println!("estimated AoDs (rad): {:?}", est.aods);
            println!("estimated AoAs (rad): {:?}", est.aoas);
            println!("paired paths: {}", est.paired_paths.len());
            println!("gain fit relative residual: {:.3e}", est.gain_residual);
            println!(
                "slots: sweep {}, small cell {}, macro {}, training total {}",
                est.sweep_slots, est.small_cell_slots, est.macro_slots, est.training_slots_used
            );
            println!("channel NMSE: {:.3e}", channel_nmse(&est.reconstruction, &h));
            finish(out, &cfg, &[])
        }
        Command::Factorize => {
            let stats = sim::factorization_report(&cfg)?;
            let n = stats.len() as f64;
            let worst = stats.iter().map(|s| s.residual).fold(0.0, f64::max);
            let mean = stats.iter().map(|s| s.residual).sum::<f64>() / n;
            let iters = stats.iter().map(|s| s.iterations_used).sum::<usize>() as f64 / n;
            let improved = stats.iter().filter(|s| s.best_objective <= s.first_objective).count();
            println!("{} factorizations at rank {}", stats.len(), cfg.n_bb_sm);
            println!("relative residual: mean {mean:.4e}, max {worst:.4e}");
            println!("mean iterations: {iters:.1}");
            println!("returned objective <= first objective: {improved}/{}", stats.len());
            finish(out, &cfg, &[])
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
