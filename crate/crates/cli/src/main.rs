use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mcpl_cli::cache;
use mcpl_cli::{CliResult, Experiment, ExperimentConfig, Preset, Scope};
use mcpl_core::ultrasound::Backend;

#[derive(Parser)]
#[command(name = "mcpl", version, about = "Multi-carrier parametric loudspeaker simulations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML config; the preset defaults apply to anything it omits.
    config: Option<PathBuf>,
    #[arg(long)]
    preset: Option<Preset>,
    /// Ultrasound route used to sample the virtual sources.
    #[arg(long)]
    backend: Option<Backend>,
    /// Drop absorption of the audio wave only.
    #[arg(long)]
    lossless_audio: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Restrict to these audio frequencies (Hz).
    #[arg(long = "audio-frequency", value_name = "HZ")]
    audio_frequencies: Vec<f64>,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Full pipeline: weights, axial profiles, field maps, summary.
    Run(Common),
    /// Weights and axial profiles only.
    Axial(Common),
    /// Weights and field maps only.
    Map(Common),
    /// Weights and contrast only.
    SolveWeights(Common),
    /// Export the drive signal for one variant as WAV and CSV.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Number of carriers, taken in configured order.
        #[arg(long, default_value_t = 4)]
        carriers: usize,
        /// Split each weight evenly between the sidebands.
        #[arg(long)]
        balanced: bool,
    },
    /// Manage the transfer cache.
    Cache {
        #[command(subcommand)]
        action: CacheAction,
    },
    /// Print the effective config as TOML.
    ShowConfig(Common),
}

#[derive(Subcommand)]
enum CacheAction {
    /// Remove unreadable and temporary files; `--all` empties the cache.
    Gc {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        all: bool,
    },
}

fn load(common: &Common) -> CliResult<ExperimentConfig> {
    let preset = common.preset.unwrap_or_default();
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path, preset)?,
        None => ExperimentConfig::preset(preset),
    };
    if let Some(p) = common.preset {
        if cfg.preset != p {
            log::warn!("config file selects preset {}, overriding --preset {p}", cfg.preset);
        }
    }
    if let Some(b) = common.backend {
        cfg.quad.backend = b;
    }
    if common.lossless_audio {
        cfg.medium.lossless_audio = true;
    }
    if let Some(o) = &common.out {
        cfg.output_dir = o.clone();
    }
    if let Some(c) = &common.cache_dir {
        cfg.cache_dir = c.clone();
    }
    if !common.audio_frequencies.is_empty() {
        cfg.audio_frequencies = common.audio_frequencies.clone();
    }
    if let Some(n) = common.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("thread pool already configured: {e}");
        }
    }
    Ok(cfg)
}

fn run_scope(common: &Common, scope: Scope) -> CliResult<()> {
    let exp = Experiment::new(load(common)?)?;
    let (summary, stats) = exp.run(scope)?;
    println!(
        "config {}  transfers: {} loaded, {} computed",
        &summary.config_hash[..12],
        stats.loaded,
        stats.computed
    );
    for r in &summary.records {
        let mut line = format!(
            "f_a {:>6} Hz  N {}  contrast {:>7.2} dB  acoustic {:>7.2} dB",
            r.audio_frequency, r.carrier_count, r.contrast_db, r.acoustic_contrast_db
        );
        if let Some(a) = &r.axial {
            line += &format!(
                "  distance {:.2} m{}",
                a.effective_distance_m,
                if a.effective_unbounded { "+" } else { "" }
            );
        }
        if let Some(m) = &r.map {
            line += &format!("  map extent {:.2} m", m.extent_z_m);
        }
        println!("{line}");
    }
    for w in &summary.warnings {
        println!("warning: {w}");
    }
    println!("wrote {}", exp.config.output_dir.join("summary.json").display());
    Ok(())
}

fn main_inner(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Run(c) => run_scope(&c, Scope::Full),
        Command::Axial(c) => run_scope(&c, Scope::Axial),
        Command::Map(c) => run_scope(&c, Scope::Map),
        Command::SolveWeights(c) => run_scope(&c, Scope::Weights),
        Command::Synth {
            common,
            carriers,
            balanced,
        } => {
            let mut cfg = load(&common)?;
            if balanced {
                cfg.synth.factor = mcpl_core::signal::FactorMode::Balanced;
            }
            if !(1..=cfg.carrier_frequencies.len()).contains(&carriers) {
                return Err(mcpl_cli::CliError::Config {
                    path: "--carriers".into(),
                    message: format!("must be in 1..={}", cfg.carrier_frequencies.len()),
                });
            }
            let exp = Experiment::new(cfg)?;
            for &fa in &exp.config.audio_frequencies {
                let (signal, files) = exp.synth(fa, carriers)?;
                println!("f_a {fa} Hz: {} samples, gain {:.6e}", signal.samples.len(), signal.gain);
                for f in files {
                    println!("  {}", f.display());
                }
            }
            Ok(())
        }
        Command::Cache {
            action: CacheAction::Gc { common, all },
        } => {
            let cfg = load(&common)?;
            let report = cache::gc(&cfg.cache_dir, all)?;
            for p in &report.removed {
                println!("removed {}", p.display());
            }
            println!("{} kept, {} removed", report.kept, report.removed.len());
            Ok(())
        }
        Command::ShowConfig(c) => {
            print!("{}", load(&c)?.to_toml());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match main_inner(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
