use std::path::PathBuf;
use std::process::ExitCode;

use avtrack_cli::*;
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

/// Audio-visual multi-person tracking: simulate, train, track, evaluate.
#[derive(Parser)]
#[command(name = "avtrack", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Run configuration (JSON). Defaults are listed below.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; takes precedence over VAVIT_SEED and the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Use the DOA-point audio model instead of a learned mapping.
    #[arg(long, global = true)]
    doa_mode: bool,
}

#[derive(Args, Clone, Copy)]
struct ModalityFlags {
    /// Ignore audio observations.
    #[arg(long, conflicts_with = "audio_only")]
    visual_only: bool,
    /// Ignore visual observations.
    #[arg(long)]
    audio_only: bool,
}

impl ModalityFlags {
    fn modality(self) -> Modality {
        if self.visual_only {
            Modality::VisualOnly
        } else if self.audio_only {
            Modality::AudioOnly
        } else {
            Modality::AudioVisual
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Fit a sub-band audio mapping from (position, feature) pairs.
    TrainMapping {
        /// JSONL of {"x": [2], "g": [K][2J]}.
        #[arg(long)]
        pairs: PathBuf,
        /// Model file to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a scenario bundle (gt, visual, audio, meta).
    Simulate {
        #[arg(long)]
        out: PathBuf,
        /// Also write training pairs drawn from the reference mapping.
        #[arg(long)]
        pairs: Option<PathBuf>,
    },
    /// Track a scenario bundle and write per-frame records.
    Track {
        #[arg(long)]
        scenario: PathBuf,
        /// Audio model file (not needed with --visual-only or --doa-mode).
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        modality: ModalityFlags,
    },
    /// Score tracker output against a scenario's ground truth.
    Evaluate {
        /// Scenario bundle directory holding gt.jsonl.
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        tracks: PathBuf,
        /// Report JSON; a CSV with the same stem is written next to it.
        #[arg(long)]
        report: PathBuf,
    },
    /// Simulate, train, track and evaluate into one directory.
    RunE2e {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        modality: ModalityFlags,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    let overrides = Overrides {
        seed: cli.global.seed,
        doa_mode: cli.global.doa_mode,
    };
    let cfg = RunConfig::load(cli.global.config.as_deref(), overrides)?;
    match cli.command {
        Command::TrainMapping { pairs, out } => {
            for b in cmd_train_mapping(&cfg, &pairs, &out)? {
                println!(
                    "sub-band {:2}  log-likelihood {:.6e}  residual {:.6e}",
                    b.k, b.log_likelihood, b.residual_rms
                );
            }
            println!("wrote {}", out.display());
        }
        Command::Simulate { out, pairs } => {
            cmd_simulate(&cfg, &out, pairs.as_deref())?;
            println!("wrote scenario to {} (seed {})", out.display(), cfg.seed);
        }
        Command::Track {
            scenario,
            model,
            out,
            modality,
        } => {
            let s = cmd_track(&cfg, &scenario, model.as_deref(), &out, modality.modality())?;
            println!(
                "{} frames, {} tracks born, {:.3} ms per frame",
                s.frames,
                s.births,
                s.mean_frame_seconds * 1e3
            );
        }
        Command::Evaluate { gt, tracks, report } => {
            let r = cmd_evaluate(&cfg, &gt, &tracks, &report)?;
            println!("{}", summary_line(&r));
        }
        Command::RunE2e { out, modality } => {
            let (r, s) = cmd_run_e2e(&cfg, &out, modality.modality())?;
            println!(
                "{} frames, {} tracks born, {:.3} ms per frame",
                s.frames,
                s.births,
                s.mean_frame_seconds * 1e3
            );
            println!("{}", summary_line(&r));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let defaults = format!("Default configuration:\n{}", RunConfig::default().to_pretty_json());
    let matches = Cli::command().after_long_help(defaults).get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
