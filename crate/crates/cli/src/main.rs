use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use vocadapt_cli::{cmd_adapt, cmd_eval, cmd_pretrain, cmd_synth, CliError, Speaker};

#[derive(Parser)]
#[command(
    name = "vocadapt",
    version,
    about = "Flow vocoder pretraining and adversarial speaker adaptation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a generator on the pretraining speaker.
    Pretrain {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Adapt a pretrained generator to the adaptation speaker.
    Adapt {
        /// Defaults to the configuration stored in the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        pretrained: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Synthesize a WAV from mel frames (CSV) or a reference WAV.
    Synth {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint on held-out clips and plot spectrograms.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Speaker::Adapt)]
        speaker: Speaker,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Pretrain { config, seed, out } => {
            let s = cmd_pretrain(config.as_deref(), seed, &out)?;
            println!(
                "pretrained {} steps: loss {:.4} -> {:.4}; checkpoint {}",
                s.steps,
                s.initial_loss,
                s.final_loss,
                s.checkpoint.display()
            );
        }
        Command::Adapt {
            config,
            pretrained,
            seed,
            out,
        } => {
            let s = cmd_adapt(config.as_deref(), &pretrained, seed, &out)?;
            println!(
                "held-out log-mag {:.4} -> {:.4} ({:+.1}%); score gap {:.4} -> {:.4}; checkpoint {}",
                s.baseline.mean_log_mag,
                s.adapted.mean_log_mag,
                -100.0 * s.improvement,
                s.gap_start,
                s.gap_end,
                s.checkpoint.display()
            );
        }
        Command::Synth {
            checkpoint,
            input,
            seed,
            out,
        } => {
            let n = cmd_synth(&checkpoint, &input, &out, seed)?;
            println!("wrote {n} samples to {}", out.display());
        }
        Command::Eval {
            checkpoint,
            config,
            speaker,
            seed,
            out,
        } => {
            let s = cmd_eval(&checkpoint, config.as_deref(), speaker, seed, &out)?;
            println!(
                "log-mag {:.4} ± {:.4} over {} clips; {} plots in {}",
                s.report.mean_log_mag,
                s.report.std_log_mag,
                s.report.clips.len(),
                s.plots.len(),
                out.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
