use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lastraj::{run, Command, EXIT_OK};

#[derive(Parser)]
#[command(name = "lastraj", version, about = "Length-aware trajectory GAN toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(clap::Args)]
struct Common {
    /// Flat `section.key = value` config file.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the command's seed key.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sample a synthetic trajectory dataset.
    GenData(Common),
    /// Train a generator/discriminator pair.
    Train(Common),
    /// KS report of a trained generator against the held-out split.
    Eval(Common),
    /// Certify the derived-variable bounds on random finite spaces.
    VerifyTheory(Common),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, args) = match cli.command {
        Cmd::GenData(a) => (Command::GenData, a),
        Cmd::Train(a) => (Command::Train, a),
        Cmd::Eval(a) => (Command::Eval, a),
        Cmd::VerifyTheory(a) => (Command::VerifyTheory, a),
    };
    match run(command, &args.config, args.seed, &args.out) {
        Ok(m) => {
            for o in &m.outputs {
                println!("{}  {}", o.sha256, args.out.join(&o.path).display());
            }
            ExitCode::from(EXIT_OK as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
