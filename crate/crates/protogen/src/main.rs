use clap::{Parser, Subcommand};
use protogen::commands::{self, Overrides};
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(version, about = "Episodic prototype generator for few-shot classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Run configuration (TOML).
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,

    #[command(flatten)]
    overrides: OverrideArgs,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Generate a synthetic embedding dataset.
    GenData,
    /// Meta-train the generator and write the best checkpoint.
    Train,
    /// Evaluate one strategy on the test dataset.
    Eval,
    /// Evaluate mean, generator and oracle prototypes on shared episodes.
    Compare,
}

impl Command {
    fn verb(self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Compare => "compare",
        }
    }
}

#[derive(clap::Args, Debug)]
struct OverrideArgs {
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// gen-data output file.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    train: Option<PathBuf>,
    #[arg(long, global = true)]
    val: Option<PathBuf>,
    #[arg(long, global = true)]
    test: Option<PathBuf>,
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    #[arg(long, global = true)]
    train_log: Option<PathBuf>,
    /// Per-episode CSV.
    #[arg(long, global = true)]
    report: Option<PathBuf>,
    /// Summary CSV.
    #[arg(long, global = true)]
    summary: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let Some(config) = cli.config else {
        eprintln!("error: --config <FILE> is required");
        return ExitCode::from(2);
    };
    let o = cli.overrides;
    let overrides = Overrides {
        seed: o.seed,
        data_out: o.out,
        train: o.train,
        val: o.val,
        test: o.test,
        checkpoint: o.checkpoint,
        train_log: o.train_log,
        report: o.report,
        summary: o.summary,
    };
    match commands::run(cli.command.verb(), &config, overrides) {
        Ok(text) => {
            let mut stdout = std::io::stdout().lock();
            if stdout.write_all(text.as_bytes()).and_then(|_| stdout.flush()).is_err() {
                return ExitCode::FAILURE;
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
