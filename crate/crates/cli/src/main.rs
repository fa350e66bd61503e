use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vidgp_cli::commands::{self, Invocation};

/// Variational inference with a deep generative prior for Darcy flow.
#[derive(Parser)]
#[command(name = "vidgp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// `key=value` settings file
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory [default: run]
    #[arg(long)]
    out: Option<PathBuf>,
    /// Config overrides as `--key value` or `--key=value`
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample the training corpus, the truth field and its observations
    GenData(Common),
    /// Train the generative prior on the corpus
    TrainDgp(Common),
    /// Train one surrogate per `n_train` size
    TrainSurrogate(Common),
    /// Estimate the posterior with the configured method
    Infer(Common),
    /// Compare surrogate and adjoint ELBO gradients
    Gradcheck(Common),
    /// Collect inference reports into one table
    Report(Common),
    /// Write a field file as a portable graymap
    Render {
        field: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// ASCII (P2) instead of binary (P5)
        #[arg(long)]
        plain: bool,
    },
}

fn invocation(c: Common) -> vidgp::Result<Invocation> {
    let mut inv = Invocation {
        config: c.config,
        seed: c.seed,
        out: c.out,
        overrides: Vec::new(),
    };
    inv.absorb(&c.overrides)?;
    Ok(inv)
}

fn run(command: Command) -> vidgp::Result<bool> {
    let pipeline = |c: Common, f: fn(&vidgp_cli::RunConfig, &std::path::Path) -> vidgp::Result<String>| {
        let inv = invocation(c)?;
        let cfg = inv.resolve()?;
        println!("{}", f(&cfg, &inv.out_dir())?);
        Ok(true)
    };
    match command {
        Command::GenData(c) => pipeline(c, commands::gen_data),
        Command::TrainDgp(c) => pipeline(c, commands::train_dgp),
        Command::TrainSurrogate(c) => pipeline(c, commands::train_surrogates),
        Command::Infer(c) => pipeline(c, commands::infer),
        Command::Report(c) => pipeline(c, commands::report),
        Command::Gradcheck(c) => {
            let inv = invocation(c)?;
            let cfg = inv.resolve()?;
            let (text, ok) = commands::gradcheck(&cfg, &inv.out_dir())?;
            print!("{text}");
            Ok(ok)
        }
        Command::Render { field, out, plain } => {
            println!("{}", commands::render(&field, &out, plain)?);
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse().command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
