use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nlslab::config::RunConfig;
use nlslab::pipeline::{run, Context, Pipeline};
use nlslab::Error;

#[derive(Parser)]
#[command(name = "nlslab", version, about = "Nonlinear bound-state dynamics experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the nonlinear ground-state branch and fit its scalings.
    Branch(Common),
    /// Evolve the full equation and track the modulation decomposition.
    Evolve(Common),
    /// Decay probes for the linearized flow around a rotating ground state.
    Linprobe(Common),
    /// Dispersive bounds, profile envelopes and multiplier regularity.
    Appendix(Common),
    /// Run every pipeline.
    All(Common),
}

#[derive(Args)]
struct Common {
    /// INI file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// section.key=value, may be repeated.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn load(common: &Common) -> Result<RunConfig, Error> {
    let text = match &common.config {
        Some(path) => std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
        None => String::new(),
    };
    let mut overrides = common.overrides.clone();
    if let Some(seed) = common.seed {
        overrides.push(format!("run.seed={seed}"));
    }
    if let Some(out) = &common.out {
        overrides.push(format!("run.out={}", out.display()));
    }
    RunConfig::from_text(&text, &overrides)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (which, common) = match &cli.command {
        Command::Branch(c) => (Pipeline::Branch, c),
        Command::Evolve(c) => (Pipeline::Evolve, c),
        Command::Linprobe(c) => (Pipeline::Linprobe, c),
        Command::Appendix(c) => (Pipeline::Appendix, c),
        Command::All(c) => (Pipeline::All, c),
    };
    let config = match load(common) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(2);
        }
    };
    let ctx = match Context::new(config) {
        Ok(c) => c,
        Err(e @ Error::Config(_)) => {
            eprintln!("{e}");
            return ExitCode::from(2);
        }
        Err(e) => {
            eprintln!("setup failed: {e}");
            return ExitCode::from(1);
        }
    };
    let outcomes = match run(&ctx, which) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("run failed: {e}");
            return ExitCode::from(1);
        }
    };
    let mut ok = true;
    for outcome in &outcomes {
        for check in &outcome.checks {
            let mark = if check.passed { "PASS" } else { "FAIL" };
            println!("[{mark}] {}.{}: {}", outcome.pipeline, check.name, check.detail);
        }
        ok &= outcome.passed();
    }
    println!("outputs in {}", ctx.out_dir().display());
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}
