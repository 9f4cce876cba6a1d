mod cli;
mod commands;
mod context;

use std::process::ExitCode;

use clap::Parser;

use cli::{Cli, Command};
use context::Ctx;

fn run(ctx: &mut Ctx, command: &Command) -> anyhow::Result<()> {
    ctx.init_threads()?;
    match command {
        Command::Iaa => commands::iaa::run(ctx),
        Command::Stats(a) => commands::stats::run(ctx, a),
        Command::Split(a) => commands::split::run(ctx, a),
        Command::Table(a) => commands::table::run(ctx, a),
        Command::Train(a) => commands::learn::train(ctx, a),
        Command::Eval(a) => commands::learn::eval(ctx, a),
        Command::Synth(a) => commands::learn::synth(ctx, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let name = format!("{:?}", cli.command).split(['(', ' ']).next().unwrap_or("").to_lowercase();
    let mut ctx = Ctx::new(cli.global);
    let result = run(&mut ctx, &cli.command);
    let warnings = ctx.warnings;
    match result {
        Ok(()) => {
            eprintln!("{name}: finished with {warnings} warning(s)");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            eprintln!("{name}: failed with {warnings} warning(s)");
            ExitCode::FAILURE
        }
    }
}
