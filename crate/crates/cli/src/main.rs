mod cli;
mod commands;
mod output;
mod settings;

use std::process::ExitCode;

use clap::Parser;

use cli::{Cli, Command};
use output::RunDir;
use settings::{Settings, Usage};

const EXIT_USAGE: u8 = 1;
const EXIT_VALIDATION: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Usage>() {
            return EXIT_USAGE;
        }
        if cause.is::<commands::SuitesFailed>() {
            return EXIT_NUMERICAL;
        }
        if let Some(minerflex::Error::Numerical(_)) = cause.downcast_ref::<minerflex::Error>() {
            return EXIT_NUMERICAL;
        }
    }
    EXIT_VALIDATION
}

fn out_dir(cmd: &Command) -> &std::path::Path {
    match cmd {
        Command::SolveOffline(a) => &a.output.out,
        Command::SolveReg(a) => &a.output.out,
        Command::SolveRisk(a) => &a.output.out,
        Command::SimulateOnline(a) => &a.output.out,
        Command::CompareStrategies(a) => &a.output.out,
        Command::Verify(a) => &a.output.out,
        Command::Synthesize(a) => &a.output.out,
    }
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let settings = Settings::load(cli.config.as_deref(), cli.config_dir.as_deref())?;
    let mut dir = RunDir::create(out_dir(&cli.command), cli.command.name())?;
    dir.config_file(settings.path.as_deref())?;
    let result = match &cli.command {
        Command::SolveOffline(a) => commands::solve_offline(a, &settings, &mut dir),
        Command::SolveReg(a) => commands::solve_reg(a, &settings, &mut dir),
        Command::SolveRisk(a) => commands::solve_risk(a, &settings, &mut dir),
        Command::SimulateOnline(a) => commands::simulate_online(a, &settings, &mut dir),
        Command::CompareStrategies(a) => commands::compare(a, &settings, &mut dir),
        Command::Verify(a) => commands::verify_suites(a, &settings, &mut dir),
        Command::Synthesize(a) => commands::synthesize(a, &settings, &mut dir),
    };
    // A failed verification still leaves a complete output directory.
    if result.is_ok() || result.as_ref().is_err_and(|e| e.is::<commands::SuitesFailed>()) {
        dir.finish()?;
    }
    result
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
