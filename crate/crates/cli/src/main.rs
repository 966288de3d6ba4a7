//! `zerorange <subcommand> --config path.json [--threads N] [--out dir] [--seed S]`
//!
//! Exit codes: 0 success, 1 I/O failure while writing results, 2 config
//! error, 3 solver failure, 4 validation-suite failure.

mod config;
mod experiments;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use chrono::Utc;
use clap::{value_parser, Arg, ArgMatches, Command};

use crate::config::{Setup, DEFAULT_SEED};
use crate::experiments::{ExperimentRegistry, RunError};
use crate::output::{timestamp, write_all, ResultRecord, SCHEMA_VERSION};

const EXIT_IO: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_SOLVER: u8 = 3;
const EXIT_VALIDATION: u8 = 4;

fn common_args() -> [Arg; 4] {
    [
        Arg::new("config")
            .long("config")
            .value_name("PATH")
            .value_parser(value_parser!(PathBuf))
            .help("JSON run configuration"),
        Arg::new("threads")
            .long("threads")
            .value_name("N")
            .value_parser(value_parser!(usize))
            .help("Worker threads; 1 makes runs bitwise reproducible"),
        Arg::new("out")
            .long("out")
            .value_name("DIR")
            .value_parser(value_parser!(PathBuf))
            .help("Output directory (overrides output.dir)"),
        Arg::new("seed")
            .long("seed")
            .value_name("S")
            .value_parser(value_parser!(u64))
            .help("RNG seed (overrides the config)"),
    ]
}

fn cli(reg: &ExperimentRegistry) -> Command {
    Command::new("zerorange")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Three-body zero-range limit experiments")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommands(reg.iter().map(|e| Command::new(e.name()).about(e.about()).args(common_args())))
}

fn run(reg: &ExperimentRegistry, name: &str, args: &ArgMatches) -> Result<bool, (u8, String)> {
    let exp = reg.get(name).expect("subcommands come from the registry");
    if let Some(&n) = args.get_one::<usize>("threads") {
        if n == 0 {
            return Err((EXIT_CONFIG, "--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| (EXIT_SOLVER, format!("thread pool: {e}")))?;
    }
    let mut setup: Option<Setup> = match args.get_one::<PathBuf>("config") {
        Some(p) => Some(config::load(p).map_err(|e| (EXIT_CONFIG, format!("{}: {e}", p.display())))?),
        None => None,
    };
    let seed = args
        .get_one::<u64>("seed")
        .copied()
        .or(setup.as_ref().map(|s| s.config.seed))
        .unwrap_or(DEFAULT_SEED);
    let out = args
        .get_one::<PathBuf>("out")
        .cloned()
        .or_else(|| setup.as_ref().and_then(|s| s.config.output.dir.clone()))
        .unwrap_or_else(|| PathBuf::from("out"));
    let prefix = setup.as_ref().and_then(|s| s.config.output.prefix.clone());
    if let Some(s) = setup.as_mut() {
        s.config.seed = seed;
        s.config.output.dir = Some(out.clone());
    }

    let started = Utc::now();
    let clock = Instant::now();
    log::info!("{name}: seed {seed}, output {}", out.display());
    let outcome = exp.run(setup.as_ref(), seed).map_err(|e| match e {
        RunError::Config(e) => (EXIT_CONFIG, format!("config: {e}")),
        RunError::Solver(e) => (EXIT_SOLVER, format!("solver: {e}")),
    })?;
    let mut record = ResultRecord {
        schema_version: SCHEMA_VERSION,
        experiment: name.to_string(),
        tool_version: env!("CARGO_PKG_VERSION"),
        config: setup.map(|s| s.config),
        seed,
        threads: args.get_one::<usize>("threads").copied(),
        passed: outcome.passed,
        outputs: outcome.outputs,
        diagnostics: outcome.diagnostics,
        files: Vec::new(),
        started_at: timestamp(started),
        finished_at: timestamp(Utc::now()),
        elapsed_seconds: clock.elapsed().as_secs_f64(),
    };
    let path = write_all(&out, prefix.as_deref(), &outcome.tables, &mut record)
        .map_err(|e| (EXIT_IO, format!("writing results to {}: {e}", out.display())))?;
    println!(
        "{name}: {} ({:.1} s), record {}",
        if record.passed { "ok" } else { "FAILED" },
        record.elapsed_seconds,
        path.display()
    );
    Ok(record.passed)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let reg = ExperimentRegistry::default();
    let matches = cli(&reg).get_matches();
    let (name, args) = matches.subcommand().expect("a subcommand is required");
    match run(&reg, name, args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_VALIDATION),
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
