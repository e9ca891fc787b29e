use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Arg, ArgAction, ArgMatches, Command};

mod commands;
mod config;

use config::{file_command, flag_name, keys_for, RunConfig, COMMANDS, OUTPUT_DIR_ENV};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Lib(#[from] knn_scaling::Error),
    #[error("cannot write {0}: {1}")]
    Output(PathBuf, std::io::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Output(..) => 3,
            CliError::Lib(e) if e.is_data_error() => 3,
            CliError::Lib(e) if e.is_numeric_error() => 4,
            CliError::Lib(_) => 2,
        }
    }
}

fn cli() -> Command {
    let mut app = Command::new("knnlab")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Nearest-neighbor scaling experiments on signal-plus-noise distributions")
        .subcommand_required(true)
        .arg_required_else_help(true);
    for &(name, about) in COMMANDS {
        let mut sub = Command::new(name).about(about).arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .help("flat `key = value` file; flags override it"),
        );
        for k in keys_for(name) {
            let help = if k.default.is_empty() {
                k.help.to_string()
            } else {
                format!("{} [default: {}]", k.help, k.default)
            };
            sub = sub.arg(
                Arg::new(k.name)
                    .long(flag_name(k.name))
                    .value_name("VALUE")
                    .action(ArgAction::Set)
                    .allow_hyphen_values(true)
                    .help(help),
            );
        }
        app = app.subcommand(sub);
    }
    app.subcommand(
        Command::new("replay")
            .about("re-run the command recorded in a manifest")
            .arg(Arg::new("manifest").required(true).value_name("FILE"))
            .arg(
                Arg::new("output_dir")
                    .long("output-dir")
                    .value_name("DIR")
                    .help("write to DIR instead of the recorded directory"),
            ),
    )
}

fn resolve(name: &str, m: &ArgMatches) -> Result<RunConfig, CliError> {
    let flags: Vec<(String, String)> = keys_for(name)
        .iter()
        .filter_map(|k| m.get_one::<String>(k.name).map(|v| (k.name.to_string(), v.clone())))
        .collect();
    let file = m.get_one::<String>("config").map(PathBuf::from);
    RunConfig::resolve(name, file.as_deref(), std::env::var(OUTPUT_DIR_ENV).ok(), &flags)
}

fn replay(m: &ArgMatches) -> Result<RunConfig, CliError> {
    let path = PathBuf::from(m.get_one::<String>("manifest").expect("required"));
    let command = file_command(&path)?
        .ok_or_else(|| CliError::Config(format!("{}: no `command` entry", path.display())))?;
    if !COMMANDS.iter().any(|&(c, _)| c == command) {
        return Err(CliError::Config(format!("{}: unknown command `{command}`", path.display())));
    }
    let flags: Vec<(String, String)> = m
        .get_one::<String>("output_dir")
        .map(|d| vec![("output_dir".to_string(), d.clone())])
        .unwrap_or_default();
    RunConfig::resolve(&command, Some(&path), std::env::var(OUTPUT_DIR_ENV).ok(), &flags)
}

fn run() -> Result<(), CliError> {
    let matches = cli().get_matches();
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    let cfg = match name {
        "replay" => replay(sub)?,
        _ => resolve(name, sub)?,
    };
    let threads: usize = cfg.get("threads")?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Config(format!("cannot start {threads} worker threads: {e}")))?;
    commands::run(&cfg)
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("knnlab: error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
