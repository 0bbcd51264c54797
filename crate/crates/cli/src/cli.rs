//! Argument parsing. Every configuration key doubles as a `--flag`.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Arg, ArgMatches, Command};

use crate::commands;
use crate::config::{RunConfig, KEYS, THREADS_ENV};
use crate::error::Result;

/// Exit code when `verify` ran but at least one check failed.
pub const EXIT_CHECK_FAILED: u8 = 3;

fn flag_name(key: &str) -> String {
    key.replace('_', "-")
}

fn with_config_args(cmd: Command) -> Command {
    let cmd = cmd.arg(
        Arg::new("config")
            .long("config")
            .value_name("FILE")
            .value_parser(clap::value_parser!(PathBuf))
            .help("key = value configuration file; flags override it"),
    );
    KEYS.iter().fold(cmd, |cmd, &(key, help)| {
        cmd.arg(Arg::new(key).long(flag_name(key)).value_name("VALUE").help(help))
    })
}

pub fn command() -> Command {
    Command::new("dctmc")
        .about("Data-compatible T-matrix completion for inverse scattering")
        .version(dctmc_core::VERSION)
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(with_config_args(
            Command::new("generate").about("Sample operators, simulate data and write a dataset directory"),
        ))
        .subcommand(with_config_args(
            Command::new("reconstruct").about("Run the completion iteration on a dataset"),
        ))
        .subcommand(with_config_args(
            Command::new("verify").about("Run the cross-derivation checks on a small dataset"),
        ))
        .subcommand(
            Command::new("report")
                .about("Write plot-ready CSV tables from a result directory")
                .arg(
                    Arg::new("result")
                        .long("result")
                        .value_name("DIR")
                        .required(true)
                        .value_parser(clap::value_parser!(PathBuf)),
                )
                .arg(
                    Arg::new("output")
                        .long("output")
                        .value_name("DIR")
                        .value_parser(clap::value_parser!(PathBuf))
                        .help("defaults to the result directory"),
                )
                .arg(
                    Arg::new("slice-z")
                        .long("slice-z")
                        .value_name("LAYER")
                        .value_parser(clap::value_parser!(usize))
                        .help("z layer of the potential slice, default the middle one"),
                ),
        )
}

fn load_config(m: &ArgMatches) -> Result<RunConfig> {
    let overrides: BTreeMap<String, String> = KEYS
        .iter()
        .filter_map(|&(key, _)| m.get_one::<String>(key).map(|v| (key.to_string(), v.clone())))
        .collect();
    let env = std::env::var(THREADS_ENV).ok();
    RunConfig::load(
        m.get_one::<PathBuf>("config").map(PathBuf::as_path),
        overrides,
        env.as_deref(),
    )
}

/// Runs one invocation and maps the outcome to an exit code: 0 on success
/// (including non-converged runs), [`EXIT_CHECK_FAILED`] when a check
/// fails, 1 on any error.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let matches = command().get_matches_from(args);
    match dispatch(&matches) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(matches: &ArgMatches) -> anyhow::Result<ExitCode> {
    match matches.subcommand() {
        Some(("generate", m)) => {
            let s = commands::generate(&load_config(m)?)?;
            println!(
                "dataset {}: {} voxels, Phi {}x{}, known block {}x{}",
                s.dir.display(),
                s.n_voxels,
                s.phi_shape.0,
                s.phi_shape.1,
                s.block.0,
                s.block.1
            );
        }
        Some(("reconstruct", m)) => {
            let s = commands::reconstruct(&load_config(m)?)?;
            println!(
                "result {}: {} after {} iterations (start {})",
                s.dir.display(),
                s.termination.as_str(),
                s.iterations,
                s.guess_source
            );
        }
        Some(("verify", m)) => {
            let report = commands::verify(&load_config(m)?)?;
            print!("{}", report.render());
            if !report.all_passed() {
                return Ok(ExitCode::from(EXIT_CHECK_FAILED));
            }
        }
        Some(("report", m)) => {
            let result = m.get_one::<PathBuf>("result").expect("required");
            let s = commands::report(
                result,
                m.get_one::<PathBuf>("output").map(PathBuf::as_path),
                m.get_one::<usize>("slice-z").copied(),
            )?;
            println!("wrote {} and {}", s.error_table.display(), s.slice_table.display());
        }
        _ => unreachable!("subcommand_required"),
    }
    Ok(ExitCode::SUCCESS)
}
