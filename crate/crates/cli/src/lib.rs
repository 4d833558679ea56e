//! The `mono3d` command-line tool.

pub mod commands;
pub mod registry;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{value_parser, Arg, ArgMatches, Command};
use log::info;

use mono3d_core::{Error, Result};
use registry::{registry, Cmd, RunConfig, Source};

/// Name of the flag that points at a config file. It selects a source of
/// keys rather than being one, so it is not in the registry.
pub const CONFIG_FLAG: &str = "config";

pub fn command() -> Command {
    let keys = registry();
    let mut root = Command::new("mono3d")
        .about("Intrinsic-aware monocular 3D detection on synthetic data")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg_required_else_help(true);
    for cmd in Cmd::ALL {
        let mut sub = Command::new(cmd.name()).about(cmd.about()).arg(
            Arg::new(CONFIG_FLAG)
                .long(CONFIG_FLAG)
                .value_name("FILE")
                .value_parser(value_parser!(PathBuf))
                .help("read `key = value` settings from FILE (flags and MONO3D_* variables take precedence)"),
        );
        for k in keys.iter().filter(|k| k.commands.contains(&cmd)) {
            let mut help = k.help.clone();
            if !k.default.is_empty() {
                help.push_str(&format!(" [default: {}]", k.default));
            }
            help.push_str(&format!(" [env: {}]", k.env_var()));
            sub = sub.arg(
                Arg::new(k.key.clone())
                    .long(k.flag())
                    .value_name("VALUE")
                    .num_args(1)
                    .allow_hyphen_values(true)
                    .help(help),
            );
        }
        root = root.subcommand(sub);
    }
    root
}

/// Layers defaults, the config file, the environment and the flags.
pub fn resolve<I>(cmd: Cmd, m: &ArgMatches, env: I) -> Result<RunConfig>
where
    I: IntoIterator<Item = (String, String)>,
{
    let mut c = RunConfig::default();
    if let Some(path) = m.get_one::<PathBuf>(CONFIG_FLAG) {
        c.apply_file(path)?;
    }
    c.apply_env(env)?;
    for k in registry().iter().filter(|k| k.commands.contains(&cmd)) {
        if let Some(v) = m.get_one::<String>(&k.key) {
            c.set(&k.key, v, Source::Flag)?;
        }
    }
    c.validate(cmd)?;
    Ok(c)
}

/// Runs the tool and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .try_init();
    let (name, sub) = matches.subcommand().expect("subcommand required");
    let cmd = Cmd::ALL.into_iter().find(|c| c.name() == name).expect("registered subcommand");
    let result = resolve(cmd, sub, std::env::vars()).and_then(|c| {
        info!("resolved configuration for {name}:");
        for line in c.describe() {
            info!("  {line}");
        }
        commands::execute(cmd, &c)
    });
    match result {
        Ok(()) => 0,
        Err(e) => report(&e),
    }
}

fn report(e: &Error) -> i32 {
    eprintln!("error: {e}");
    e.exit_code()
}
