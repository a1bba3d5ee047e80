//! One binary for the whole experiment lifecycle:
//!
//! ```text
//! protoarg gen-data  --seed 7 --n 10000 --out data.shapes
//! protoarg train     --data data.shapes --out runs/base [--train.seed=1 ...]
//! protoarg eval      --checkpoint runs/base/checkpoint.bin --data data.shapes --split test
//! protoarg sparsify  --checkpoint ... --data ... --ratio 0.4 --out runs/sparse
//! protoarg explain   --checkpoint ... --qbaf runs/sparse/qbaf.graph --data ... --index 3 --out runs/expl
//! ```
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.

mod commands;
mod config;

use std::collections::BTreeMap;
use std::fmt;
use std::process::ExitCode;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError::Usage(message.into())
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        CliError::Runtime(message.into())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => write!(f, "{m}"),
        }
    }
}

const USAGE: &str = "\
usage: protoarg <command> [flags]

commands:
  gen-data   --seed <u64> --n <count> --out <file>
  train      --data <file> [--config <file>] --out <dir> [--section.key=value ...]
  eval       --checkpoint <file> --data <file> --split <train|test>
  sparsify   --checkpoint <file> --data <file> --ratio <r> --out <dir> [--sparsify.key=value ...]
  explain    --checkpoint <file> --qbaf <file> --data <file> --index <i> --out <dir>

Config overrides use dotted paths (model.*, train.*, sparsify.*) and take
precedence over --config file values. PROTOARG_RUN_ROOT provides a default
run-directory root when --out is omitted.";

/// Parsed command line: plain flags plus dotted-path config overrides, in
/// order of appearance.
pub struct Flags {
    values: BTreeMap<String, String>,
    overrides: Vec<(String, String)>,
}

impl Flags {
    fn parse(args: &[String], allowed: &[&str], allow_overrides: bool) -> Result<Flags, CliError> {
        let mut values = BTreeMap::new();
        let mut overrides = Vec::new();
        let mut it = args.iter().peekable();
        while let Some(arg) = it.next() {
            let Some(stripped) = arg.strip_prefix("--") else {
                return Err(CliError::usage(format!("unexpected argument {arg:?}")));
            };
            let (name, value) = match stripped.split_once('=') {
                Some((n, v)) => (n.to_string(), v.to_string()),
                None => {
                    let value = it
                        .next()
                        .ok_or_else(|| CliError::usage(format!("flag --{stripped} needs a value")))?;
                    (stripped.to_string(), value.clone())
                }
            };
            if name.contains('.') {
                if !allow_overrides {
                    return Err(CliError::usage(format!("this command takes no config overrides (--{name})")));
                }
                overrides.push((name, value));
            } else if allowed.contains(&name.as_str()) {
                values.insert(name, value);
            } else {
                return Err(CliError::usage(format!("unknown flag --{name}")));
            }
        }
        Ok(Flags { values, overrides })
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.values.get(name).map(String::as_str)
    }

    pub fn require(&self, name: &str) -> Result<&str, CliError> {
        self.get(name).ok_or_else(|| CliError::usage(format!("missing required flag --{name}")))
    }

    pub fn parse_value<T: std::str::FromStr>(&self, name: &str, default: T) -> Result<T, CliError> {
        match self.get(name) {
            None => Ok(default),
            Some(raw) => raw
                .parse()
                .map_err(|_| CliError::usage(format!("bad value {raw:?} for --{name}"))),
        }
    }

    pub fn overrides(&self) -> &[(String, String)] {
        &self.overrides
    }
}

fn run(args: &[String]) -> Result<(), CliError> {
    let Some(command) = args.first() else {
        return Err(CliError::usage("missing command"));
    };
    let rest = &args[1..];
    match command.as_str() {
        "gen-data" => commands::gen_data(Flags::parse(rest, &["seed", "n", "out"], false)?),
        "train" => commands::train(Flags::parse(rest, &["data", "config", "out"], true)?),
        "eval" => commands::eval(Flags::parse(rest, &["checkpoint", "data", "split"], false)?),
        "sparsify" => commands::sparsify(Flags::parse(rest, &["checkpoint", "data", "ratio", "out"], true)?),
        "explain" => commands::explain(Flags::parse(rest, &["checkpoint", "qbaf", "data", "index", "out"], false)?),
        "--help" | "help" | "-h" => {
            println!("{USAGE}");
            Ok(())
        }
        other => Err(CliError::usage(format!("unknown command {other:?}"))),
    }
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(message)) => {
            eprintln!("error: {message}");
            eprintln!("{USAGE}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
    }
}
