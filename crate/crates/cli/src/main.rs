//! Config-driven command-line front end.
//!
//! Exit codes: 0 success, 1 check failure (oracle/gradcheck), 2 validation
//! error, 3 numerical abort, 4 I/O error.

mod artifacts;
mod commands;
mod config;
mod data;

use std::collections::BTreeMap;
use std::process::ExitCode;

use artifacts::{ensure_dir, resolve_out_dir, RunManifest};
use config::ConfigMap;

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Numerical(String),
    Io(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "validation error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical error: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl From<infomaxda::Error> for CliError {
    fn from(e: infomaxda::Error) -> Self {
        if e.is_validation() {
            CliError::Validation(e.to_string())
        } else {
            CliError::Numerical(e.to_string())
        }
    }
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

const USAGE: &str = "\
usage: infomaxda <subcommand> [--config <file>] [--out <dir>] [--<key> <value> ...]

subcommands:
  train        one adaptation run; writes metrics.csv + summary.json
  gaussian-mi  MI-estimation protocol on correlated Gaussian pairs
  ablate       none/k/m/km ablation table over --seeds
  sweep        (alpha, beta) sensitivity grid; writes matrix.csv
  compare      two_critic / mine_single / autoencoder comparison over --seeds
  cross-eval   train, then evaluate on a held-back third domain
  oracle       exact identity/inequality suites (--suite elbo|infomax|dv|all)
  gradcheck    finite-difference check of one loss (--loss cls|kld|ent|mi|dv_single|recon)

keys use dotted config names (train.alpha, data.rotation_deg, ...); common
short aliases exist (--rho, --epochs, --seeds, ...). File values override
defaults; command-line values override both. INFOMAXDA_OUT sets the default
output root.";

struct ParsedArgs {
    subcommand: String,
    config_path: Option<String>,
    out_flag: Option<String>,
    overrides: ConfigMap,
}

fn parse_args(args: &[String]) -> Result<ParsedArgs, CliError> {
    let Some(subcommand) = args.first() else {
        return Err(CliError::Validation(format!("missing subcommand\n{USAGE}")));
    };
    if matches!(subcommand.as_str(), "--help" | "-h" | "help") {
        println!("{USAGE}");
        std::process::exit(0);
    }
    let known = [
        "train",
        "gaussian-mi",
        "ablate",
        "sweep",
        "compare",
        "cross-eval",
        "oracle",
        "gradcheck",
    ];
    if !known.contains(&subcommand.as_str()) {
        return Err(CliError::Validation(format!(
            "unknown subcommand `{subcommand}`\n{USAGE}"
        )));
    }
    let mut config_path = None;
    let mut out_flag = None;
    let mut overrides = BTreeMap::new();
    let mut i = 1;
    while i < args.len() {
        let flag = &args[i];
        let Some(key) = flag.strip_prefix("--") else {
            return Err(CliError::Validation(format!("expected a --flag, found `{flag}`")));
        };
        let Some(value) = args.get(i + 1) else {
            return Err(CliError::Validation(format!("flag --{key} needs a value")));
        };
        match key {
            "config" => config_path = Some(value.clone()),
            "out" => out_flag = Some(value.clone()),
            _ => {
                overrides.insert(key.to_string(), value.clone());
            }
        }
        i += 2;
    }
    Ok(ParsedArgs {
        subcommand: subcommand.clone(),
        config_path,
        out_flag,
        overrides,
    })
}

fn dispatch(sub: &str, map: &ConfigMap, manifest: &mut RunManifest) -> Result<i32, CliError> {
    match sub {
        "train" => commands::cmd_train(map, manifest),
        "gaussian-mi" => commands::cmd_gaussian_mi(map, manifest),
        "ablate" => commands::cmd_ablate(map, manifest),
        "sweep" => commands::cmd_sweep(map, manifest),
        "compare" => commands::cmd_compare(map, manifest),
        "cross-eval" => commands::cmd_cross_eval(map, manifest),
        "oracle" => commands::cmd_oracle(map, manifest),
        "gradcheck" => commands::cmd_gradcheck(map, manifest),
        _ => unreachable!("subcommand validated in parse_args"),
    }
}

fn run() -> i32 {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let parsed = match parse_args(&args) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("{e}");
            return e.exit_code();
        }
    };

    // Resolve the output directory first so even failed runs leave a manifest.
    let out_dir = resolve_out_dir(parsed.out_flag.as_deref(), &parsed.subcommand);
    if let Err(e) = ensure_dir(&out_dir) {
        eprintln!("{e}");
        return e.exit_code();
    }

    let file_map = match &parsed.config_path {
        Some(path) => match std::fs::read_to_string(path) {
            Ok(content) => match config::parse_config_file(&content, path) {
                Ok(map) => Some(map),
                Err(e) => {
                    eprintln!("{e}");
                    let manifest = RunManifest::new(&parsed.subcommand, &BTreeMap::new(), &out_dir);
                    let _ = manifest.finish(e.exit_code());
                    return e.exit_code();
                }
            },
            Err(io) => {
                let e = CliError::Io(format!("reading {path}: {io}"));
                eprintln!("{e}");
                let manifest = RunManifest::new(&parsed.subcommand, &BTreeMap::new(), &out_dir);
                let _ = manifest.finish(e.exit_code());
                return e.exit_code();
            }
        },
        None => None,
    };

    let resolved = match config::resolve(&parsed.subcommand, file_map.as_ref(), &parsed.overrides) {
        Ok(map) => map,
        Err(e) => {
            eprintln!("{e}");
            let manifest = RunManifest::new(&parsed.subcommand, &BTreeMap::new(), &out_dir);
            let _ = manifest.finish(e.exit_code());
            return e.exit_code();
        }
    };

    let mut manifest = RunManifest::new(&parsed.subcommand, &resolved, &out_dir);
    let status = match dispatch(&parsed.subcommand, &resolved, &mut manifest) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    };
    if let Err(e) = manifest.finish(status) {
        eprintln!("{e}");
        return e.exit_code();
    }
    status
}

fn main() -> ExitCode {
    ExitCode::from(u8::try_from(run()).unwrap_or(1))
}
