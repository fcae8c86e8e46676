//! `han`: dataset generation, training, evaluation, attention dumps and the
//! gradient self-check for the two-stream hierarchical attention network.
//!
//! Exit codes: 0 success, 1 self-check failure, 2 configuration or input
//! error, 3 numeric runtime failure.

mod commands;
mod config;

use config::RunConfig;
use han_core::Error;

const USAGE: &str = "\
usage: han <command> [--config <file>] [--<key> <value> ...]

commands:
  gen-data        generate a synthetic dataset (HFC1 files + manifest + sidecar)
  train           train a model, writing a metrics CSV and a checkpoint
  eval            evaluate a checkpoint on a manifest (accuracy CSV)
  attention-dump  write one sample's per-frame attention weights as CSV
  gradcheck       compare analytic gradients against finite differences

Configuration uses flat dotted keys (`model.hidden = 64` in the file,
`--model.hidden 64` on the command line; flags win). Keys are listed in the
project README.";

fn run() -> han_core::Result<i32> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.is_empty() || args[0] == "--help" || args[0] == "-h" || args[0] == "help" {
        println!("{USAGE}");
        return Ok(if args.is_empty() { 2 } else { 0 });
    }
    let command = args[0].as_str();

    // `--config <file>` loads first so every other flag overrides it.
    let rest = &args[1..];
    let mut flags: Vec<String> = Vec::new();
    let mut config = RunConfig::default();
    let mut i = 0;
    while i < rest.len() {
        if rest[i] == "--config" {
            let path = rest.get(i + 1).ok_or_else(|| {
                Error::Config("flag `--config` is missing a value".to_string())
            })?;
            config = RunConfig::load(std::path::Path::new(path))?;
            i += 2;
        } else {
            flags.push(rest[i].clone());
            i += 1;
        }
    }
    config.apply_flags(&flags)?;

    match command {
        "gen-data" => commands::cmd_gen_data(&config),
        "train" => commands::cmd_train(&config),
        "eval" => commands::cmd_eval(&config),
        "attention-dump" => commands::cmd_attention_dump(&config),
        "gradcheck" => commands::cmd_gradcheck(&config),
        other => Err(Error::Config(format!(
            "unknown command `{other}`; run `han --help`"
        ))),
    }
}

fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::NonFinite { .. } | Error::NumericFailure(_) => 3,
        _ => 2,
    }
}

fn main() {
    match run() {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(exit_code_for(&e));
        }
    }
}
