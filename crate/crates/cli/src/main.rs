//! `adaprop <command> [config-file ...] [key=value ...]`
//!
//! Settings are applied left to right, so later files and assignments win.

mod commands;

use std::process::ExitCode;

use adaprop::config::{Config, KEYS};
use adaprop::Error;

const USAGE: &str = "usage: adaprop <train|eval|analyze|export-path|make-synthetic> [config-file ...] [key=value ...]";

fn help() -> String {
    let mut s = format!("{USAGE}\n\nkeys (default in brackets):\n");
    for k in KEYS {
        s.push_str(&format!("  {:<14} [{}] {}\n", k.name, k.default, k.help));
    }
    s.push_str(
        "\nADAPROP_DATA names the directory that relative `data` values are looked up in.\n",
    );
    s
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Numeric(_) => 3,
        _ => 2,
    }
}

fn build_config(args: &[String]) -> adaprop::Result<Config> {
    let mut config = Config::default();
    for arg in args {
        if arg.contains('=') {
            config.assign(arg)?;
        } else {
            let text = std::fs::read_to_string(arg).map_err(|e| Error::Io {
                path: arg.into(),
                source: e,
            })?;
            config
                .apply_text(&text)
                .map_err(|e| Error::Config(format!("{arg}: {e}")))?;
        }
    }
    Ok(config)
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let Some(command) = args.first() else {
        eprintln!("{USAGE}");
        return ExitCode::from(2);
    };
    if matches!(command.as_str(), "-h" | "--help" | "help") {
        print!("{}", help());
        return ExitCode::SUCCESS;
    }
    let run = build_config(&args[1..]).and_then(|config| match command.as_str() {
        "train" => commands::train(&config),
        "eval" => commands::eval(&config),
        "analyze" => commands::analyze(&config),
        "export-path" => commands::export_path(&config),
        "make-synthetic" => commands::make_synthetic(&config),
        other => Err(Error::Config(format!("unknown command `{other}`\n{USAGE}"))),
    });
    match run {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("adaprop {command}: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
