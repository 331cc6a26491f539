mod args;
mod commands;

use std::fs;
use std::path::Path;
use std::process::ExitCode;

use clap::{CommandFactory, Parser};
use serde_json::Value;

use args::{Cli, Command, Format};
use commands::{Body, CliError, CliResult};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}\n\n{}", Cli::command().render_usage());
            ExitCode::from(2)
        }
        Err(CliError::Op(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

/// Reads a recorded run: either a bare command object or any output carrying it under `run`.
fn load_run(path: &Path) -> CliResult<Command> {
    let text =
        fs::read_to_string(path).map_err(|e| CliError::Op(format!("{}: {e}", path.display())))?;
    let mut value: Value = serde_json::from_str(&text)?;
    if let Some(run) = value.get_mut("run") {
        value = run.take();
    }
    serde_json::from_value(value)
        .map_err(|e| CliError::Op(format!("{}: not a run config: {e}", path.display())))
}

fn run(cli: Cli) -> CliResult<u8> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Op(e.to_string()))?;
    }
    let command = match (cli.config, cli.command) {
        (Some(path), None) => load_run(&path)?,
        (None, Some(command)) => command,
        (Some(_), Some(_)) => {
            return Err(CliError::Usage(
                "--config replaces the subcommand; give one or the other".into(),
            ))
        }
        (None, None) => return Err(CliError::Usage("no subcommand given".into())),
    };
    if cli.csv.is_some() && !matches!(command, Command::BenchRobustness(_)) {
        return Err(CliError::Usage(format!(
            "{} produces no curve data for --csv",
            command.name()
        )));
    }

    let outcome = commands::execute(&command)?;
    let run = serde_json::to_value(&command)?;
    let (stdout, json) = match outcome.body {
        Body::Json(mut value, table) => {
            if let Value::Object(map) = &mut value {
                map.insert("run".into(), run);
            }
            let json = serde_json::to_string_pretty(&value)?;
            let shown = match cli.format {
                Format::Json => json.clone(),
                Format::Table => table.unwrap_or_else(|| flat_table(&value)),
            };
            (shown, json)
        }
        Body::Text(text) => {
            let json =
                serde_json::to_string_pretty(&serde_json::json!({"value": text, "run": run}))?;
            (text, json)
        }
    };
    println!("{}", stdout.trim_end());
    if let Some(path) = &cli.report {
        fs::write(path, json + "\n")?;
    }
    if let (Some(path), Some(csv)) = (&cli.csv, &outcome.csv) {
        fs::write(path, csv)?;
    }
    Ok(outcome.exit)
}

/// Two aligned columns of top-level fields; nested values stay compact JSON.
fn flat_table(value: &Value) -> String {
    let Value::Object(map) = value else {
        return value.to_string();
    };
    let width = map.keys().map(String::len).max().unwrap_or(0);
    map.iter()
        .filter(|(k, _)| k.as_str() != "run")
        .map(|(k, v)| {
            let shown = match v {
                Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            format!("{k:<width$}  {shown}\n")
        })
        .collect()
}
