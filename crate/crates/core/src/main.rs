use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use l2o::config::{parse_entries, Command, Entry, RunConfig};
use l2o::optimizee::DATA_ROOT_ENV;
use l2o::run::{dispatch, RunError};

#[derive(Parser)]
#[command(
    name = "l2o",
    version,
    about = "Meta-train and evaluate learned optimizers"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Meta-train a learned optimizer.
    Train(Flags),
    /// Evaluate one optimizer over the evaluation seeds.
    Eval(Flags),
    /// Evaluate several optimizers and tabulate them.
    Compare(Flags),
    /// Run the finite-difference gradient checks.
    Gradcheck(Flags),
}

#[derive(Args)]
#[command(after_help = format!(
    "MNIST files are read from `data_root` or, if unset, from ${DATA_ROOT_ENV}."
))]
struct Flags {
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// vanilla, aug, cl, il, cl-il or self-improving.
    #[arg(long)]
    mode: Option<String>,
    /// desk or paper.
    #[arg(long)]
    profile: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<String>,
    /// Learned-optimizer checkpoint for eval/compare.
    #[arg(long)]
    checkpoint: Option<String>,
    /// Any other config key, as `key=value`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn overrides(command: Command, flags: &Flags) -> Result<Vec<Entry>, String> {
    let entry = |key: &str, value: &str| Entry {
        key: key.to_string(),
        value: value.to_string(),
        line: 0,
    };
    let mut out = vec![entry("command", command.as_str())];
    for (key, value) in [
        ("mode", &flags.mode),
        ("profile", &flags.profile),
        ("seed", &flags.seed),
        ("out", &flags.out),
        ("checkpoint", &flags.checkpoint),
    ] {
        if let Some(v) = value {
            out.push(entry(key, v));
        }
    }
    for kv in &flags.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| format!("--set expects KEY=VALUE, got `{kv}`"))?;
        let k = k.trim();
        if !l2o::config::KEYS.contains(&k) {
            return Err(format!("unknown key `{k}` in --set"));
        }
        out.push(entry(k, v.trim()));
    }
    Ok(out)
}

fn load(command: Command, flags: &Flags) -> Result<RunConfig, String> {
    let file = match &flags.config {
        Some(path) => {
            let text =
                std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
            parse_entries(&text).map_err(|e| format!("{}: {e}", path.display()))?
        }
        None => Vec::new(),
    };
    RunConfig::from_entries(&file, &overrides(command, flags)?).map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, flags) = match &cli.command {
        Cmd::Train(f) => (Command::Train, f),
        Cmd::Eval(f) => (Command::Eval, f),
        Cmd::Compare(f) => (Command::Compare, f),
        Cmd::Gradcheck(f) => (Command::Gradcheck, f),
    };
    let cfg = match load(command, flags) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match dispatch(&cfg) {
        Ok(manifest) => {
            // Output errors (a closed pipe, say) do not change the outcome.
            let mut stdout = std::io::stdout().lock();
            let echo = match command {
                Command::Gradcheck => Some("gradcheck.csv"),
                Command::Compare => Some("comparison.txt"),
                _ => None,
            };
            if let Some(text) = echo.and_then(|f| std::fs::read_to_string(cfg.out.join(f)).ok()) {
                let _ = write!(stdout, "{text}");
            }
            for (path, _) in &manifest.artifacts {
                let _ = writeln!(stdout, "wrote {}", cfg.out.join(path).display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            if let RunError::Gradcheck(_) = e {
                if let Ok(csv) = std::fs::read_to_string(cfg.out.join("gradcheck.csv")) {
                    eprint!("{csv}");
                }
            }
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
