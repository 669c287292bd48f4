use std::path::{Path, PathBuf};
use std::process::ExitCode;

use biflow::experiment::config::{ConfigMap, Format};
use biflow::experiment::report::compare_golden;
use biflow::experiment::{list_experiments, load_config, run_experiment};
use biflow::Error;
use clap::Parser;

/// Runs named two-phase flow experiments and writes their reports.
#[derive(Parser, Debug)]
#[command(name = "biflow", version)]
struct Cli {
    /// Experiment name, or `all` to run the whole registry into per-experiment
    /// subdirectories of the output directory.
    #[arg(long, short)]
    experiment: Option<String>,
    /// Configuration file of `key = value` lines.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Output directory (overrides `out_dir`).
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Report format (overrides `format`).
    #[arg(long, value_parser = ["csv", "json"])]
    format: Option<String>,
    /// Extra `key=value` settings, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Compare the written outputs with a golden directory.
    #[arg(long)]
    golden: Option<PathBuf>,
    /// List the registered experiments and exit.
    #[arg(long)]
    list: bool,
}

const EXIT_MISMATCH: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_IO: u8 = 3;

fn exit_for(e: &Error) -> ExitCode {
    eprintln!("biflow: {e}");
    ExitCode::from(match e {
        Error::Io(_) => EXIT_IO,
        _ => EXIT_CONFIG,
    })
}

fn configure_threads() -> Result<(), Error> {
    let Ok(v) = std::env::var("BIFLOW_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("BIFLOW_THREADS must be a non-negative integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn overrides(cli: &Cli) -> Result<ConfigMap, Error> {
    let mut m = ConfigMap::new();
    for kv in &cli.set {
        let Some((k, v)) = kv.split_once('=') else {
            return Err(Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")));
        };
        m.insert(k.trim().into(), v.trim().into());
    }
    if let Some(d) = &cli.out_dir {
        m.insert("out_dir".into(), d.display().to_string());
    }
    if let Some(f) = &cli.format {
        Format::parse(f)?;
        m.insert("format".into(), f.clone());
    }
    Ok(m)
}

/// Runs one experiment; returns whether its golden comparison (if any) passed.
fn run_one(name: Option<&str>, text: &str, set: &ConfigMap, golden: Option<&Path>) -> Result<bool, Error> {
    let cfg = load_config(name, text, set)?;
    let report = run_experiment(&cfg)?;
    print!("{}", report.summary());
    println!("  outputs: {}", cfg.out_dir.display());
    let Some(g) = golden else {
        return Ok(true);
    };
    let outcome = compare_golden(&cfg.out_dir, g)?;
    match &outcome.first_diff {
        None => println!("  golden: match"),
        Some(d) => println!("  golden: MISMATCH {d}"),
    }
    Ok(outcome.pass)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.list {
        for e in list_experiments() {
            println!("{:<24} {}", e.name, e.description);
        }
        return ExitCode::SUCCESS;
    }
    if let Err(e) = configure_threads() {
        return exit_for(&e);
    }
    let text = match &cli.config {
        Some(p) => match std::fs::read_to_string(p) {
            Ok(t) => t,
            Err(e) => return exit_for(&Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", p.display())))),
        },
        None => String::new(),
    };
    let set = match overrides(&cli) {
        Ok(s) => s,
        Err(e) => return exit_for(&e),
    };
    let result = if cli.experiment.as_deref() == Some("all") {
        let root = cli.out_dir.clone().unwrap_or_else(|| PathBuf::from("biflow-out"));
        let mut all = true;
        for e in list_experiments() {
            let mut s = set.clone();
            s.insert("out_dir".into(), root.join(e.name).display().to_string());
            let g = cli.golden.as_ref().map(|g| g.join(e.name));
            match run_one(Some(e.name), &text, &s, g.as_deref()) {
                Ok(ok) => all &= ok,
                Err(err) => return exit_for(&err),
            }
        }
        Ok(all)
    } else if cli.experiment.is_none() && cli.config.is_none() {
        Err(Error::Config("name an experiment with --experiment or --config (see --list)".into()))
    } else {
        run_one(cli.experiment.as_deref(), &text, &set, cli.golden.as_deref())
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_MISMATCH),
        Err(e) => exit_for(&e),
    }
}
