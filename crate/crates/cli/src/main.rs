use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use defl_core::harness::{emit_csv, emit_summary, run_experiment, scenario_table, ExperimentConfig, SCENARIOS};

#[derive(Parser)]
#[command(name = "defl", version, about = "Decentralized federated learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment config and write its per-round CSV.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Run only this seed instead of the config's seed list.
        #[arg(long)]
        seed: Option<u64>,
        /// Output CSV; defaults to the config's `output` field.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a named sweep: one CSV per config plus summary.csv.
    Scenario {
        #[arg(long)]
        name: String,
        #[arg(long)]
        out_dir: PathBuf,
        /// Use only the first N seeds of every config.
        #[arg(long)]
        seeds: Option<usize>,
    },
    /// Check a config without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print the JSON config of a scenario entry.
    Config {
        #[arg(long)]
        name: String,
        #[arg(long, default_value_t = 0)]
        index: usize,
    },
}

fn run(config: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<(), String> {
    let mut cfg = ExperimentConfig::load(config).map_err(|e| e.to_string())?;
    if let Some(s) = seed {
        cfg.seeds = vec![s];
    }
    let out = out
        .or_else(|| cfg.output.clone())
        .ok_or("no output path: pass --out or set `output` in the config")?;
    let exp = run_experiment(&cfg).map_err(|e| e.to_string())?;
    emit_csv(&exp.records(), &out).map_err(|e| e.to_string())?;
    let s = &exp.summary;
    let acc = s
        .accuracy
        .map(|a| format!("accuracy {:.4} ± {:.4}", a.mean, a.std))
        .unwrap_or_else(|| format!("grad_norm {:.3e}", s.grad_norm.mean));
    println!("{}: {} seeds, {acc} -> {}", cfg.name, s.seeds, out.display());
    Ok(())
}

fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "+-_.".contains(c) { c } else { '_' })
        .collect()
}

fn scenario(name: &str, out_dir: &Path, seeds: Option<usize>) -> Result<(), String> {
    let configs = scenario_table(name).map_err(|e| e.to_string())?;
    std::fs::create_dir_all(out_dir).map_err(|e| format!("{}: {e}", out_dir.display()))?;
    let mut rows = Vec::new();
    let mut failed = 0;
    for mut cfg in configs {
        if let Some(k) = seeds {
            if k == 0 {
                return Err("--seeds must be positive".into());
            }
            cfg.seeds.truncate(k);
        }
        let path = out_dir.join(format!("{}.csv", file_stem(&cfg.name)));
        match run_experiment(&cfg).and_then(|exp| {
            emit_csv(&exp.records(), &path)?;
            Ok(exp.summary)
        }) {
            Ok(summary) => {
                println!("{} -> {}", cfg.name, path.display());
                rows.push((summary, "ok".to_string()));
            }
            Err(e) => {
                eprintln!("{}: {e}", cfg.name);
                failed += 1;
            }
        }
    }
    if !rows.is_empty() {
        emit_summary(&rows, &out_dir.join("summary.csv")).map_err(|e| e.to_string())?;
    }
    if failed > 0 {
        return Err(format!("{failed} config(s) failed"));
    }
    Ok(())
}

fn validate(config: &Path) -> Result<(), String> {
    let cfg = ExperimentConfig::load(config).map_err(|e| e.to_string())?;
    let s = &cfg.system;
    println!(
        "ok: {} (n={}, f={}, d={}, rounds={}, rule={}, attack={}, {} seeds)",
        cfg.name,
        s.n,
        s.f,
        s.d,
        s.rounds,
        cfg.rule,
        cfg.attack.kind.as_str(),
        cfg.seeds.len()
    );
    Ok(())
}

fn print_config(name: &str, index: usize) -> Result<(), String> {
    let configs = scenario_table(name).map_err(|e| e.to_string())?;
    let cfg = configs
        .get(index)
        .ok_or_else(|| format!("{name} has {} configs; index {index} is out of range", configs.len()))?;
    println!("{}", cfg.to_json());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, seed, out } => run(&config, seed, out),
        Command::Scenario { name, out_dir, seeds } => scenario(&name, &out_dir, seeds),
        Command::Validate { config } => validate(&config),
        Command::Config { name, index } => print_config(&name, index),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.starts_with("unknown scenario") {
                eprintln!("scenarios: {}", SCENARIOS.join(", "));
            }
            ExitCode::FAILURE
        }
    }
}
