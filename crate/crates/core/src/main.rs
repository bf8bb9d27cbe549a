use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use epitrace::cep::InfectionDag;
use epitrace::federation::verify_jsonl;
use epitrace::mobility::ScenarioConfig;
use epitrace::runner::{attack_suite, parse_faults, run, RunOptions};

#[derive(Parser)]
#[command(name = "epitrace", version, about = "Quorum-governed contact tracing simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario end to end and write reports into --out.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed in the config file.
        #[arg(long)]
        seed: Option<u64>,
        /// e.g. `vault-byzantine:2,authority-silent:5`
        #[arg(long, default_value = "")]
        faults: String,
    },
    /// Run the adversarial drivers and print the pass/fail matrix.
    AttackSuite {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check the hash chain and signatures of a ledger.jsonl export.
    VerifyLedger { path: PathBuf },
    /// Convert a dag.json artifact to Graphviz DOT.
    ExportDag {
        dag: PathBuf,
        /// Write here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(config: &Path, seed: Option<u64>) -> Result<ScenarioConfig, String> {
    let mut cfg = ScenarioConfig::load(config).map_err(|e| e.to_string())?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cmd: Command) -> Result<bool, String> {
    match cmd {
        Command::Run {
            config,
            out,
            seed,
            faults,
        } => {
            let cfg = load(&config, seed)?;
            let opts = RunOptions {
                faults: parse_faults(&faults)?,
            };
            let outcome = run(&cfg, &opts).map_err(|e| e.to_string())?;
            outcome.write_artifacts(&out).map_err(|e| e.to_string())?;
            print!("{}", outcome.report.summary());
            for v in &outcome.report.violations {
                eprintln!("invariant violated: {v}");
            }
            Ok(outcome.report.ok())
        }
        Command::AttackSuite { config, seed } => {
            let cfg = load(&config, seed)?;
            let matrix = attack_suite(&cfg).map_err(|e| e.to_string())?;
            print!("{}", matrix.table());
            Ok(matrix.all_safe())
        }
        Command::VerifyLedger { path } => {
            let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
            let ok = verify_jsonl(&text);
            println!("{}: {}", path.display(), if ok { "verified" } else { "TAMPERED" });
            Ok(ok)
        }
        Command::ExportDag { dag, out } => {
            let text = std::fs::read_to_string(&dag).map_err(|e| format!("{}: {e}", dag.display()))?;
            let dag: InfectionDag = serde_json::from_str(&text).map_err(|e| e.to_string())?;
            let dot = dag.to_dot();
            match out {
                Some(p) => std::fs::write(&p, dot).map_err(|e| format!("{}: {e}", p.display()))?,
                None => print!("{dot}"),
            }
            Ok(true)
        }
    }
}
