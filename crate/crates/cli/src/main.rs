//! `ocflow` command-line driver. Every RunConfig key is also a flag
//! (`batch_size` becomes `--batch-size`); values are TOML literals.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Arg, ArgAction, ArgMatches, Command};
use ocflow::harness::{run_phase, Phase, RunConfig, OUTPUT_ROOT_VAR};

const PHASES: [Phase; 6] = [
    Phase::Pretrain,
    Phase::Finetune,
    Phase::Convert,
    Phase::Eval,
    Phase::OracleCheck,
    Phase::Mcmc,
];

fn about(phase: Phase) -> &'static str {
    match phase {
        Phase::Pretrain => "Reward-free outcome-conditioned pre-training",
        Phase::Finetune => "Downstream training (amortized conversion or from-scratch TB)",
        Phase::Convert => "Exact conversion of a pre-trained model and sampling L1 report",
        Phase::Eval => "Success rate of a pre-trained model",
        Phase::OracleCheck => "Exact checks with analytic conditional flows",
        Phase::Mcmc => "Metropolis-Hastings baseline",
    }
}

fn flag(key: &str) -> String {
    key.replace('_', "-")
}

fn command() -> Command {
    let mut root = Command::new("ocflow")
        .about("Outcome-conditioned GFlowNet pre-training and downstream adaptation")
        .after_help(format!(
            "Relative output directories are placed under ${OUTPUT_ROOT_VAR} when set."
        ))
        .subcommand_required(true)
        .arg_required_else_help(true);
    for phase in PHASES {
        let mut sub = Command::new(phase.name())
            .about(about(phase))
            .arg(
                Arg::new("config")
                    .long("config")
                    .short('c')
                    .value_name("FILE")
                    .value_parser(clap::value_parser!(PathBuf))
                    .help("Flat TOML config; flags override its keys"),
            )
            .arg(
                Arg::new("print-defaults")
                    .long("print-defaults")
                    .action(ArgAction::SetTrue)
                    .help("Print the resolved config as TOML and exit"),
            );
        for key in RunConfig::keys().into_iter().filter(|k| k != "phase") {
            sub = sub.arg(
                Arg::new(key.clone())
                    .long(flag(&key))
                    .value_name("VALUE")
                    .help(format!("Config key `{key}`")),
            );
        }
        root = root.subcommand(sub);
    }
    root
}

fn resolve(phase: Phase, m: &ArgMatches) -> Result<RunConfig, String> {
    let mut table = match m.get_one::<PathBuf>("config") {
        Some(path) => std::fs::read_to_string(path)
            .map_err(|e| format!("{}: {e}", path.display()))?
            .parse::<toml::Table>()
            .map_err(|e| format!("{}: {e}", path.display()))?,
        None => toml::Table::new(),
    };
    table.insert("phase".into(), toml::Value::String(phase.name().into()));
    let overrides: Vec<(String, String)> = RunConfig::keys()
        .into_iter()
        .filter(|k| k != "phase")
        .filter_map(|k| m.get_one::<String>(&k).map(|v| (k.clone(), v.clone())))
        .collect();
    RunConfig::from_table(table, &overrides).map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let matches = command().get_matches();
    let (name, sub) = matches.subcommand().expect("subcommand required");
    let phase = PHASES
        .into_iter()
        .find(|p| p.name() == name)
        .expect("known phase");
    let config = match resolve(phase, sub) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if sub.get_flag("print-defaults") {
        match config.to_toml() {
            Ok(text) => {
                print!("{text}");
                return ExitCode::SUCCESS;
            }
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
        }
    }
    match run_phase(&config) {
        Ok(summary) => {
            for r in &summary.reports {
                println!("{r}");
            }
            for s in &summary.seeds {
                let status = if s.passed { "ok" } else { "FAILED" };
                println!("seed {} {status}: {}", s.seed, s.metrics_file.display());
                for note in &s.notes {
                    println!("  {note}");
                }
            }
            println!(
                "summary: {}",
                summary.output_dir.join("summary.json").display()
            );
            if summary.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
