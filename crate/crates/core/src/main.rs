use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use curvlab::cli::{execute, exit_code, Overrides};
use curvlab::registry;

#[derive(Parser)]
#[command(name = "curvlab", version, about = "Curvature-dimension checks on weighted graphs and segments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        suite: Option<String>,
    },
    /// Inspect built-in instances.
    Registry {
        #[command(subcommand)]
        command: RegistryCommand,
    },
}

#[derive(Subcommand)]
enum RegistryCommand {
    List,
    Dump { name: String },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run { config, seed, out, suite } => {
            let result = execute(&config, &Overrides { seed, out, suite });
            match &result {
                Ok(o) => {
                    for r in &o.report.reports {
                        let status = if r.diagnostic { "DIAG" } else if r.pass { "PASS" } else { "FAIL" };
                        println!("{status} {:<32} {:>12.4e}  {}", r.condition, r.worst_residual, r.witness);
                    }
                }
                Err(e) => eprintln!("error: {e}"),
            }
            exit_code(&result)
        }
        Command::Registry { command: RegistryCommand::List } => {
            for (name, desc) in registry::list() {
                println!("{name:<14} {desc}");
            }
            0
        }
        Command::Registry { command: RegistryCommand::Dump { name } } => match registry::build(&name, None) {
            Ok(inst) => {
                println!("{}", serde_json::to_string_pretty(&inst.dump()).expect("instance serializes"));
                0
            }
            Err(e) => {
                eprintln!("error: {e}");
                2
            }
        },
    };
    ExitCode::from(code as u8)
}
