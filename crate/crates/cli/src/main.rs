use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use moarr_core::error::Error;
use moarr_core::harness::{self, RunSpec};

#[derive(Parser)]
#[command(name = "moarr", version, about = "Multi-objective architecture search on synthetic benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every replicate described by a TOML run spec.
    Search {
        spec: PathBuf,
        /// Replace existing replicate directories.
        #[arg(long)]
        overwrite: bool,
    },
    /// Per-iteration hypervolume table and win/tie/loss summary for logs.
    Compare {
        #[arg(required = true)]
        logs: Vec<PathBuf>,
        #[arg(long = "p-max")]
        p_max: Option<f64>,
        /// Catalog the logged codes refer to; defaults to the bundled one.
        #[arg(long)]
        catalog: Option<PathBuf>,
    },
    /// Canonical form, widths and cost estimates of one code.
    Inspect {
        code: String,
        #[arg(long)]
        catalog: Option<PathBuf>,
        /// TOML file of cost constants.
        #[arg(long = "cost-model")]
        cost_model: Option<PathBuf>,
    },
}

fn report(err: &Error, source: Option<&Path>) -> ExitCode {
    match (err, source) {
        (Error::Parse { line: Some(l), message }, Some(p)) => eprintln!("error: {}:{l}: {message}", p.display()),
        _ => eprintln!("error: {err}"),
    }
    ExitCode::from(harness::exit_code(err) as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Search { spec, overwrite } => {
            let run = match RunSpec::load(&spec) {
                Ok(r) => r,
                Err(e) => return report(&e, Some(&spec)),
            };
            match harness::cmd_search(&run, overwrite) {
                Ok(outputs) => {
                    for o in outputs {
                        println!(
                            "seed {}: {} evaluations, hypervolume {:.6} -> {}",
                            o.seed,
                            o.evaluations,
                            o.hypervolume,
                            o.dir.display()
                        );
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => report(&e, None),
            }
        }
        Command::Compare { logs, p_max, catalog } => {
            let result = harness::load_catalog(catalog.as_deref())
                .and_then(|cat| harness::cmd_compare(&logs, p_max, &cat));
            match result {
                Ok(cmp) => {
                    print!("{}\n{}", cmp.table_csv(), cmp.summary());
                    ExitCode::SUCCESS
                }
                Err(e) => report(&e, None),
            }
        }
        Command::Inspect {
            code,
            catalog,
            cost_model,
        } => {
            let result = harness::load_catalog(catalog.as_deref()).and_then(|cat| {
                let cost = harness::load_cost_constants(cost_model.as_deref())?;
                harness::cmd_inspect(&code, Arc::new(cat), cost)
            });
            match result {
                Ok(ins) => {
                    print!("{}", ins.render());
                    ExitCode::SUCCESS
                }
                Err(e) => report(&e, None),
            }
        }
    }
}
