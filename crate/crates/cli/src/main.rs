use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use precond_lab::config::{resolve_seed, seed_from_env, split_list, ExperimentConfig};
use precond_lab::diagnose::cmd_diagnose;
use precond_lab::experiment::cmd_train;
use precond_lab::sweep::{cmd_sweep, parse_alphas};
use precond_lab::verify::{run_selection, DEFAULT_SEED};
use precond_lab::{CliError, CliResult, Experiment};

const DEFAULT_OUTPUT: &str = "precond-lab-out";

#[derive(Parser)]
#[command(
    name = "precond-lab",
    version,
    about = "Preconditioned gradient descent laboratory"
)]
struct Cli {
    /// Seed; overrides PRECOND_LAB_SEED and the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Condition numbers of the extended data matrix under preprocessing.
    Diagnose {
        /// CSV path or `synthetic:features=3,scales=1;1000,...`.
        #[arg(long)]
        data: String,
        /// Target columns (names or 0-based indices) to leave out.
        #[arg(long)]
        targets: Option<String>,
    },
    /// Train once; writes steps.csv and summary.json.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides output.dir.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Train once per learning rate and report the best.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated learning rates.
        #[arg(long)]
        alphas: String,
    },
    /// Run a verification suite, or `all`.
    Verify { suite: String },
}

fn load_config(path: &std::path::Path, flag: Option<u64>) -> CliResult<ExperimentConfig> {
    let cfg = ExperimentConfig::from_file(path)?;
    let seed = resolve_seed(flag, seed_from_env().as_deref(), cfg.seed)?;
    Ok(cfg.with_seed(seed))
}

fn execute(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Diagnose { data, targets } => {
            let targets: Vec<String> = targets
                .as_deref()
                .map(|t| split_list(t).map(str::to_string).collect())
                .unwrap_or_default();
            let env = seed_from_env();
            let seed = match (cli.seed, env.as_deref()) {
                (None, None) => None,
                (flag, env) => Some(resolve_seed(flag, env, 0)?),
            };
            print!("{}", cmd_diagnose(&data, &targets, seed)?);
        }
        Command::Train { config, output } => {
            let cfg = load_config(&config, cli.seed)?;
            let dir = output
                .or_else(|| cfg.output_dir.clone())
                .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT));
            let summary = cmd_train(cfg, &dir)?;
            println!(
                "final loss {:.6e} after {} steps; wrote {}",
                summary.final_loss,
                summary.steps,
                dir.display()
            );
        }
        Command::Sweep { config, alphas } => {
            let alphas = parse_alphas(&alphas)?;
            let cfg = load_config(&config, cli.seed)?;
            let out_dir = cfg.output_dir.clone();
            let exp = Experiment::build(cfg)?;
            let report = cmd_sweep(&exp, &alphas)?;
            print!("{report}");
            if let Some(dir) = out_dir {
                std::fs::create_dir_all(&dir)?;
                report.write_csv(std::fs::File::create(dir.join("sweep.csv"))?)?;
            }
        }
        Command::Verify { suite } => {
            let seed = resolve_seed(cli.seed, seed_from_env().as_deref(), DEFAULT_SEED)?;
            let reports = run_selection(&suite, seed)?;
            let mut failed = Vec::new();
            for r in &reports {
                print!("{r}");
                if !r.passed() {
                    failed.push(r.name);
                }
            }
            let passed = reports.len() - failed.len();
            println!("{passed}/{} suites passed", reports.len());
            if !failed.is_empty() {
                return Err(CliError::Verification(failed.join(", ")));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
