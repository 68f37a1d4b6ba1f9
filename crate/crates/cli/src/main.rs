use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gflsim_cli::{cmd_attack, cmd_report, cmd_sweep, cmd_train, CliError, CliResult, ExperimentConfig, RunOptions};

/// Default output root when neither `--out` nor `output.dir` is given.
const OUT_ENV: &str = "GFLSIM_OUT";

#[derive(Parser)]
#[command(
    name = "gflsim",
    version,
    about = "Graph federated learning link reconstruction experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run federated training and persist the global model and traces.
    Train(RunArgs),
    /// Attack a trained run and write scored pairs and the metric report.
    Attack(RunArgs),
    /// Train and attack every cell of `sweep.grid` over the seed list.
    Sweep(RunArgs),
    /// Verify and summarize a run or sweep directory.
    Report { dir: PathBuf },
}

#[derive(Args)]
struct RunArgs {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Run a single seed instead of `evaluation.seeds`.
    #[arg(long)]
    seed: Option<u64>,
    /// Record zero stage timings so repeated runs give identical files.
    #[arg(long)]
    deterministic: bool,
    /// Output root; overrides `output.dir` and $GFLSIM_OUT.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

impl RunArgs {
    fn resolve(&self) -> CliResult<(ExperimentConfig, RunOptions)> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.evaluation.seeds = vec![seed];
        }
        let out_root = self
            .out
            .clone()
            .or_else(|| cfg.output.dir.clone())
            .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("gflsim-runs"));
        let opts = RunOptions {
            out_root,
            deterministic: self.deterministic,
            workers: self.workers,
        };
        Ok((cfg, opts))
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train(args) => {
            let (cfg, opts) = args.resolve()?;
            for dir in cmd_train(&cfg, &opts)? {
                println!("trained {}", dir.display());
            }
        }
        Command::Attack(args) => {
            let (cfg, opts) = args.resolve()?;
            for (dir, r) in cmd_attack(&cfg, &opts)? {
                println!(
                    "attacked {}: auc {:.4} ap {:.4} acc {:.4}",
                    dir.display(),
                    r.attack_auc,
                    r.attack_ap,
                    r.main_acc
                );
            }
        }
        Command::Sweep(args) => {
            let (cfg, opts) = args.resolve()?;
            let table = cmd_sweep(&cfg, &opts)?;
            let failed: usize = table
                .cells
                .iter()
                .map(|c| c.runs.iter().filter(|(_, r)| r.is_err()).count())
                .sum();
            println!("swept {} cells into {}", table.cells.len(), table.dir.display());
            if failed > 0 {
                eprintln!("warning: {failed} runs failed; see sweep.csv");
            }
        }
        Command::Report { dir } => {
            let summary = cmd_report(&dir)?;
            print!("{}", summary.text);
            for w in &summary.warnings {
                eprintln!("warning: {w}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ CliError { .. }) => {
            eprintln!("error[{}]: {}", e.stage, e.message);
            ExitCode::from(e.exit_code())
        }
    }
}
