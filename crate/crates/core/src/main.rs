use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lattice_hpo::cli::{self, Overrides, RunOutcome};
use lattice_hpo::Error;

/// Surrogate-based hyperparameter optimization over integer lattices.
#[derive(Parser)]
#[command(
    name = "lattice-hpo",
    version,
    after_help = "Relative output directories resolve against $LATTICE_HPO_OUT when set.\n\
                  Exit status: 0 success, 1 invalid input, 2 runtime failure."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Start a new optimization run.
    Run(RunArgs),
    /// Continue a run from its checkpoint.
    Resume(ResumeArgs),
    /// Compare surrogate search with random search over several seeds.
    Compare(RunArgs),
    /// Write convergence, scatter and summary tables for an evaluation log.
    Report(ReportArgs),
    /// List the built-in benchmarks.
    Benchmarks,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    /// Use simulated durations instead of wall-clock execution.
    #[arg(long)]
    simulate: bool,
    /// Stop after this many completions, leaving a resumable checkpoint.
    #[arg(long, hide = true)]
    stop_after: Option<usize>,
}

#[derive(Args)]
struct ResumeArgs {
    #[arg(long, value_name = "PATH")]
    checkpoint: PathBuf,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, hide = true)]
    stop_after: Option<usize>,
}

#[derive(Args)]
struct ReportArgs {
    /// Evaluation log, or a run directory containing one.
    log: PathBuf,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            out: self.out.clone(),
            seed: self.seed,
            workers: self.workers,
            simulate: self.simulate,
            stop_after: self.stop_after,
        }
    }
}

fn print_outcome(outcome: &RunOutcome) {
    println!("output: {}", outcome.out_dir.display());
    println!("completed evaluations: {}", outcome.completed);
    if let Some(inc) = &outcome.incumbent {
        println!("incumbent: eval {} at {} with value {}", inc.eval_id, inc.point, inc.value);
    }
    match &outcome.report {
        Some(report) => println!("pareto set: {} record(s)", report.pareto.len()),
        None => println!(
            "stopped early; continue with `lattice-hpo resume --checkpoint {}`",
            outcome.out_dir.join(cli::CHECKPOINT_FILE).display()
        ),
    }
}

fn execute(command: Command) -> lattice_hpo::Result<()> {
    match command {
        Command::Run(args) => print_outcome(&cli::cmd_run(&args.config, &args.overrides())?),
        Command::Resume(args) => {
            let overrides = Overrides {
                out: args.out,
                workers: args.workers,
                stop_after: args.stop_after,
                ..Overrides::default()
            };
            print_outcome(&cli::cmd_resume(&args.checkpoint, &overrides)?)
        }
        Command::Compare(args) => {
            let outcome = cli::cmd_compare(&args.config, &args.overrides())?;
            let c = &outcome.comparison;
            println!("output: {}", outcome.out_dir.display());
            println!("threshold: {} (budget {}, {} seeds)", c.threshold, c.budget, c.seeds.len());
            for (name, s) in [("surrogate", &c.surrogate), ("random", &c.random)] {
                println!(
                    "{name}: median {:.1} [IQR {:.1} to {:.1}], reached {}/{}",
                    s.median,
                    s.lower_quartile,
                    s.upper_quartile,
                    s.reached,
                    c.seeds.len()
                );
            }
            println!("median ratio: {:.3}", c.ratio);
        }
        Command::Report(args) => {
            let (dir, summary) = cli::cmd_report(&args.log, args.out.as_deref())?;
            if let Some(w) = &summary.warning {
                eprintln!("warning: {w}");
            }
            println!("output: {}", dir.display());
            println!("records: {} ({} failed)", summary.records, summary.failed);
            if let Some(inc) = &summary.incumbent {
                println!("incumbent: eval {} at {} with loss {}", inc.eval_id, inc.point, inc.loss);
            }
            println!("pareto set: {} record(s)", summary.pareto.len());
        }
        Command::Benchmarks => print!("{}", cli::cmd_benchmarks()),
    }
    Ok(())
}

fn exit_code(error: &Error) -> u8 {
    match error {
        Error::InvalidConfig(_)
        | Error::InvalidArgument(_)
        | Error::InvalidSpace(_)
        | Error::UnknownBenchmark(_)
        | Error::DimensionMismatch { .. }
        | Error::Parse { .. } => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
