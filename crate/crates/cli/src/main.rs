//! `seqedit` command-line driver.
//!
//! Exit codes: 0 success, 1 I/O error, 2 validation error.

mod bench;
mod ckpt;
mod output;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "seqedit", version, about = "Sequential task-vector model editing")]
struct Cli {
    /// Print the fully resolved run configuration as JSON and exit.
    #[arg(long, global = true)]
    print_config: bool,

    /// JSON run configuration; omitted keys take their defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Master seed; overrides the config's `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Checkpoint arithmetic.
    #[command(subcommand)]
    Ckpt(CkptCommand),
    /// Toy benchmark runs.
    #[command(subcommand)]
    Bench(BenchCommand),
    /// Parameter sweeps.
    #[command(subcommand)]
    Sweep(SweepCommand),
    /// Render tables from a bench output directory.
    #[command(subcommand)]
    Report(ReportCommand),
}

#[derive(Subcommand)]
enum CkptCommand {
    /// Task vector `minuend - subtrahend`.
    Diff {
        #[arg(long)]
        minuend: PathBuf,
        #[arg(long)]
        subtrahend: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Keep the top-k fraction of a task vector by magnitude.
    Trim {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        k: f64,
        #[arg(long, value_enum, default_value_t = Scope::Global)]
        scope: Scope,
        #[arg(long)]
        out: PathBuf,
    },
    /// `base + lambda * tau`.
    Apply {
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        tau: PathBuf,
        #[arg(long, default_value_t = 0.4)]
        lambda: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Size, sparsity and digest of a checkpoint.
    Stats {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Scope {
    Global,
    PerTensor,
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Run the sequential benchmark for a set of methods.
    Run(BenchRun),
}

#[derive(Args)]
struct BenchRun {
    #[arg(long, value_name = "DIR")]
    out_dir: Option<PathBuf>,
    /// Comma-separated subset of finetune, task-arith, ties, uoe, clrl,
    /// multitask, separate.
    #[arg(long, value_delimiter = ',', default_value = "finetune,task-arith,ties,uoe,clrl,multitask,separate")]
    methods: Vec<String>,
}

#[derive(Subcommand)]
enum SweepCommand {
    /// Apply one stage's task vector at every lambda in a grid.
    Lambda {
        #[arg(long, default_value_t = 2)]
        stage: usize,
        #[arg(long, value_delimiter = ',', default_value = "0,0.2,0.4,0.6,0.8,1.0")]
        grid: Vec<f64>,
        /// Write the CSV here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum ReportCommand {
    /// Final-stage comparison table.
    Table(ReportArgs),
    /// AWER per stage and method, long format.
    Curve(ReportArgs),
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long = "in", value_name = "DIR")]
    input: PathBuf,
    #[arg(long, value_enum, default_value_t = ReportFormat::Csv)]
    format: ReportFormat,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Csv,
    Md,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let io = err.chain().any(|cause| {
        cause.downcast_ref::<std::io::Error>().is_some()
            || cause.downcast_ref::<seqedit::Error>().is_some_and(seqedit::Error::is_io)
    });
    if io {
        1
    } else {
        2
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    let mut config = bench::load_config(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if cli.print_config {
        println!("{}", config.to_json_pretty());
        return Ok(());
    }
    match cli.command {
        None => anyhow::bail!(output::Usage("no command given; see --help".into())),
        Some(Command::Ckpt(cmd)) => match cmd {
            CkptCommand::Diff { minuend, subtrahend, out } => ckpt::diff(&minuend, &subtrahend, &out),
            CkptCommand::Trim { input, k, scope, out } => ckpt::trim(&input, k, scope, &out),
            CkptCommand::Apply { base, tau, lambda, out } => ckpt::apply(&base, &tau, lambda, &out),
            CkptCommand::Stats { input, json } => ckpt::stats(&input, json),
        },
        Some(Command::Bench(BenchCommand::Run(args))) => {
            let out_dir = args
                .out_dir
                .ok_or_else(|| output::Usage("bench run needs --out-dir".into()))?;
            bench::run(&config, &out_dir, &args.methods)
        }
        Some(Command::Sweep(SweepCommand::Lambda { stage, grid, out })) => {
            bench::sweep(&config, stage, &grid, out.as_deref())
        }
        Some(Command::Report(cmd)) => match cmd {
            ReportCommand::Table(a) => report::table(&a.input, a.format),
            ReportCommand::Curve(a) => report::curve(&a.input, a.format),
        },
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
