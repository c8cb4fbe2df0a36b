use clap::{Parser, Subcommand};

use rankparity_cli::commands;

/// Language-fairness benchmarking for multilingual retrieval: generate
/// synthetic benchmarks, build BM25 indexes, train a dense encoder with
/// alignment losses, run retrieval, and evaluate retrieval quality and
/// cross-language ranking consistency.
#[derive(Parser)]
#[command(name = "rankparity", version, about)]
struct Cli {
    /// Worker threads for the parallel stages (1 = fully sequential).
    /// Outputs are byte-identical regardless of the thread count.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multilingual benchmark.
    Synth(commands::SynthArgs),
    /// Build and persist a BM25 index.
    Index(commands::IndexArgs),
    /// Retrieve and write TREC run files (one per query language).
    Search(commands::SearchArgs),
    /// Train the dense encoder; writes a checkpoint and a CSV log.
    Train(commands::TrainArgs),
    /// Compute retrieval and fairness metrics from run files.
    Eval(commands::EvalArgs),
    /// Bundle eval outputs and training logs into plot-ready CSVs.
    Report(commands::ReportArgs),
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();

    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.max(1))
        .build()
    {
        Ok(pool) => pool,
        Err(e) => {
            eprintln!("error: failed to build thread pool: {e}");
            std::process::exit(1);
        }
    };

    let result = pool.install(|| match &cli.command {
        Command::Synth(args) => commands::cmd_synth(args),
        Command::Index(args) => commands::cmd_index(args),
        Command::Search(args) => commands::cmd_search(args),
        Command::Train(args) => commands::cmd_train(args),
        Command::Eval(args) => commands::cmd_eval(args),
        Command::Report(args) => commands::cmd_report(args),
    });

    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
