//! Library surface of the `rankparity` command-line tool.
//!
//! Each subcommand is an ordinary function over a typed argument struct so
//! pipelines can run in-process (the integration and acceptance tests do
//! exactly that).

pub mod commands;

pub use commands::{
    cmd_eval, cmd_index, cmd_report, cmd_search, cmd_synth, cmd_train, EvalArgs, IndexArgs,
    LossKind, RankerKind, ReportArgs, SearchArgs, SynthArgs, TrainArgs,
};
