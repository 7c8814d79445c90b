//! `epics-anomaly`: parse, analyse, train on and score EPICS event logs.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand};
use epics_anomaly::event_log::Timestamp;
use epics_anomaly::pipeline::TokenizerMode;

#[derive(Debug, Parser)]
#[command(name = "epics-anomaly", version, about = "Anomaly scoring for EPICS event-logger streams")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate and filter an event log; writes the accepted events in canonical form.
    Parse(ParseArgs),
    /// Export the PV-name token flow graph as Sankey JSON.
    Sankey(SankeyArgs),
    /// Train embeddings and the sequence detector; writes a model bundle.
    Train(TrainArgs),
    /// Score every event of a log (or standard input) against a model bundle.
    Score(ScoreArgs),
    /// Generate a labeled synthetic event log.
    Synth(SynthArgs),
    /// Compare a score CSV with a labels CSV.
    Eval(EvalArgs),
    /// Export a bundle's token embeddings as CSV.
    Embeddings(EmbeddingsArgs),
}

fn parse_tokenizer(s: &str) -> Result<TokenizerMode, String> {
    match s {
        "event" => Ok(TokenizerMode::Event),
        "grammar" => Ok(TokenizerMode::Grammar),
        "grammar_strip_numbers" | "grammar-strip-numbers" => Ok(TokenizerMode::GrammarStripNumbers),
        _ => Err("expected event, grammar or grammar_strip_numbers".into()),
    }
}

#[derive(Debug, Args)]
struct ParseArgs {
    /// Event log to read; `-` reads standard input.
    #[arg(long)]
    input: String,
    /// PV filter file: one exact name or `*`/`?` glob per line, `#` comments.
    #[arg(long)]
    filter: Option<PathBuf>,
    /// Where to write accepted events; `-` is standard output.
    #[arg(long, visible_alias = "out", default_value = "-")]
    output: String,
    /// Keep only events at or after this time (`YYYY-MM-DD hh:mm:ss[.fff]`).
    #[arg(long)]
    start: Option<Timestamp>,
    /// Keep only events at or before this time.
    #[arg(long)]
    end: Option<Timestamp>,
    /// Fail with exit code 1 if any line is malformed.
    #[arg(long)]
    strict: bool,
}

#[derive(Debug, Args)]
struct SankeyArgs {
    /// Event log to read; `-` reads standard input.
    #[arg(long)]
    input: String,
    /// PV filter file applied before counting.
    #[arg(long)]
    filter: Option<PathBuf>,
    /// Drop purely numeric tokens (`SR07U` becomes `SR`, `U`).
    #[arg(long)]
    strip_numbers: bool,
    /// Count every event instead of each distinct PV name once.
    #[arg(long)]
    per_event: bool,
    /// Where to write the JSON; `-` is standard output.
    #[arg(long, visible_alias = "out", default_value = "-")]
    output: String,
}

/// Hyperparameter overrides; each replaces the config-file value.
#[derive(Debug, Args, Default)]
struct Overrides {
    /// Master seed for every random choice [default: chosen at random and printed].
    #[arg(long)]
    seed: Option<u64>,
    /// Training window start (inclusive) [default: unbounded].
    #[arg(long)]
    start: Option<Timestamp>,
    /// Training window end (inclusive) [default: unbounded].
    #[arg(long)]
    end: Option<Timestamp>,
    /// Tokenizer: event, grammar or grammar_strip_numbers [default: event].
    #[arg(long, value_parser = parse_tokenizer)]
    tokenizer: Option<TokenizerMode>,
    /// Embedding dimension D [default: 32].
    #[arg(long)]
    dim: Option<usize>,
    /// Skip-gram context window [default: 8].
    #[arg(long)]
    window: Option<usize>,
    /// Negative samples per pair [default: 5].
    #[arg(long)]
    negatives: Option<usize>,
    /// Skip-gram epochs [default: 5].
    #[arg(long)]
    sg_epochs: Option<usize>,
    /// Initial skip-gram learning rate, decayed linearly to 10% [default: 0.025].
    #[arg(long)]
    sg_learning_rate: Option<f64>,
    /// Minimum token count kept in the vocabulary [default: 1].
    #[arg(long)]
    min_count: Option<u64>,
    /// GRU hidden size H [default: 64].
    #[arg(long)]
    hidden: Option<usize>,
    /// Latent size Z [default: 16].
    #[arg(long)]
    latent: Option<usize>,
    /// Truncated-BPTT segment length L [default: 64].
    #[arg(long)]
    segment_len: Option<usize>,
    /// Detector training epochs [default: 30].
    #[arg(long)]
    epochs: Option<usize>,
    /// Detector gradient-descent learning rate [default: 0.001].
    #[arg(long)]
    learning_rate: Option<f64>,
    /// L2 weight penalty λ [default: 0].
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Minimum magnitude of each center component [default: 0.01].
    #[arg(long)]
    center_floor: Option<f64>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Training event log; `-` reads standard input [default: paths.input from --config].
    #[arg(long)]
    input: Option<String>,
    /// PV filter file, snapshotted into the bundle [default: paths.filter from --config, else none].
    #[arg(long)]
    filter: Option<PathBuf>,
    /// TOML run configuration; see the README for the format.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Bundle file to write [default: paths.out from --config].
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
    /// Print the fully resolved configuration as TOML before training.
    #[arg(long)]
    print_config: bool,
    /// Suppress per-epoch loss lines.
    #[arg(long)]
    quiet: bool,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    /// Model bundle written by `train`.
    #[arg(long)]
    model: PathBuf,
    /// Event log to score; `-` reads standard input until it closes.
    #[arg(long)]
    input: String,
    /// Score CSV (`timestamp,pv,prev,new,score,n_known`); `-` is standard output.
    #[arg(long, visible_alias = "output", default_value = "-")]
    out: String,
    /// Also write latent vectors (`timestamp,pv,z_0..`) to this CSV.
    #[arg(long)]
    latents: Option<PathBuf>,
    /// Stream-state file: resumed from if it exists, rewritten when scoring ends.
    #[arg(long)]
    state: Option<PathBuf>,
    /// Append rows to existing CSVs instead of overwriting them (no second header).
    #[arg(long)]
    append: bool,
    /// Print the K highest-scoring events after scoring.
    #[arg(long, value_name = "K")]
    top: Option<usize>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Corpus spec (TOML) [default: the built-in spec; see --print-spec].
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Event log to write.
    #[arg(long, visible_alias = "output")]
    out: Option<PathBuf>,
    /// Labels CSV (`line_no,is_anomaly`) to write.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Override the spec's seed [default: from the spec, 42 for the built-in one].
    #[arg(long)]
    seed: Option<u64>,
    /// Override the spec's anomaly rate, within [0, 0.05] [default: from the spec, 0.01 built in].
    #[arg(long)]
    anomaly_rate: Option<f64>,
    /// Override the number of events [default: from the spec, 20000 built in].
    #[arg(long)]
    events: Option<usize>,
    /// Also write a nominal-only log of the same traffic that ends before the corpus starts.
    #[arg(long)]
    history: Option<PathBuf>,
    /// Print the resolved spec as TOML and exit.
    #[arg(long)]
    print_spec: bool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Score CSV written by `score`.
    #[arg(long)]
    scores: PathBuf,
    /// Labels CSV written by `synth`; rows are matched to scores in order.
    #[arg(long)]
    labels: PathBuf,
}

#[derive(Debug, Args)]
struct EmbeddingsArgs {
    /// Model bundle written by `train`.
    #[arg(long)]
    model: PathBuf,
    /// CSV to write (`token,dim_0..`); `-` is standard output.
    #[arg(long, visible_alias = "output", default_value = "-")]
    out: String,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let name = subcommand_name(&cli.command);
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(commands::CliError::Usage(msg)) => {
            let mut cmd = Cli::command();
            let usage = cmd
                .find_subcommand_mut(name)
                .map(|c| c.render_usage().to_string())
                .unwrap_or_default();
            eprintln!("error: {msg}\n\n{usage}\n\nFor more information, try '--help'.");
            ExitCode::from(2)
        }
        Err(commands::CliError::Runtime { kind, message }) => {
            eprintln!("error: {kind}: {message}");
            ExitCode::from(1)
        }
    }
}

fn subcommand_name(c: &Command) -> &'static str {
    match c {
        Command::Parse(_) => "parse",
        Command::Sankey(_) => "sankey",
        Command::Train(_) => "train",
        Command::Score(_) => "score",
        Command::Synth(_) => "synth",
        Command::Eval(_) => "eval",
        Command::Embeddings(_) => "embeddings",
    }
}
