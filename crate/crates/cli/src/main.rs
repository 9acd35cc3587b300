mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use gbexplain::adversarial::{AttackMode, DEFAULT_TAU};
use gbexplain::axp::OrderPolicy;
use gbexplain::classexpl::DEFAULT_ALPHA;
use gbexplain::metrics::DEFAULT_RBO_P;

#[derive(Parser, Debug)]
#[command(name = "gbexplain", version, about = "Formal explanations and adversarial analysis for gradient-boosted trees")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compile a model to clauses; writes a DIMACS export and encoding statistics.
    Encode(EncodeArgs),
    /// Minimal explanations for dataset rows, one JSON record per line.
    Explain(ExplainArgs),
    /// Build the per-class feature-interval artifact from a training set.
    ClassExplain(ClassExplainArgs),
    /// Adversarial generation, detection and evaluation.
    Adv {
        #[command(subcommand)]
        command: AdvCommand,
    },
    /// Compare formal rankings with rankings from another explainer.
    Metrics(MetricsArgs),
}

#[derive(Subcommand, Debug)]
enum AdvCommand {
    /// Perturb each row toward a rival class.
    Gen(AdvGenArgs),
    /// Score each row for adversarial likelihood.
    Detect(AdvDetectArgs),
    /// Generate, detect and summarize in one pass.
    Eval(AdvEvalArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModelFormat {
    Lightgbm,
    Json,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum OrderArg {
    Index,
    Margin,
}

impl From<OrderArg> for OrderPolicy {
    fn from(o: OrderArg) -> Self {
        match o {
            OrderArg::Index => OrderPolicy::Index,
            OrderArg::Margin => OrderPolicy::Margin,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum IntervalArg {
    Quantile,
    Cluster,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum AttackArg {
    Interval,
    Witness,
}

impl From<AttackArg> for AttackMode {
    fn from(a: AttackArg) -> Self {
        match a {
            AttackArg::Interval => AttackMode::Interval,
            AttackArg::Witness => AttackMode::Witness,
        }
    }
}

#[derive(Args, Debug, Clone)]
struct ModelArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_enum, default_value = "lightgbm")]
    format: ModelFormat,
}

#[derive(Args, Debug, Clone)]
struct RunArgs {
    /// Output directory; results go to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Leaf values are scaled by 10^SCALE before exact comparison.
    #[arg(long, default_value_t = 6, value_parser = clap::value_parser!(u32).range(0..=12))]
    scale: u32,
    /// Worker threads; output order does not depend on it.
    #[arg(long)]
    jobs: Option<usize>,
    /// Recorded for reproducibility; every command is deterministic.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug, Clone)]
struct EncodeArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args, Debug, Clone)]
struct ExplainArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    data: PathBuf,
    /// `all`, or a comma list of row indices and inclusive ranges such as `0,4-7`.
    #[arg(long, default_value = "all")]
    instances: String,
    #[arg(long, value_enum, default_value = "index")]
    order: OrderArg,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args, Debug, Clone)]
struct ClassExplainArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "index")]
    order: OrderArg,
    #[arg(long, value_enum, default_value = "quantile")]
    interval: IntervalArg,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args, Debug, Clone)]
struct DetectArgs {
    /// Class-explanation artifact written by `class-explain`.
    #[arg(long)]
    class_expl: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TAU)]
    tau: f64,
    /// Ignore class features whose frequency is below this value.
    #[arg(long, default_value_t = 0.0)]
    min_frequency: f64,
    #[arg(long, value_enum, default_value = "index")]
    order: OrderArg,
}

#[derive(Args, Debug, Clone)]
struct AttackArgs {
    #[arg(long, value_enum, default_value = "interval")]
    attack: AttackArg,
    /// In witness mode, retry with every feature free.
    #[arg(long)]
    full_free: bool,
}

#[derive(Args, Debug, Clone)]
struct AdvGenArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    class_expl: PathBuf,
    #[arg(long, value_enum, default_value = "index")]
    order: OrderArg,
    #[command(flatten)]
    attack: AttackArgs,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args, Debug, Clone)]
struct AdvDetectArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    detect: DetectArgs,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args, Debug, Clone)]
struct AdvEvalArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    detect: DetectArgs,
    #[command(flatten)]
    attack: AttackArgs,
    /// Also score the unperturbed rows to report a false-positive rate.
    #[arg(long)]
    include_clean: bool,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args, Debug, Clone)]
struct MetricsArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    data: PathBuf,
    /// JSON (`[{"instance": i, "order": [...]}]`) or wide CSV rankings.
    #[arg(long)]
    rankings: PathBuf,
    #[arg(long, default_value_t = DEFAULT_RBO_P)]
    rbo_p: f64,
    #[arg(long, value_enum, default_value = "index")]
    order: OrderArg,
    #[command(flatten)]
    run: RunArgs,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(commands::exit_code(&err))
        }
    }
}
