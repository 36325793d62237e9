//! `retlab`: pipeline driver for the retrieval laboratory.
//!
//! Exit codes: 0 success, 2 config error, 3 missing upstream artifact,
//! 4 numerical divergence, 1 anything else.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use retlab_cli::config::PipelineConfig;
use retlab_cli::error::CliError;
use retlab_cli::manifest::StepRunner;
use retlab_cli::steps::{self, Variant};

#[derive(Debug, Parser)]
#[command(
    name = "retlab",
    about = "Long-tail retrieval laboratory: synthetic data, round-trip selection, \
             retriever training, routing, and bucketed evaluation",
    after_help = "Any config key can be overridden with a flag of the same dotted name, \
                  e.g. `--train.epochs 20` or `--selection.threshold=0.8`. Dotted overrides \
                  go last, after flags like --config/--seed/--force."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
struct Common {
    /// Pipeline config file (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed: re-derives every stage seed from this value.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Rebuild artifacts even when the manifest says they are up to date.
    #[arg(long, global = true)]
    force: bool,
    /// Dotted-name config overrides: `--section.key value`.
    #[arg(
        trailing_var_arg = true,
        allow_hyphen_values = true,
        hide = true,
        value_name = "OVERRIDES"
    )]
    overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the bundled toy testbed and a ready-to-run config file.
    GenTestbed {
        /// Output directory.
        #[arg(long, default_value = "testbed")]
        out: PathBuf,
        /// Generator seed.
        #[arg(long, default_value_t = 17)]
        testbed_seed: u64,
        #[command(flatten)]
        common: Common,
    },
    /// Normalize and ingest the passage corpus.
    Ingest {
        #[command(flatten)]
        common: Common,
    },
    /// Build the BM25 inverted index.
    IndexSparse {
        #[command(flatten)]
        common: Common,
    },
    /// Encode every passage into the dense index for one variant.
    IndexDense {
        /// untrained | selected | random | full | qwaw
        #[arg(long, default_value = "selected")]
        variant: String,
        #[command(flatten)]
        common: Common,
    },
    /// Generate and filter the synthetic QA pool from knowledge triples.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Train the inverse (embedding-to-text) model.
    TrainInverse {
        #[command(flatten)]
        common: Common,
    },
    /// Round-trip every pool sample and select the easy-to-learn ones.
    Select {
        #[command(flatten)]
        common: Common,
    },
    /// Contrastively fine-tune the dense encoder on a training-set variant.
    TrainRetriever {
        /// selected | random | full | qwaw
        #[arg(long, default_value = "selected")]
        variant: String,
        #[command(flatten)]
        common: Common,
    },
    /// Train the sparse/dense query router on the routing split.
    TrainRouter {
        #[command(flatten)]
        common: Common,
    },
    /// Run one ad-hoc query against a system.
    Retrieve {
        /// The query text.
        query: String,
        /// bm25 | dense-<variant> | routed
        #[arg(long, default_value = "bm25")]
        system: String,
        #[arg(short, default_value_t = 10)]
        k: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate the configured systems on the eval set.
    Eval {
        #[command(flatten)]
        common: Common,
    },
    /// Run the whole chain: ingest through eval.
    Pipeline {
        #[command(flatten)]
        common: Common,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::GenTestbed { common, .. }
            | Command::Ingest { common }
            | Command::IndexSparse { common }
            | Command::IndexDense { common, .. }
            | Command::Synth { common }
            | Command::TrainInverse { common }
            | Command::Select { common }
            | Command::TrainRetriever { common, .. }
            | Command::TrainRouter { common }
            | Command::Retrieve { common, .. }
            | Command::Eval { common }
            | Command::Pipeline { common } => common,
        }
    }
}

/// Splits the trailing `--a.b value` / `--a.b=value` tokens into pairs.
fn parse_overrides(raw: &[String]) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < raw.len() {
        let token = &raw[i];
        let Some(stripped) = token.strip_prefix("--") else {
            return Err(CliError::Config(format!(
                "unexpected argument {token:?}; overrides look like --section.key value"
            )));
        };
        let (key, value) = match stripped.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let Some(value) = raw.get(i + 1) else {
                    return Err(CliError::Config(format!("override {token:?} needs a value")));
                };
                i += 1;
                (stripped.to_string(), value.clone())
            }
        };
        if !key.contains('.') {
            return Err(CliError::Config(format!(
                "override key {key:?} must be a dotted config path"
            )));
        }
        out.push((key, value));
        i += 1;
    }
    Ok(out)
}

fn run() -> Result<(), CliError> {
    let cli = Cli::parse();
    let common = cli.command.common().clone();
    let overrides = parse_overrides(&common.overrides)?;

    if let Command::GenTestbed {
        out, testbed_seed, ..
    } = &cli.command
    {
        return steps::gen_testbed(out, *testbed_seed);
    }

    let cfg = PipelineConfig::load(common.config.as_deref(), &overrides, common.seed)?;
    let mut runner = StepRunner::new(&cfg.paths.workdir, common.force);

    match &cli.command {
        Command::GenTestbed { .. } => unreachable!("handled above"),
        Command::Ingest { .. } => steps::ingest(&cfg, &mut runner),
        Command::IndexSparse { .. } => steps::index_sparse(&cfg, &mut runner),
        Command::IndexDense { variant, .. } => {
            steps::index_dense(&cfg, &mut runner, Variant::parse(variant)?)
        }
        Command::Synth { .. } => steps::synth(&cfg, &mut runner),
        Command::TrainInverse { .. } => steps::train_inverse(&cfg, &mut runner),
        Command::Select { .. } => steps::select_step(&cfg, &mut runner),
        Command::TrainRetriever { variant, .. } => {
            steps::train_retriever_step(&cfg, &mut runner, Variant::parse(variant)?)
        }
        Command::TrainRouter { .. } => steps::train_router_step(&cfg, &mut runner),
        Command::Retrieve {
            query, system, k, ..
        } => steps::retrieve(&cfg, &runner, system, query, *k),
        Command::Eval { .. } => steps::eval_step(&cfg, &mut runner),
        Command::Pipeline { .. } => steps::pipeline(&cfg, &mut runner),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
