//! `storylogic`: batch front end for narrative gap detection, completion and
//! scoring. See `storylogic --help` for commands; every run prints its
//! effective configuration to stderr first.

mod config;
mod ops;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use storylogic::gateway::ShotMode;

use config::{Overrides, RunConfig};
use ops::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "storylogic",
    version,
    about = "Narrative gap detection and completion over a chat-model backend"
)]
struct Cli {
    #[command(flatten)]
    common: CommonArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// TOML config file; flags and environment override its values
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// `mock:<dir>` or an OpenAI-style base URL (env: STORYLOGIC_API_BASE)
    #[arg(long, global = true, value_name = "SPEC")]
    backend: Option<String>,
    /// Model name sent with every request
    #[arg(long, global = true)]
    model: Option<String>,
    /// Worked examples per prompt
    #[arg(long, global = true, value_enum)]
    shots: Option<ShotsArg>,
    /// Annotate prompts with action/emotion lines (the default)
    #[arg(long, global = true, overrides_with = "no_ea")]
    ea: bool,
    /// Plain prompts without action/emotion annotations
    #[arg(long, global = true, overrides_with = "ea")]
    no_ea: bool,
    /// Predict the gap's actions/emotions before generating (implies --ea)
    #[arg(long, global = true)]
    with_prediction: bool,
    /// Seed for every random choice in the run
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Concurrent backend requests
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Exemplar JSONL file for one/few-shot prompts
    #[arg(long, global = true, value_name = "FILE")]
    exemplars: Option<PathBuf>,
    /// Affect lexicon TSV for deviation scoring
    #[arg(long, global = true, value_name = "FILE")]
    lexicon: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ShotsArg {
    Zero,
    One,
    Few,
}

impl From<ShotsArg> for ShotMode {
    fn from(value: ShotsArg) -> Self {
        match value {
            ShotsArg::Zero => ShotMode::Zero,
            ShotsArg::One => ShotMode::One,
            ShotsArg::Few => ShotMode::Few,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fabricate gold gap instances from a corpus with emotion votes
    MakeGaps {
        #[arg(long, value_name = "FILE")]
        corpus: PathBuf,
    },
    /// Ask the backend where a sentence is missing in each gapped story
    Check {
        #[arg(long, value_name = "FILE")]
        gaps: PathBuf,
        /// Report headline micro-F1 with `none` cells included
        #[arg(long)]
        include_none: bool,
    },
    /// Detect the gap and generate the missing sentence
    Complete {
        #[arg(long, value_name = "FILE")]
        gaps: PathBuf,
        /// Score generated sentences only where the verdict matched gold
        #[arg(long)]
        correct_index_only: bool,
        /// Report headline micro-F1 with `none` cells included
        #[arg(long)]
        include_none: bool,
    },
    /// Reconstruct every sentence from its abstracted actions alone
    T2act2t {
        #[arg(long, value_name = "FILE")]
        corpus: PathBuf,
    },
    /// Export instruction-tuning records for chosen stages
    ExportSft {
        #[arg(long, value_name = "FILE")]
        gaps: PathBuf,
        /// Stage key (repeatable); omit for all stages
        #[arg(long = "stage", value_name = "STAGE")]
        stage: Vec<String>,
        /// results.jsonl supplying annotation grids for the annotated check stage
        #[arg(long, value_name = "FILE")]
        annotations: Option<PathBuf>,
    },
    /// Score an existing result file against gold records, offline
    Eval {
        #[arg(long, value_name = "FILE")]
        gaps: PathBuf,
        #[arg(long, value_name = "FILE")]
        results: PathBuf,
        /// Score generated sentences only where the verdict matched gold
        #[arg(long)]
        correct_index_only: bool,
        /// Report headline micro-F1 with `none` cells included
        #[arg(long)]
        include_none: bool,
    },
    /// Partition a corpus into train/val/test files
    Split {
        #[arg(long, value_name = "FILE")]
        corpus: PathBuf,
        /// Three comma-separated fractions summing to 1
        #[arg(long, default_value = "0.8,0.1,0.1")]
        ratios: String,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::MakeGaps { .. } => "make-gaps",
            Command::Check { .. } => "check",
            Command::Complete { .. } => "complete",
            Command::T2act2t { .. } => "t2act2t",
            Command::ExportSft { .. } => "export-sft",
            Command::Eval { .. } => "eval",
            Command::Split { .. } => "split",
        }
    }
}

fn ea_flag(ea: bool, no_ea: bool) -> Option<bool> {
    match (ea, no_ea) {
        (true, _) => Some(true),
        (_, true) => Some(false),
        _ => None,
    }
}

async fn run(cli: Cli) -> Result<u8, CliError> {
    let overrides = Overrides {
        config: cli.common.config,
        backend: cli.common.backend,
        model: cli.common.model,
        shots: cli.common.shots.map(Into::into),
        ea: ea_flag(cli.common.ea, cli.common.no_ea),
        with_prediction: cli.common.with_prediction,
        seed: cli.common.seed,
        jobs: cli.common.jobs,
        out: cli.common.out,
        lexicon: cli.common.lexicon,
        exemplars: cli.common.exemplars,
    };
    let config = RunConfig::resolve(overrides).map_err(ops::invalid)?;
    config.print_header(cli.command.name());
    match cli.command {
        Command::MakeGaps { corpus } => ops::cmd_make_gaps(&config, &corpus),
        Command::Check { gaps, include_none } => {
            ops::cmd_check(&config, &gaps, include_none).await
        }
        Command::Complete { gaps, correct_index_only, include_none } => {
            ops::cmd_complete(&config, &gaps, correct_index_only, include_none).await
        }
        Command::T2act2t { corpus } => ops::cmd_t2act2t(&config, &corpus).await,
        Command::ExportSft { gaps, stage, annotations } => {
            ops::cmd_export_sft(&config, &gaps, &stage, annotations.as_deref())
        }
        Command::Eval { gaps, results, correct_index_only, include_none } => {
            ops::cmd_eval(&config, &gaps, &results, correct_index_only, include_none)
        }
        Command::Split { corpus, ratios } => ops::cmd_split(&config, &corpus, &ratios),
    }
}

#[tokio::main]
async fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli).await {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_definition_is_well_formed() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn ea_flags_resolve_to_three_states() {
        assert_eq!(ea_flag(true, false), Some(true));
        assert_eq!(ea_flag(false, true), Some(false));
        assert_eq!(ea_flag(false, false), None);
    }
}
