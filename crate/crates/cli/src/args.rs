use std::path::PathBuf;

use clap::{ArgGroup, Parser, Subcommand, ValueEnum};

/// Budget planning, verification suites and toy adaptation runs for
/// head-specific low-rank attention adapters.
#[derive(Debug, Parser)]
#[command(name = "headwise", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print and save the parameter budget of a plan.
    #[command(group(ArgGroup::new("source").required(true).args(["preset", "config"])))]
    Plan {
        /// Registered plan name.
        #[arg(long)]
        preset: Option<String>,
        /// Plan file (JSON).
        #[arg(long)]
        config: Option<PathBuf>,
        /// `gpt2-small`, `toy`, an inline JSON object or a JSON file.
        #[arg(long)]
        dims: Option<String>,
        /// Output file for the plan and its report.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run numerical verification suites.
    Verify {
        #[arg(long, value_enum, default_value_t = Suite::All)]
        suite: Suite,
        /// Random trials (seeds for the rank suite).
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "toy")]
        dims: String,
        /// Write the full report here.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Train adapters on a toy task.
    Train {
        /// Registered task name or task file.
        #[arg(long, default_value = "head-specific")]
        task: String,
        /// Registered plan name or plan file.
        #[arg(long)]
        plan: String,
        #[arg(long)]
        train_config: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train several plans on the same task and tabulate the results.
    Compare {
        #[arg(long, default_value = "head-specific")]
        task: String,
        /// Comma-separated or repeated; at least two.
        #[arg(long, value_delimiter = ',', required = true)]
        plans: Vec<String>,
        #[arg(long)]
        train_config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    /// Softmax attention vs the normalized kernel smoother.
    Kernel,
    /// Concatenated vs head-sum output map.
    Rewrite,
    /// Merged vs factored adapter forward.
    Merged,
    /// Key-reuse lite projections vs merged weights.
    FastPath,
    /// Autodiff vs finite differences for every scheme.
    Grad,
    /// Rank and column-space structure of the updates.
    Rank,
    All,
}
