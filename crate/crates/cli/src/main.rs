//! `phrasemine`: quality-phrase mining pipeline.
//!
//! Exit status: 0 success, 1 usage error, 2 data error, 3 backend error.

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::{BackendArgs, MiningArgs};

#[derive(Debug, Parser)]
#[command(name = "phrasemine", version, about = "Unsupervised quality phrase mining")]
struct Cli {
    /// Config file of `key = value` lines; flags take precedence
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Mine silver-label phrases from a corpus
    Annotate {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads (0 = all cores)
        #[arg(long)]
        threads: Option<usize>,
        #[command(flatten)]
        backend: BackendArgs,
        #[command(flatten)]
        mining: MiningArgs,
    },
    /// Dump the word-level impact matrix of one sentence as CSV
    Impact {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        sentence_id: Option<String>,
        /// CSV destination (standard output when absent)
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        backend: BackendArgs,
        #[command(flatten)]
        mining: MiningArgs,
    },
    /// Write generator training records from silver labels
    ExportTrain {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        silver: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Ground generated phrase strings to spans
    ImportGenerated {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        generated: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Phrases parsed per generated string
        #[arg(long)]
        max_phrases: Option<usize>,
        #[arg(long)]
        stopwords: Option<PathBuf>,
        #[arg(long)]
        no_pos_filter: bool,
    },
    /// Union annotator and generator predictions
    Merge {
        #[arg(long)]
        annotator: Option<PathBuf>,
        #[arg(long)]
        generator: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Micro precision/recall/F1 of sentence-level predictions
    EvalSentence {
        #[arg(long)]
        pred: Option<PathBuf>,
        #[arg(long)]
        gold: Option<PathBuf>,
        /// Match lowercased surfaces instead of spans
        #[arg(long)]
        surface: bool,
        /// JSON report destination
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-sentence CSV destination
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Rank document keyphrases by TF-IDF and score F1@10
    EvalDoc {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        pred: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
