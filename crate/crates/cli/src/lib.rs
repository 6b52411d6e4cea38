//! Command-line front end: `adnet synth|train|eval|transfer|export`.
//!
//! Exit codes: 0 on success, 1 for usage errors, 2 for runtime failures.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::io::{self, Write};
use std::path::PathBuf;

use clap::{Args, CommandFactory, Parser, Subcommand};

pub use commands::{end_to_end_smoke, EvalOutput, UsageError};
pub use config::{Overrides, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "adnet", version, about = "Split sentences into meaning and form vectors and transfer form between corpora")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a pair of synthetic corpora with ground truth.
    Synth(Common),
    /// Train a model on a corpus pair.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from the latest checkpoint in --out.
        #[arg(long)]
        resume: bool,
    },
    /// Score a trained run on a split of its corpus.
    Eval(Common),
    /// Read sentences on stdin and print their transfers, one per line.
    Transfer(Common),
    /// Write meaning and form vectors of a split as TSV.
    Export(Common),
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Corpus prefix: reads <prefix>.a.txt and <prefix>.b.txt.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Trained run directory or checkpoint.
    #[arg(long)]
    pub run: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Word vectors for content preservation.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub meaning_dim: Option<usize>,
    #[arg(long)]
    pub form_dim: Option<usize>,
    #[arg(long)]
    pub lambda_adv: Option<f64>,
    #[arg(long)]
    pub lambda_motiv: Option<f64>,
    #[arg(long)]
    pub lambda_f: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Average the form vectors of this many target-form sentences.
    #[arg(long)]
    pub form_avg_k: Option<usize>,
    /// Use the form vector of this sentence instead.
    #[arg(long)]
    pub form_from: Option<String>,
    /// Target form for --form-avg-k: a or b.
    #[arg(long)]
    pub target: Option<String>,
}

impl Common {
    pub fn resolve(&self) -> anyhow::Result<RunConfig> {
        let o = Overrides {
            seed: self.seed,
            corpus: self.corpus.clone(),
            run: self.run.clone(),
            out: self.out.clone(),
            embeddings: self.embeddings.clone(),
            meaning_dim: self.meaning_dim,
            form_dim: self.form_dim,
            lambda_adv: self.lambda_adv,
            lambda_motiv: self.lambda_motiv,
            lambda_f: self.lambda_f,
            epochs: self.epochs,
            batch_size: self.batch_size,
            form_avg_k: self.form_avg_k,
            form_from: self.form_from.clone(),
            target: self.target.clone(),
        };
        RunConfig::resolve(self.config.as_deref(), &o)
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    let mut stdout = io::stdout().lock();
    match cli.command {
        Command::Synth(c) => {
            let prefix = commands::synth(&c.resolve()?)?;
            writeln!(stdout, "{}", prefix.display())?;
        }
        Command::Train { common, resume } => {
            let metrics = commands::train_run(&common.resolve()?, resume)?;
            if let Some(last) = metrics.last() {
                writeln!(stdout, "{}\n{}", adnet::training::METRICS_HEADER, last.csv())?;
            }
        }
        Command::Eval(c) => {
            let out = commands::eval_run(&c.resolve()?)?;
            writeln!(stdout, "{}", out.report.to_json())?;
        }
        Command::Transfer(c) => {
            commands::transfer_stream(&c.resolve()?, io::stdin().lock(), &mut stdout)?;
        }
        Command::Export(c) => {
            let dir = commands::export_run(&c.resolve()?)?;
            writeln!(stdout, "{}", dir.display())?;
        }
    }
    Ok(())
}

/// The error chain joined with `: `, skipping causes already quoted by
/// the message above them.
fn describe(e: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in e.chain() {
        let s = cause.to_string();
        if !msg.contains(&s) {
            if !msg.is_empty() {
                msg.push_str(": ");
            }
            msg.push_str(&s);
        }
    }
    msg
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            if !e.use_stderr() {
                let _ = e.print();
                return 0;
            }
            let text = e.render().to_string();
            eprint!("{text}");
            if !text.contains("Usage:") {
                eprintln!("\n{}", Cli::command().render_usage());
            }
            return 1;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) if e.downcast_ref::<UsageError>().is_some() => {
            eprintln!("error: {e}\n\n{}", Cli::command().render_usage());
            1
        }
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            2
        }
    }
}
