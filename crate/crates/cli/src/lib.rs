//! Command-line driver: synthetic city generation, feature extraction,
//! dataset construction, training, evaluation and report rendering, each
//! as a stage that communicates through files in one output directory.

pub mod config;
pub mod error;
pub mod stages;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crimelab::eval::ReportFormat;

pub use config::{Overrides, RunConfig};
pub use error::CliError;
pub use stages::Context;

#[derive(Debug, Parser)]
#[command(name = "crimelab", version, about = "Spatio-temporal crime prediction experiments")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads (results do not depend on it).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Whole-period features and global under-sampling before splitting.
    #[arg(long, global = true)]
    pub paper_mode: bool,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Generate the configured synthetic city.
    Synth,
    /// Compute per-fold region feature tables.
    Features,
    /// Build the cell grid and fold splits.
    Dataset,
    /// Fit every model and classifier on every fold.
    Train,
    /// Compute metrics from the trained scores.
    Eval,
    /// Render report tables.
    Report {
        /// csv, markdown or both; defaults to the config.
        #[arg(long, value_delimiter = ',')]
        format: Vec<ReportFormat>,
    },
    /// Run every stage in order.
    Pipeline,
}

impl Cli {
    fn overrides(&self) -> Overrides {
        Overrides { jobs: self.jobs, seed: self.seed, paper_mode: self.paper_mode, out: self.out.clone() }
    }

    fn load_config(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        cfg.apply(&self.overrides());
        Ok(cfg)
    }
}

/// Runs one parsed command line.
pub fn run(cli: &Cli) -> Result<(), CliError> {
    let ctx = Context::new(cli.load_config()?)?;
    let work = || match &cli.command {
        Command::Synth => stages::cmd_synth(&ctx),
        Command::Features => stages::cmd_features(&ctx),
        Command::Dataset => stages::cmd_dataset(&ctx),
        Command::Train => stages::cmd_train(&ctx),
        Command::Eval => stages::cmd_eval(&ctx),
        Command::Report { format } => {
            stages::cmd_report(&ctx, (!format.is_empty()).then_some(format.as_slice())).map(|_| ())
        }
        Command::Pipeline => stages::cmd_pipeline(&ctx),
    };
    match ctx.config.jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Internal(e.to_string()))?
            .install(work),
        None => work(),
    }
}

/// Parses `args`, runs, prints any error and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("crimelab: {e}");
            e.exit_code()
        }
    }
}
