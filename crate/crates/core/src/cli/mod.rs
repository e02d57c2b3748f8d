//! Command-line front end: `synth`, `run` and `evaluate`.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 internal error.

mod config;
mod desk;
mod evaluate;
mod provenance;
mod run;
mod synth;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::{MetricOptions, Paths, RunConfig, SynthConfig, OUTPUT_ENV};
pub use desk::{median, run_desk_experiment, DeskCase, DeskExperiment, DeskResult};
pub use evaluate::{cmd_evaluate, EvaluateOptions, EvaluateOutcome};
pub use provenance::{
    git_hash, register_file, sha256_hex, CorpusManifest, ManifestEntry, Provenance, SIDECAR,
};
pub use run::{cmd_run, prediction_file, subject_dir, RunOutcome, Subjects};
pub use synth::{
    cmd_synth, intensity_sample, ks_two_sample, IntensityCheck, SynthManifest, KS_SAMPLES,
};

use crate::data::Protocol;
use crate::error::Result;

#[derive(Debug, Parser)]
#[command(
    name = "ttuda",
    version,
    about = "Test-time unsupervised domain adaptation for 2D lesion segmentation"
)]
pub struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic source/target corpus and its manifest.
    Synth,
    /// Train or adapt, predict, and store the results.
    Run(RunArgs),
    /// Score predictions and rank methods.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Defaults to the configured protocol.
    #[arg(long)]
    pub protocol: Option<Protocol>,
    #[arg(
        long,
        conflicts_with = "all_subjects",
        required_unless_present = "all_subjects"
    )]
    pub subject: Option<String>,
    #[arg(long)]
    pub all_subjects: bool,
    /// Run this seed only instead of the configured list.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Root holding `<method>/<subject>/` prediction directories.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Comma-separated method names; every protocol directory found by default.
    #[arg(long, value_delimiter = ',')]
    pub methods: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Fail when any prediction is missing.
    #[arg(long)]
    pub strict: bool,
    /// Also write colour-coded slice overlays.
    #[arg(long)]
    pub overlays: bool,
}

fn execute(cli: Cli) -> Result<i32> {
    let cfg = RunConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Synth => {
            let (path, manifest) = cmd_synth(&cfg)?;
            println!(
                "wrote {} subjects; manifest {}",
                manifest.corpus.entries.len(),
                path.display()
            );
            Ok(0)
        }
        Command::Run(args) => {
            let subjects = match args.subject {
                Some(s) => Subjects::One(s),
                None => Subjects::All,
            };
            let protocol = args.protocol.unwrap_or(cfg.protocol);
            for o in cmd_run(&cfg, protocol, &subjects, args.seed)? {
                println!(
                    "{protocol} {} seed {}: {} ({})",
                    o.subject,
                    o.seed,
                    o.directory.display(),
                    o.record.prediction_checksum
                );
            }
            Ok(0)
        }
        Command::Evaluate(args) => {
            let opts = EvaluateOptions {
                predictions: args.predictions,
                methods: args.methods,
                seed: args.seed,
                overlays: args.overlays,
            };
            let outcome = cmd_evaluate(&cfg, &opts)?;
            for w in &outcome.warnings {
                eprintln!("warning: {w}");
            }
            if let Some(table) = &outcome.ranks {
                print!("{}", table.to_csv());
            }
            println!("reports in {}", outcome.directory.display());
            Ok(if args.strict && outcome.missing > 0 {
                2
            } else {
                0
            })
        }
    }
}

/// Parse `args` (program name first), run the command and return the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match std::panic::catch_unwind(|| execute(cli)) {
        Ok(Ok(code)) => code,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
        Err(_) => 3,
    }
}
