//! `iris`: identify, retrieve and steer situational persona neurons from
//! the command line.
//!
//! Exit codes: 0 on success, 1 on invalid input (flags, config, files),
//! 2 when a valid request fails while running.

mod commands;
mod config;
mod summary;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use iris_core::bank::FeatureMode;
use iris_core::probe::SampleMode;
use iris_core::types::{Aspect, Domain};
use iris_core::IrisError;

use crate::config::RunConfig;

/// Bad flags, config contents or missing settings.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

#[derive(Parser, Debug)]
#[command(
    name = "iris",
    version,
    about = "Situational persona neurons: identify, retrieve, steer"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a self-contained toy workspace (planted model, prompts, questions, config).
    Init(InitArgs),
    /// Identify persona neurons per (domain, topic) and write the bank.
    Identify(CommonArgs),
    /// Similarity coefficients of questions against the bank's topics.
    Retrieve(RetrieveArgs),
    /// Steered generation for a question file, written as JSONL.
    Steer(SteerArgs),
    /// Generate for a single prompt, optionally steered, optionally dumping FFN taps.
    Generate(GenerateArgs),
    /// Layer tables, PCA/LDA projections and topic impact.
    Analyze(AnalyzeArgs),
    /// Score a steer JSONL with the configured judge.
    Evaluate(EvaluateArgs),
    /// γ/σ grid over a question file, one CSV row per cell and domain.
    Sweep(SweepArgs),
}

#[derive(Args, Debug)]
struct InitArgs {
    /// Target directory; created if absent.
    dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug, Clone, Default)]
pub struct CommonArgs {
    /// TOML run configuration.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub bank: Option<PathBuf>,
    #[arg(long)]
    pub questions: Option<PathBuf>,
    #[arg(long)]
    pub prompts: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub max_new_tokens: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Comma-separated domains, e.g. `E,N`.
    #[arg(long, value_delimiter = ',', value_parser = parse_domain)]
    pub domains: Option<Vec<Domain>>,
    /// Comma-separated topic names.
    #[arg(long, value_delimiter = ',')]
    pub topics: Option<Vec<String>>,
    /// Pool every topic of a domain into one `global` topic.
    #[arg(long)]
    pub global_mode: bool,
    #[arg(long, value_enum)]
    pub feature_mode: Option<FeatureModeArg>,
    #[arg(long, value_enum)]
    pub a95_mode: Option<SampleModeArg>,
}

#[derive(Args, Debug)]
struct RetrieveArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// A single question; otherwise the configured test questions are used.
    #[arg(long)]
    question: Option<String>,
    /// Domain of `--question`.
    #[arg(long, value_parser = parse_domain)]
    domain: Option<Domain>,
    /// Output JSONL; default `<out_dir>/retrieval.jsonl`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SteerArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, value_enum, default_value_t = AspectChoice::Both)]
    aspect: AspectChoice,
    /// Output JSONL; default `<out_dir>/steer.jsonl`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Raw prompt text, fed as is.
    #[arg(long, conflicts_with = "question")]
    text: Option<String>,
    /// Question wrapped in the persona template of `--domain`/`--aspect`.
    #[arg(long)]
    question: Option<String>,
    #[arg(long, value_parser = parse_domain)]
    domain: Option<Domain>,
    #[arg(long, value_parser = parse_aspect)]
    aspect: Option<Aspect>,
    /// Apply the steering plan retrieved from the bank.
    #[arg(long, requires = "question")]
    steered: bool,
    /// Write the transcript and FFN taps to this JSONL path.
    #[arg(long)]
    taps: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, value_parser = parse_domain)]
    domain: Domain,
    /// Number of PCA components.
    #[arg(long, default_value_t = 2)]
    components: usize,
    /// Scores CSV for the topic-impact table (topics come from the test questions).
    #[arg(long)]
    scores: Option<PathBuf>,
    /// Skip the per-question PCA-then-LDA pass.
    #[arg(long)]
    no_lda: bool,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Steer JSONL; default `<out_dir>/steer.jsonl`.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Scores CSV; default `<out_dir>/scores.csv`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, value_delimiter = ',', default_values_t = [0.9, 1.1, 1.3, 1.5])]
    gammas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.10])]
    sigmas: Vec<f64>,
    /// Sweep CSV; default `<out_dir>/sweep.csv`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum AspectChoice {
    Both,
    Positive,
    Negative,
}

impl AspectChoice {
    pub fn aspects(self) -> Vec<Aspect> {
        match self {
            AspectChoice::Both => Aspect::BOTH.to_vec(),
            AspectChoice::Positive => vec![Aspect::Positive],
            AspectChoice::Negative => vec![Aspect::Negative],
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum FeatureModeArg {
    SignedDelta,
    LiteralAspectProb,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum SampleModeArg {
    AllTokens,
    ActiveOnly,
}

fn parse_domain(s: &str) -> Result<Domain, String> {
    s.parse().map_err(|e: IrisError| e.to_string())
}

fn parse_aspect(s: &str) -> Result<Aspect, String> {
    s.parse().map_err(|e: IrisError| e.to_string())
}

impl CommonArgs {
    /// Config file (or defaults) with flag overrides applied.
    pub fn resolve(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = &self.$field {
                    cfg.$field = v.clone().into();
                }
            )*};
        }
        set!(model, questions, prompts);
        set!(
            bank,
            out_dir,
            threshold,
            gamma,
            sigma,
            max_new_tokens,
            seed,
            workers,
            domains,
            topics
        );
        if self.global_mode {
            cfg.global_mode = true;
        }
        if let Some(m) = self.feature_mode {
            cfg.feature_mode = match m {
                FeatureModeArg::SignedDelta => FeatureMode::SignedDelta,
                FeatureModeArg::LiteralAspectProb => FeatureMode::LiteralAspectProb,
            };
        }
        if let Some(m) = self.a95_mode {
            cfg.a95_mode = match m {
                SampleModeArg::AllTokens => SampleMode::AllTokens,
                SampleModeArg::ActiveOnly => SampleMode::ActiveOnly,
            };
        }
        if self.questions.is_some() {
            cfg.test_questions = None;
        }
        Ok(cfg)
    }
}

/// True when the failure stems from the request itself.
fn is_validation(err: &anyhow::Error) -> bool {
    err.chain().any(|cause| {
        cause.is::<UsageError>() || cause.downcast_ref::<IrisError>().is_some_and(IrisError::is_validation)
    })
}

fn run(cli: Cli) -> anyhow::Result<summary::Summary> {
    match cli.command {
        Command::Init(a) => commands::init(&a.dir, a.seed),
        Command::Identify(c) => commands::identify(&c.resolve()?),
        Command::Retrieve(a) => commands::retrieve(&a.common.resolve()?, a.question.as_deref(), a.domain, a.out),
        Command::Steer(a) => commands::steer(&a.common.resolve()?, a.aspect, a.out),
        Command::Generate(a) => commands::generate(
            &a.common.resolve()?,
            commands::GenerateRequest {
                text: a.text,
                question: a.question,
                domain: a.domain,
                aspect: a.aspect,
                steered: a.steered,
                taps: a.taps,
            },
        ),
        Command::Analyze(a) => commands::analyze(&a.common.resolve()?, a.domain, a.components, a.scores, !a.no_lda),
        Command::Evaluate(a) => commands::evaluate(&a.common.resolve()?, a.input, a.out),
        Command::Sweep(a) => commands::sweep(&a.common.resolve()?, &a.gammas, &a.sigmas, a.out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(summary) => {
            println!("{}", summary.to_json());
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(if is_validation(&err) { 1 } else { 2 })
        }
    }
}
