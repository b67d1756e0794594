//! TOML run configuration. Relative paths in the file resolve against the
//! file's directory; relative paths given as flags resolve against the
//! working directory.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Deserialize;

use iris_core::bank::FeatureMode;
use iris_core::harness::ExternalJudgeConfig;
use iris_core::identify::IdentifyConfig;
use iris_core::probe::SampleMode;
use iris_core::retrieve::RetrieveOptions;
use iris_core::types::{default_topics, Domain};

use crate::UsageError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum JudgeChoice {
    #[default]
    Mock,
    External,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JudgeSettings {
    pub kind: JudgeChoice,
    /// Keyword table directory for the mock judge.
    pub keywords: Option<PathBuf>,
    pub endpoint: Option<String>,
    pub timeout_secs: f64,
    pub attempts: u32,
    pub backoff_ms: u64,
    pub token_env: String,
    pub rubrics: Option<PathBuf>,
}

impl Default for JudgeSettings {
    fn default() -> Self {
        let ext = ExternalJudgeConfig::new("");
        JudgeSettings {
            kind: JudgeChoice::Mock,
            keywords: None,
            endpoint: None,
            timeout_secs: ext.timeout.as_secs_f64(),
            attempts: ext.attempts,
            backoff_ms: ext.backoff.as_millis() as u64,
            token_env: ext.token_env,
            rubrics: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: Option<PathBuf>,
    pub bank: PathBuf,
    /// Identification questions.
    pub questions: Option<PathBuf>,
    /// Held-out questions for retrieval, steering and sweeps; falls back
    /// to `questions`.
    pub test_questions: Option<PathBuf>,
    pub prompts: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub threshold: f64,
    pub gamma: f64,
    pub sigma: f64,
    pub max_new_tokens: usize,
    pub seed: u64,
    pub workers: usize,
    pub domains: Vec<Domain>,
    pub topics: Vec<String>,
    pub global_mode: bool,
    pub feature_mode: FeatureMode,
    pub a95_mode: SampleMode,
    pub reservoir_cap: usize,
    pub temperature: f64,
    pub judge: JudgeSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        let id = IdentifyConfig::default();
        RunConfig {
            model: None,
            bank: "bank.json".into(),
            questions: None,
            test_questions: None,
            prompts: None,
            out_dir: "out".into(),
            threshold: id.threshold,
            gamma: iris_core::steer::DEFAULT_GAMMA,
            sigma: iris_core::steer::DEFAULT_SIGMA,
            max_new_tokens: id.max_new_tokens,
            seed: id.seed,
            workers: id.workers,
            domains: id.domains,
            topics: default_topics(),
            global_mode: false,
            feature_mode: FeatureMode::SignedDelta,
            a95_mode: id.sample_mode,
            reservoir_cap: id.reservoir_cap,
            temperature: 1.0,
            judge: JudgeSettings::default(),
        }
    }
}

fn rebase(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

fn rebase_opt(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(p) = p {
        rebase(base, p);
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| UsageError(format!("invalid config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        rebase_opt(base, &mut cfg.model);
        rebase(base, &mut cfg.bank);
        rebase_opt(base, &mut cfg.questions);
        rebase_opt(base, &mut cfg.test_questions);
        rebase_opt(base, &mut cfg.prompts);
        rebase(base, &mut cfg.out_dir);
        rebase_opt(base, &mut cfg.judge.keywords);
        rebase_opt(base, &mut cfg.judge.rubrics);
        Ok(cfg)
    }

    pub fn model(&self) -> anyhow::Result<&Path> {
        require(self.model.as_deref(), "model")
    }

    pub fn questions(&self) -> anyhow::Result<&Path> {
        require(self.questions.as_deref(), "questions")
    }

    pub fn test_questions(&self) -> anyhow::Result<&Path> {
        self.test_questions
            .as_deref()
            .map(Ok)
            .unwrap_or_else(|| self.questions())
    }

    pub fn prompts(&self) -> anyhow::Result<&Path> {
        require(self.prompts.as_deref(), "prompts")
    }

    pub fn identify_config(&self) -> IdentifyConfig {
        IdentifyConfig {
            threshold: self.threshold,
            max_new_tokens: self.max_new_tokens,
            domains: self.domains.clone(),
            topics: self.topics.clone(),
            global_mode: self.global_mode,
            seed: self.seed,
            workers: self.workers,
            sample_mode: self.a95_mode,
            reservoir_cap: self.reservoir_cap,
        }
    }

    pub fn retrieve_options(&self) -> RetrieveOptions {
        RetrieveOptions {
            mode: self.feature_mode,
            temperature: self.temperature,
        }
    }

    pub fn external_judge(&self) -> anyhow::Result<ExternalJudgeConfig> {
        let j = &self.judge;
        let endpoint = require(j.endpoint.as_deref(), "judge.endpoint")?;
        if !(j.timeout_secs.is_finite() && j.timeout_secs > 0.0) {
            return Err(UsageError("judge.timeout_secs must be positive".into()).into());
        }
        let mut cfg = ExternalJudgeConfig::new(endpoint);
        cfg.timeout = Duration::from_secs_f64(j.timeout_secs);
        cfg.attempts = j.attempts;
        cfg.backoff = Duration::from_millis(j.backoff_ms);
        cfg.token_env = j.token_env.clone();
        cfg.rubric_dir = j.rubrics.clone();
        Ok(cfg)
    }
}

fn require<'a, T: ?Sized>(v: Option<&'a T>, name: &str) -> anyhow::Result<&'a T> {
    v.ok_or_else(|| UsageError(format!("`{name}` is not set (config file or flag)")).into())
}
