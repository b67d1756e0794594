//! Dataset-level runs: steered generation, scoring and γ/σ sweeps.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::judge::{Judge, JudgeRequest};
use super::metrics::{aggregate, domain_score, ScoreRecord};
use super::questions::QuestionRecord;
use crate::bank::NeuronBank;
use crate::error::{IrisError, Result};
use crate::identify::PersonaPair;
use crate::parallel::ordered_map;
use crate::retrieve::{delta_vector, retrieve, RetrieveOptions, SimilarityProfile};
use crate::runtime::{ByteTokenizer, ModelHandle, TapSpec};
use crate::steer::{compile_plan, PlanSummary, SteeringConfig};
use crate::types::{Aspect, Domain};

/// Shared inputs of a steering run.
#[derive(Clone, Copy)]
pub struct SteerJob<'a> {
    pub model: &'a ModelHandle,
    pub bank: &'a NeuronBank,
    pub prompts: &'a BTreeMap<Domain, PersonaPair>,
    pub max_new_tokens: usize,
    pub retrieve: RetrieveOptions,
    pub workers: usize,
}

/// One steered response, as written to the steer JSONL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteerRecord {
    pub question_id: String,
    pub domain: Domain,
    pub topic: String,
    pub aspect: Aspect,
    pub gamma: f64,
    pub sigma: f64,
    pub question: String,
    pub response: String,
    pub tokens: Vec<u32>,
    pub similarities: BTreeMap<String, f64>,
    pub coefficients: BTreeMap<String, f64>,
    pub plan: PlanSummary,
}

/// Retrieval result of one question; independent of γ, σ and aspect.
#[derive(Debug, Clone)]
pub struct PreparedQuestion {
    pub question: QuestionRecord,
    pub profile: SimilarityProfile,
}

impl SteerJob<'_> {
    fn pair(&self, domain: Domain) -> Result<&PersonaPair> {
        self.prompts
            .get(&domain)
            .ok_or_else(|| IrisError::InvalidArgument(format!("no persona prompts for domain {domain}")))
    }

    /// Computes Δv and the similarity profile of every question.
    pub fn prepare(&self, questions: &[QuestionRecord]) -> Result<Vec<PreparedQuestion>> {
        self.bank.check_fingerprint(self.model.fingerprint())?;
        if questions.is_empty() {
            return Err(IrisError::EmptyQuestions);
        }
        ordered_map(self.workers, questions, |q| {
            let pair = self.pair(q.domain)?;
            let dv =
                delta_vector(self.model, &q.text, pair, self.max_new_tokens).map_err(|e| IrisError::Generation {
                    question_id: q.id.clone(),
                    source: Box::new(e),
                })?;
            Ok(PreparedQuestion {
                question: q.clone(),
                profile: retrieve(self.bank, q.domain, &dv, self.retrieve)?,
            })
        })
    }

    /// Steered generations for every prepared question and aspect, in
    /// question order then aspect order.
    pub fn steer(
        &self,
        prepared: &[PreparedQuestion],
        aspects: &[Aspect],
        gamma: f64,
        sigma: f64,
    ) -> Result<Vec<SteerRecord>> {
        let jobs: Vec<(&PreparedQuestion, Aspect)> = prepared
            .iter()
            .flat_map(|p| aspects.iter().map(move |&a| (p, a)))
            .collect();
        let tokenizer = ByteTokenizer::new(self.model.config().vocab_size);
        ordered_map(self.workers, &jobs, |&(p, aspect)| {
            let q = &p.question;
            let cfg = SteeringConfig {
                gamma,
                sigma,
                target_domain: q.domain,
                target_aspect: aspect,
            };
            let plan = compile_plan(self.bank, &p.profile, &cfg)?;
            let text = self.pair(q.domain)?.for_aspect(aspect).render(&q.text);
            let wrap = |e: IrisError| IrisError::Generation {
                question_id: q.id.clone(),
                source: Box::new(e),
            };
            let prompt = tokenizer.tokenize(text.as_bytes()).map_err(wrap)?;
            let transcript = self
                .model
                .generate(
                    &prompt,
                    self.max_new_tokens,
                    Some(&plan.interventions()),
                    &TapSpec::none(),
                )
                .map_err(wrap)?;
            Ok(SteerRecord {
                question_id: q.id.clone(),
                domain: q.domain,
                topic: q.topic.clone(),
                aspect,
                gamma,
                sigma,
                question: q.text.clone(),
                response: tokenizer.render(&transcript.generated_tokens),
                tokens: transcript.generated_tokens,
                similarities: p.profile.similarities.clone(),
                coefficients: p.profile.coefficients.clone(),
                plan: plan.summary(),
            })
        })
    }
}

pub fn write_steer_jsonl(path: &Path, records: &[SteerRecord]) -> Result<()> {
    let mut out = fs::File::create(path).map_err(|e| IrisError::io(path, e))?;
    for r in records {
        let v = serde_json::to_value(r).map_err(|e| IrisError::json("steer record", e))?;
        writeln!(out, "{v}").map_err(|e| IrisError::io(path, e))?;
    }
    Ok(())
}

pub fn read_steer_jsonl(path: &Path) -> Result<Vec<SteerRecord>> {
    let text = fs::read_to_string(path).map_err(|e| IrisError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| IrisError::json(format!("{}:{}", path.display(), i + 1), e)))
        .collect()
}

/// Scores every steered response, sequentially and in input order.
pub fn evaluate(records: &[SteerRecord], judge: &dyn Judge) -> Result<Vec<ScoreRecord>> {
    records
        .iter()
        .map(|r| {
            let raw = judge.score(&JudgeRequest {
                question: &r.question,
                response: &r.response,
                domain: r.domain,
                aspect: r.aspect,
            })?;
            ScoreRecord::new(r.question_id.clone(), r.domain, r.aspect, raw, judge.kind())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub gamma: f64,
    pub sigma: f64,
    pub domain: Domain,
    pub mean: f64,
    pub variance: f64,
}

/// Per-domain mean and variance of question-level domain scores
/// (positive-run adjusted + negative-run adjusted).
pub fn domain_summary(scores: &[ScoreRecord]) -> Result<BTreeMap<Domain, (f64, f64)>> {
    type AspectPair = (Option<f64>, Option<f64>);
    let mut by_question: BTreeMap<(Domain, &str), AspectPair> = BTreeMap::new();
    for s in scores {
        let slot = by_question.entry((s.domain, s.question_id.as_str())).or_default();
        match s.aspect {
            Aspect::Positive => slot.0 = Some(s.adjusted),
            Aspect::Negative => slot.1 = Some(s.adjusted),
        }
    }
    let mut per_domain: BTreeMap<Domain, Vec<f64>> = BTreeMap::new();
    for ((domain, id), pair) in by_question {
        match pair {
            (Some(p), Some(n)) => per_domain.entry(domain).or_default().push(domain_score(p, n)?),
            _ => log::warn!("question `{id}` lacks one aspect; left out of the domain score"),
        }
    }
    per_domain.into_iter().map(|(d, v)| Ok((d, aggregate(&v)?))).collect()
}

/// Runs every (γ, σ) cell over both aspects and reports per-domain
/// aggregates, one row per cell and domain.
pub fn sweep(
    job: &SteerJob<'_>,
    questions: &[QuestionRecord],
    gammas: &[f64],
    sigmas: &[f64],
    judge: &dyn Judge,
) -> Result<Vec<SweepRow>> {
    if gammas.is_empty() || sigmas.is_empty() {
        return Err(IrisError::InvalidArgument("sweep grid is empty".into()));
    }
    let prepared = job.prepare(questions)?;
    let mut rows = Vec::new();
    for &gamma in gammas {
        for &sigma in sigmas {
            let records = job.steer(&prepared, &Aspect::BOTH, gamma, sigma)?;
            let scores = evaluate(&records, judge)?;
            for (domain, (mean, variance)) in domain_summary(&scores)? {
                rows.push(SweepRow {
                    gamma,
                    sigma,
                    domain,
                    mean,
                    variance,
                });
            }
        }
    }
    Ok(rows)
}

/// CSV with columns `gamma, sigma, domain, mean, variance`.
pub fn write_sweep(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| IrisError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::metrics::JudgeKind;

    fn score(id: &str, aspect: Aspect, raw: f64) -> ScoreRecord {
        ScoreRecord::new(id, Domain::E, aspect, raw, JudgeKind::Mock).unwrap()
    }

    #[test]
    fn domain_summary_pairs_aspects_per_question() {
        let scores = vec![
            score("a", Aspect::Positive, 4.0),
            score("a", Aspect::Negative, 2.0),
            score("b", Aspect::Positive, 5.0),
            score("b", Aspect::Negative, 1.0),
            score("c", Aspect::Positive, 3.0),
        ];
        let s = domain_summary(&scores).unwrap();
        // a: 4 + 4 = 8, b: 5 + 5 = 10
        assert_eq!(s[&Domain::E], (9.0, 1.0));
    }
}
