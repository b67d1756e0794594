use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde_json::{json, Value};

use iris_core::analysis::{self, svg, FeatureMatrix};
use iris_core::bank::NeuronBank;
use iris_core::harness::{self, domain_summary, ExternalJudge, Judge, JudgeKind, MockJudge, QuestionRecord, SteerJob};
use iris_core::identify::{identify_bank, PersonaPair};
use iris_core::retrieve::{delta_vector, retrieve as retrieve_profile};
use iris_core::runtime::{load_model, ByteTokenizer, ModelHandle, TapSpec};
use iris_core::steer::{steer_generate, unsteered_generate, SteeringConfig};
use iris_core::synthetic::write_demo_workspace;
use iris_core::types::{Aspect, Domain, UNKNOWN_TOPIC};

use crate::config::{JudgeChoice, RunConfig};
use crate::summary::Summary;
use crate::{AspectChoice, UsageError};

fn ensure_parent(path: &Path) -> anyhow::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    Ok(())
}

fn questions(path: &Path) -> anyhow::Result<Vec<QuestionRecord>> {
    let set = harness::load_questions(path)?;
    for bad in &set.rejected {
        log::warn!("{}:{}: {}", path.display(), bad.line, bad.message);
    }
    Ok(set.records)
}

fn prompt_pairs(
    cfg: &RunConfig,
    domains: impl IntoIterator<Item = Domain>,
) -> anyhow::Result<BTreeMap<Domain, PersonaPair>> {
    let dir = cfg.prompts()?;
    domains
        .into_iter()
        .map(|d| Ok((d, PersonaPair::load_dir(dir, d)?)))
        .collect()
}

fn model_and_bank(cfg: &RunConfig, s: &mut Summary) -> anyhow::Result<(ModelHandle, NeuronBank)> {
    s.phase("load", || -> anyhow::Result<_> {
        let model = load_model(cfg.model()?)?;
        let bank = NeuronBank::load(&cfg.bank)?;
        bank.check_fingerprint(model.fingerprint())?;
        Ok((model, bank))
    })
}

fn judge(cfg: &RunConfig) -> anyhow::Result<Box<dyn Judge>> {
    Ok(match cfg.judge.kind {
        JudgeChoice::Mock => {
            let dir = cfg
                .judge
                .keywords
                .as_deref()
                .ok_or_else(|| UsageError("`judge.keywords` is not set".into()))?;
            Box::new(MockJudge::load_dir(dir)?)
        }
        JudgeChoice::External => Box::new(ExternalJudge::new(cfg.external_judge()?)?),
    })
}

fn judge_kind(cfg: &RunConfig) -> JudgeKind {
    match cfg.judge.kind {
        JudgeChoice::Mock => JudgeKind::Mock,
        JudgeChoice::External => JudgeKind::External,
    }
}

pub fn init(dir: &Path, seed: u64) -> anyhow::Result<Summary> {
    let mut s = Summary::new("init");
    s.phase("write", || write_demo_workspace(dir, seed))?;
    s.output("config", &dir.join("iris.toml"));
    Ok(s.finish(json!({ "seed": seed })))
}

pub fn identify(cfg: &RunConfig) -> anyhow::Result<Summary> {
    let mut s = Summary::new("identify");
    let (model, qs, prompts) = s.phase("load", || -> anyhow::Result<_> {
        Ok((
            load_model(cfg.model()?)?,
            questions(cfg.questions()?)?,
            prompt_pairs(cfg, cfg.domains.iter().copied())?,
        ))
    })?;
    let bank = s.phase("identify", || {
        identify_bank(&model, &qs, &prompts, &cfg.identify_config())
    })?;
    s.phase("save", || -> anyhow::Result<()> {
        ensure_parent(&cfg.bank)?;
        Ok(bank.save(&cfg.bank)?)
    })?;
    s.output("bank", &cfg.bank);
    let mut entries = BTreeMap::new();
    for (domain, topic, records) in bank.entries() {
        let pos = records.iter().filter(|r| r.delta_p > 0.0).count();
        entries.insert(
            format!("{domain}/{topic}"),
            json!({ "positive": pos, "negative": records.len() - pos }),
        );
    }
    Ok(s.finish(json!({
        "model_fingerprint": bank.model_fingerprint,
        "questions": qs.len(),
        "records": bank.record_count(),
        "entries": entries,
    })))
}

fn job<'a>(
    cfg: &RunConfig,
    model: &'a ModelHandle,
    bank: &'a NeuronBank,
    prompts: &'a BTreeMap<Domain, PersonaPair>,
) -> SteerJob<'a> {
    SteerJob {
        model,
        bank,
        prompts,
        max_new_tokens: cfg.max_new_tokens,
        retrieve: cfg.retrieve_options(),
        workers: cfg.workers,
    }
}

fn question_domains(qs: &[QuestionRecord]) -> BTreeSet<Domain> {
    qs.iter().map(|q| q.domain).collect()
}

pub fn retrieve(
    cfg: &RunConfig,
    question: Option<&str>,
    domain: Option<Domain>,
    out: Option<PathBuf>,
) -> anyhow::Result<Summary> {
    let mut s = Summary::new("retrieve");
    let (model, bank) = model_and_bank(cfg, &mut s)?;
    if let Some(text) = question {
        let domain = domain.ok_or_else(|| UsageError("--question needs --domain".into()))?;
        let prompts = prompt_pairs(cfg, [domain])?;
        let profile = s.phase("retrieve", || -> anyhow::Result<_> {
            let dv = delta_vector(&model, text, &prompts[&domain], cfg.max_new_tokens)?;
            Ok(retrieve_profile(&bank, domain, &dv, cfg.retrieve_options())?)
        })?;
        let argmax = profile.argmax().to_string();
        return Ok(s.finish(json!({ "argmax": argmax, "profile": profile })));
    }
    let qs = questions(cfg.test_questions()?)?;
    let prompts = prompt_pairs(cfg, question_domains(&qs))?;
    let prepared = s.phase("retrieve", || job(cfg, &model, &bank, &prompts).prepare(&qs))?;
    let out = out.unwrap_or_else(|| cfg.out_dir.join("retrieval.jsonl"));
    let mut text = String::new();
    let (mut labelled, mut hits) = (0usize, 0usize);
    for p in &prepared {
        let argmax = p.profile.argmax();
        if p.question.topic != UNKNOWN_TOPIC {
            labelled += 1;
            hits += usize::from(argmax == p.question.topic);
        }
        let line = json!({
            "question_id": p.question.id,
            "domain": p.question.domain,
            "topic": p.question.topic,
            "argmax": argmax,
            "similarities": p.profile.similarities,
            "coefficients": p.profile.coefficients,
            "degenerate_topics": p.profile.degenerate_topics,
        });
        text.push_str(&line.to_string());
        text.push('\n');
    }
    s.phase("write", || -> anyhow::Result<()> {
        ensure_parent(&out)?;
        fs::write(&out, text).with_context(|| format!("writing {}", out.display()))
    })?;
    s.output("retrieval", &out);
    let accuracy = (labelled > 0).then(|| hits as f64 / labelled as f64);
    Ok(s.finish(json!({ "questions": prepared.len(), "labelled": labelled, "argmax_accuracy": accuracy })))
}

pub fn steer(cfg: &RunConfig, aspect: AspectChoice, out: Option<PathBuf>) -> anyhow::Result<Summary> {
    let mut s = Summary::new("steer");
    let (model, bank) = model_and_bank(cfg, &mut s)?;
    let qs = questions(cfg.test_questions()?)?;
    let prompts = prompt_pairs(cfg, question_domains(&qs))?;
    let job = job(cfg, &model, &bank, &prompts);
    let prepared = s.phase("retrieve", || job.prepare(&qs))?;
    let records = s.phase("generate", || {
        job.steer(&prepared, &aspect.aspects(), cfg.gamma, cfg.sigma)
    })?;
    let out = out.unwrap_or_else(|| cfg.out_dir.join("steer.jsonl"));
    s.phase("write", || -> anyhow::Result<()> {
        ensure_parent(&out)?;
        Ok(harness::write_steer_jsonl(&out, &records)?)
    })?;
    s.output("steer", &out);
    Ok(s.finish(json!({
        "questions": qs.len(),
        "responses": records.len(),
        "gamma": cfg.gamma,
        "sigma": cfg.sigma,
    })))
}

pub struct GenerateRequest {
    pub text: Option<String>,
    pub question: Option<String>,
    pub domain: Option<Domain>,
    pub aspect: Option<Aspect>,
    pub steered: bool,
    pub taps: Option<PathBuf>,
}

pub fn generate(cfg: &RunConfig, req: GenerateRequest) -> anyhow::Result<Summary> {
    let mut s = Summary::new("generate");
    let model = s.phase("load", || load_model(cfg.model()?).map_err(anyhow::Error::from))?;
    let n_layers = model.config().n_layers;
    let taps = if req.taps.is_some() {
        TapSpec::all(n_layers)
    } else {
        TapSpec::none()
    };
    let tokenizer = ByteTokenizer::new(model.config().vocab_size);
    let mut extra = Value::Null;
    let transcript = match (&req.text, &req.question) {
        (Some(text), _) => s.phase("generate", || -> anyhow::Result<_> {
            let prompt = tokenizer.tokenize(text.as_bytes())?;
            Ok(model.generate(&prompt, cfg.max_new_tokens, None, &taps)?)
        })?,
        (None, Some(question)) => {
            let domain = req
                .domain
                .ok_or_else(|| UsageError("--question needs --domain".into()))?;
            let aspect = req.aspect.unwrap_or(Aspect::Positive);
            let pair = prompt_pairs(cfg, [domain])?.remove(&domain).expect("loaded");
            if req.steered {
                let bank = NeuronBank::load(&cfg.bank)?;
                let sc = SteeringConfig {
                    gamma: cfg.gamma,
                    sigma: cfg.sigma,
                    target_domain: domain,
                    target_aspect: aspect,
                };
                let run = s.phase("generate", || {
                    steer_generate(
                        &model,
                        &bank,
                        question,
                        &sc,
                        &pair,
                        cfg.max_new_tokens,
                        cfg.retrieve_options(),
                        &taps,
                    )
                })?;
                extra = json!({ "profile": run.profile, "plan": run.plan.summary() });
                run.transcript
            } else {
                s.phase("generate", || {
                    unsteered_generate(&model, question, aspect, &pair, cfg.max_new_tokens, &taps)
                })?
            }
        }
        (None, None) => return Err(UsageError("generate needs --text or --question".into()).into()),
    };
    if let Some(path) = &req.taps {
        s.phase("write", || -> anyhow::Result<()> {
            ensure_parent(path)?;
            Ok(transcript.write(path, model.config().ffn_dim)?)
        })?;
        s.output("taps", path);
    }
    Ok(s.finish(json!({
        "response": tokenizer.render(&transcript.generated_tokens),
        "tokens": transcript.generated_tokens,
        "steering": extra,
    })))
}

fn scatter_points(rows: &[Vec<f64>]) -> Vec<(f64, f64)> {
    rows.iter()
        .map(|r| (r.first().copied().unwrap_or(0.0), r.get(1).copied().unwrap_or(0.0)))
        .collect()
}

/// Per-question Δv restricted to the domain's persona neurons, reduced by
/// PCA and projected by LDA onto topic-discriminant axes.
fn lda_pass(cfg: &RunConfig, bank: &NeuronBank, domain: Domain, s: &mut Summary) -> anyhow::Result<Value> {
    let model = load_model(cfg.model()?)?;
    bank.check_fingerprint(model.fingerprint())?;
    let pair = prompt_pairs(cfg, [domain])?.remove(&domain).expect("loaded");
    let qs: Vec<QuestionRecord> = questions(cfg.questions()?)?
        .into_iter()
        .filter(|q| q.domain == domain && q.topic != UNKNOWN_TOPIC)
        .collect();
    let columns: Vec<usize> = bank
        .topics(domain)
        .iter()
        .flat_map(|t| bank.records(domain, t).into_iter().flatten())
        .map(|r| r.loc.flat(bank.ffn_dim))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let classes: BTreeSet<&str> = qs.iter().map(|q| q.topic.as_str()).collect();
    if columns.is_empty() || classes.len() < 2 {
        return Ok(json!({ "skipped": "needs persona neurons and at least two labelled topics" }));
    }
    let rows = s.phase("delta_vectors", || -> anyhow::Result<Vec<Vec<f64>>> {
        qs.iter()
            .map(|q| Ok(delta_vector(&model, &q.text, &pair, cfg.max_new_tokens)?))
            .collect()
    })?;
    let labels: Vec<String> = qs.iter().map(|q| q.topic.clone()).collect();
    let m = FeatureMatrix::new(rows, Some(labels.clone()))?.select_columns(&columns);
    let k = 10.min(m.rows.len() - 1).min(m.dim());
    let reduced = analysis::pca(&m, k)?;
    let kept: Vec<usize> = (0..k).filter(|&i| reduced.explained_variance[i] > 0.0).collect();
    if kept.is_empty() {
        return Ok(json!({ "skipped": "per-question vectors have zero variance" }));
    }
    let projected: Vec<Vec<f64>> = reduced
        .projections
        .iter()
        .map(|r| kept.iter().map(|&i| r[i]).collect())
        .collect();
    let lda = analysis::lda(&projected, &labels, 2.min(classes.len() - 1).min(kept.len()))?;
    let csv_path = cfg.out_dir.join(format!("lda_{domain}.csv"));
    let svg_path = cfg.out_dir.join(format!("lda_{domain}.svg"));
    analysis::write_projections(&csv_path, &labels, &lda.projections, "ld")?;
    fs::write(
        &svg_path,
        svg::scatter(
            &scatter_points(&lda.projections),
            &labels,
            &format!("LDA, domain {domain}"),
        ),
    )?;
    s.output("lda_csv", &csv_path);
    s.output("lda_svg", &svg_path);
    Ok(json!({ "questions": qs.len(), "neurons": columns.len(), "pca_components": kept.len(), "ratios": lda.ratios }))
}

pub fn analyze(
    cfg: &RunConfig,
    domain: Domain,
    components: usize,
    scores: Option<PathBuf>,
    with_lda: bool,
) -> anyhow::Result<Summary> {
    let mut s = Summary::new("analyze");
    let bank = s.phase("load", || NeuronBank::load(&cfg.bank))?;
    fs::create_dir_all(&cfg.out_dir).with_context(|| format!("creating {}", cfg.out_dir.display()))?;
    let mut result = serde_json::Map::new();

    let table = analysis::layer_table(&bank, domain)?;
    let path = cfg.out_dir.join(format!("layers_{domain}.csv"));
    analysis::write_csv(&path, &table)?;
    s.output("layer_table", &path);

    let m = FeatureMatrix::from_bank(&bank, domain, cfg.feature_mode)?;
    if m.rows.len() >= 2 && m.dim() >= 1 {
        let k = components.min(m.rows.len() - 1).min(m.dim()).max(1);
        let p = s.phase("pca", || analysis::pca(&m, k))?;
        let labels = m.labels.clone().unwrap_or_default();
        let csv_path = cfg.out_dir.join(format!("pca_{domain}.csv"));
        let svg_path = cfg.out_dir.join(format!("pca_{domain}.svg"));
        analysis::write_projections(&csv_path, &labels, &p.projections, "pc")?;
        fs::write(
            &svg_path,
            svg::scatter(
                &scatter_points(&p.projections),
                &labels,
                &format!("PCA, domain {domain}"),
            ),
        )?;
        s.output("pca_csv", &csv_path);
        s.output("pca_svg", &svg_path);
        result.insert(
            "pca".into(),
            json!({ "components": k, "explained_variance": p.explained_variance, "total_variance": p.total_variance }),
        );
    }

    if with_lda {
        let v = lda_pass(cfg, &bank, domain, &mut s)?;
        result.insert("lda".into(), v);
    }

    if let Some(scores_path) = scores {
        let topic_of: BTreeMap<String, String> = questions(cfg.test_questions()?)?
            .into_iter()
            .map(|q| (q.id, q.topic))
            .collect();
        let mut per_topic: BTreeMap<String, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
        for r in harness::read_scores(&scores_path, judge_kind(cfg))? {
            if r.domain != domain {
                continue;
            }
            let topic = topic_of
                .get(&r.question_id)
                .ok_or_else(|| UsageError(format!("score for unknown question `{}`", r.question_id)))?;
            let slot = per_topic.entry(topic.clone()).or_default();
            match r.aspect {
                Aspect::Positive => slot.0.push(r.adjusted),
                Aspect::Negative => slot.1.push(r.adjusted),
            }
        }
        let impact = analysis::topic_impact(&per_topic)?;
        let path = cfg.out_dir.join(format!("topic_impact_{domain}.csv"));
        analysis::write_csv(&path, &impact.rows)?;
        s.output("topic_impact", &path);
        result.insert("topic_impact".into(), serde_json::to_value(&impact.rows)?);
    }
    Ok(s.finish(Value::Object(result)))
}

pub fn evaluate(cfg: &RunConfig, input: Option<PathBuf>, out: Option<PathBuf>) -> anyhow::Result<Summary> {
    let mut s = Summary::new("evaluate");
    let input = input.unwrap_or_else(|| cfg.out_dir.join("steer.jsonl"));
    let (records, judge) = s.phase("load", || -> anyhow::Result<_> {
        Ok((harness::read_steer_jsonl(&input)?, judge(cfg)?))
    })?;
    let scores = s.phase("judge", || harness::evaluate(&records, judge.as_ref()))?;
    let out = out.unwrap_or_else(|| cfg.out_dir.join("scores.csv"));
    s.phase("write", || -> anyhow::Result<()> {
        ensure_parent(&out)?;
        Ok(harness::write_scores(&out, &scores)?)
    })?;
    s.output("scores", &out);
    let summary: BTreeMap<String, Value> = domain_summary(&scores)?
        .into_iter()
        .map(|(d, (mean, variance))| (d.to_string(), json!({ "mean": mean, "variance": variance })))
        .collect();
    Ok(s.finish(json!({ "scores": scores.len(), "domains": summary })))
}

pub fn sweep(cfg: &RunConfig, gammas: &[f64], sigmas: &[f64], out: Option<PathBuf>) -> anyhow::Result<Summary> {
    let mut s = Summary::new("sweep");
    let (model, bank) = model_and_bank(cfg, &mut s)?;
    let qs = questions(cfg.test_questions()?)?;
    let prompts = prompt_pairs(cfg, question_domains(&qs))?;
    let judge = judge(cfg)?;
    let rows = s.phase("sweep", || {
        harness::sweep(&job(cfg, &model, &bank, &prompts), &qs, gammas, sigmas, judge.as_ref())
    })?;
    let out = out.unwrap_or_else(|| cfg.out_dir.join("sweep.csv"));
    s.phase("write", || -> anyhow::Result<()> {
        ensure_parent(&out)?;
        Ok(harness::write_sweep(&out, &rows)?)
    })?;
    s.output("sweep", &out);
    Ok(s.finish(json!({ "cells": gammas.len() * sigmas.len(), "rows": rows })))
}
