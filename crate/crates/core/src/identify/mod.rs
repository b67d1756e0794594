//! Contrastive identification of situational persona neurons.
//!
//! Each question is answered twice, once under the positive persona prompt
//! and once under the negative one. Activation statistics are pooled over
//! all generation tokens of all questions (token-weighted), and the
//! difference of activation probabilities `ΔP = P⁺ − P⁻` splits neurons
//! into positive (`ΔP > τ`), negative (`ΔP < −τ`) and irrelevant sets.

mod prompts;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use prompts::{PersonaPair, PromptTemplate, QUESTION_PLACEHOLDER};

use crate::bank::{NeuronBank, PersonaNeuronRecord};
use crate::error::{IrisError, Result};
use crate::harness::QuestionRecord;
use crate::parallel::ordered_map;
use crate::probe::{ActivationStats, ProbabilityMatrix, SampleMode, StatsOptions, DEFAULT_RESERVOIR_CAP};
use crate::runtime::{ByteTokenizer, ModelHandle, TapSpec};
use crate::types::{default_topics, Aspect, Domain, NeuronLoc, GLOBAL_TOPIC};

pub const DEFAULT_THRESHOLD: f64 = 0.10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentifyConfig {
    pub threshold: f64,
    pub max_new_tokens: usize,
    pub domains: Vec<Domain>,
    pub topics: Vec<String>,
    /// Pool every topic of a domain into the single `global` topic.
    pub global_mode: bool,
    pub seed: u64,
    pub workers: usize,
    pub sample_mode: SampleMode,
    pub reservoir_cap: usize,
}

impl Default for IdentifyConfig {
    fn default() -> Self {
        IdentifyConfig {
            threshold: DEFAULT_THRESHOLD,
            max_new_tokens: 32,
            domains: Domain::ALL.to_vec(),
            topics: default_topics(),
            global_mode: false,
            seed: 0,
            workers: 1,
            sample_mode: SampleMode::AllTokens,
            reservoir_cap: DEFAULT_RESERVOIR_CAP,
        }
    }
}

impl IdentifyConfig {
    pub fn validate(&self) -> Result<()> {
        validate_threshold(self.threshold)?;
        if self.max_new_tokens == 0 {
            return Err(IrisError::InvalidArgument("max_new_tokens must be positive".into()));
        }
        if self.domains.is_empty() {
            return Err(IrisError::InvalidArgument("no domains selected".into()));
        }
        if self.topics.is_empty() && !self.global_mode {
            return Err(IrisError::InvalidArgument("no topics selected".into()));
        }
        Ok(())
    }

    fn stats_options(&self, seed: u64) -> StatsOptions {
        StatsOptions {
            cap: self.reservoir_cap,
            mode: self.sample_mode,
            seed,
        }
    }
}

fn validate_threshold(threshold: f64) -> Result<()> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(IrisError::InvalidArgument(format!(
            "threshold {threshold} outside (0, 1)"
        )));
    }
    Ok(())
}

/// `P⁺ − P⁻` for one (domain, topic), row-major `[n_layers, ffn_dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaMatrix {
    pub domain: Domain,
    pub topic: String,
    pub n_layers: usize,
    pub ffn_dim: usize,
    pub values: Vec<f64>,
}

impl DeltaMatrix {
    pub fn from_probabilities(
        domain: Domain,
        topic: impl Into<String>,
        positive: &ProbabilityMatrix,
        negative: &ProbabilityMatrix,
    ) -> Result<Self> {
        if (positive.n_layers, positive.ffn_dim) != (negative.n_layers, negative.ffn_dim) {
            return Err(IrisError::DimensionMismatch {
                context: "probability matrices".into(),
                expected: positive.values.len(),
                found: negative.values.len(),
            });
        }
        Ok(DeltaMatrix {
            domain,
            topic: topic.into(),
            n_layers: positive.n_layers,
            ffn_dim: positive.ffn_dim,
            values: positive
                .values
                .iter()
                .zip(&negative.values)
                .map(|(p, n)| p - n)
                .collect(),
        })
    }

    pub fn get(&self, loc: NeuronLoc) -> f64 {
        self.values[loc.flat(self.ffn_dim)]
    }

    pub fn negated(&self) -> DeltaMatrix {
        DeltaMatrix {
            values: self.values.iter().map(|v| -v).collect(),
            ..self.clone()
        }
    }
}

/// Flat indices of the three neuron classes.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Partition {
    pub positive: Vec<usize>,
    pub negative: Vec<usize>,
    pub irrelevant: Vec<usize>,
}

/// Strict thresholding: `|ΔP| = τ` is irrelevant.
pub fn partition(delta: &[f64], threshold: f64) -> Partition {
    let mut p = Partition::default();
    for (i, &d) in delta.iter().enumerate() {
        if d > threshold {
            p.positive.push(i);
        } else if d < -threshold {
            p.negative.push(i);
        } else {
            p.irrelevant.push(i);
        }
    }
    p
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub positive: Vec<PersonaNeuronRecord>,
    pub negative: Vec<PersonaNeuronRecord>,
    pub irrelevant: usize,
}

impl Classification {
    /// Positive and negative records together, ordered by location.
    pub fn records(&self) -> Vec<PersonaNeuronRecord> {
        let mut all: Vec<_> = self.positive.iter().chain(&self.negative).cloned().collect();
        all.sort_by_key(|r| r.loc);
        all
    }
}

/// Builds persona neuron records from a delta matrix. Positive records
/// carry `P⁺` and the 95th percentile of the positive run's samples;
/// negative records carry `P⁻` and the negative run's percentile.
pub fn classify(
    delta: &DeltaMatrix,
    positive: &ActivationStats,
    negative: &ActivationStats,
    threshold: f64,
) -> Result<Classification> {
    validate_threshold(threshold)?;
    let shape = (delta.n_layers, delta.ffn_dim);
    if positive.shape() != shape || negative.shape() != shape {
        return Err(IrisError::DimensionMismatch {
            context: "classify inputs".into(),
            expected: delta.values.len(),
            found: positive.shape().0 * positive.shape().1,
        });
    }
    let p_pos = positive.activation_probability()?;
    let p_neg = negative.activation_probability()?;
    let part = partition(&delta.values, threshold);
    let record = |flat: usize, stats: &ActivationStats, probs: &ProbabilityMatrix| {
        let loc = NeuronLoc::from_flat(flat, delta.ffn_dim);
        PersonaNeuronRecord::new(
            loc,
            delta.values[flat],
            probs.values[flat],
            stats.percentile(loc, 95.0)?,
        )
    };
    Ok(Classification {
        positive: part
            .positive
            .iter()
            .map(|&i| record(i, positive, &p_pos))
            .collect::<Result<_>>()?,
        negative: part
            .negative
            .iter()
            .map(|&i| record(i, negative, &p_neg))
            .collect::<Result<_>>()?,
        irrelevant: part.irrelevant.len(),
    })
}

/// Generates from `prompt` and accumulates generation-phase statistics.
pub fn probe_prompt(
    model: &ModelHandle,
    prompt: &str,
    max_new: usize,
    options: StatsOptions,
) -> Result<ActivationStats> {
    let cfg = model.config();
    let tokens = ByteTokenizer::new(cfg.vocab_size).tokenize(prompt.as_bytes())?;
    let transcript = model.generate(&tokens, max_new, None, &TapSpec::generation_only(cfg.n_layers))?;
    let mut stats = ActivationStats::new(cfg.n_layers, cfg.ffn_dim, options);
    stats.observe_transcript(&transcript)?;
    Ok(stats)
}

/// Seed of one (question, aspect) shard; independent of question order.
fn shard_seed(base: u64, question_id: &str, aspect: Aspect) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ base;
    for b in question_id.bytes().chain(aspect.as_str().bytes()) {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Debug, Clone)]
pub struct Identification {
    pub delta: DeltaMatrix,
    pub positive: ActivationStats,
    pub negative: ActivationStats,
}

/// Runs every question under both persona prompts and pools statistics
/// per aspect.
pub fn identify(
    model: &ModelHandle,
    domain: Domain,
    topic: &str,
    questions: &[QuestionRecord],
    prompts: &PersonaPair,
    cfg: &IdentifyConfig,
) -> Result<Identification> {
    if questions.is_empty() {
        return Err(IrisError::EmptyQuestions);
    }
    let (l, h) = (model.config().n_layers, model.config().ffn_dim);
    let shards = ordered_map(cfg.workers, questions, |q| {
        let run = |aspect: Aspect| {
            let text = prompts.for_aspect(aspect).render(&q.text);
            probe_prompt(
                model,
                &text,
                cfg.max_new_tokens,
                cfg.stats_options(shard_seed(cfg.seed, &q.id, aspect)),
            )
        };
        let wrap = |e: IrisError| IrisError::Generation {
            question_id: q.id.clone(),
            source: Box::new(e),
        };
        Ok((
            run(Aspect::Positive).map_err(wrap)?,
            run(Aspect::Negative).map_err(wrap)?,
        ))
    })?;
    let mut positive = ActivationStats::new(l, h, cfg.stats_options(cfg.seed));
    let mut negative = ActivationStats::new(l, h, cfg.stats_options(cfg.seed ^ 1));
    for (p, n) in &shards {
        positive = positive.merge(p)?;
        negative = negative.merge(n)?;
    }
    let delta = DeltaMatrix::from_probabilities(
        domain,
        topic,
        &positive.activation_probability()?,
        &negative.activation_probability()?,
    )?;
    Ok(Identification {
        delta,
        positive,
        negative,
    })
}

/// Question groups per (domain, topic) as identification will see them.
pub fn group_questions<'q>(
    questions: &'q [QuestionRecord],
    domain: Domain,
    cfg: &IdentifyConfig,
) -> Vec<(String, Vec<QuestionRecord>)> {
    let in_domain: Vec<&'q QuestionRecord> = questions.iter().filter(|q| q.domain == domain).collect();
    if cfg.global_mode {
        if in_domain.is_empty() {
            return Vec::new();
        }
        return vec![(GLOBAL_TOPIC.to_string(), in_domain.into_iter().cloned().collect())];
    }
    for q in &in_domain {
        if !cfg.topics.contains(&q.topic) {
            log::warn!(
                "question `{}` has topic `{}` outside the topic list; ignored",
                q.id,
                q.topic
            );
        }
    }
    let mut groups = Vec::new();
    for topic in &cfg.topics {
        let qs: Vec<QuestionRecord> = in_domain
            .iter()
            .filter(|q| &q.topic == topic)
            .map(|q| (*q).clone())
            .collect();
        if qs.is_empty() {
            log::warn!("no questions for domain {domain} / topic `{topic}`; skipped");
            continue;
        }
        groups.push((topic.clone(), qs));
    }
    groups
}

/// Identifies every configured (domain, topic) and collects the records
/// into a bank tied to `model`'s fingerprint.
pub fn identify_bank(
    model: &ModelHandle,
    questions: &[QuestionRecord],
    prompts: &BTreeMap<Domain, PersonaPair>,
    cfg: &IdentifyConfig,
) -> Result<NeuronBank> {
    cfg.validate()?;
    let mc = model.config();
    let mut bank = NeuronBank::new(model.fingerprint(), cfg.clone(), mc.n_layers, mc.ffn_dim);
    for &domain in &cfg.domains {
        let pair = prompts
            .get(&domain)
            .ok_or_else(|| IrisError::InvalidArgument(format!("no persona prompts for domain {domain}")))?;
        for (topic, qs) in group_questions(questions, domain, cfg) {
            let ident = identify(model, domain, &topic, &qs, pair, cfg)?;
            let classes = classify(&ident.delta, &ident.positive, &ident.negative, cfg.threshold)?;
            log::info!(
                "{domain} / {topic}: {} positive, {} negative persona neurons over {} questions",
                classes.positive.len(),
                classes.negative.len(),
                qs.len()
            );
            bank.insert(domain, &topic, classes.records())?;
        }
    }
    if bank.is_empty() {
        return Err(IrisError::EmptyQuestions);
    }
    Ok(bank)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{PlantedModel, PlantedSpec};
    use proptest::prelude::*;

    fn planted() -> (PlantedModel, ModelHandle) {
        let p = PlantedModel::build(PlantedSpec::default()).unwrap();
        let h = p.handle().unwrap();
        (p, h)
    }

    fn cfg() -> IdentifyConfig {
        IdentifyConfig {
            max_new_tokens: 4,
            domains: vec![Domain::E],
            topics: vec!["alpha".into(), "beta".into(), "gamma".into()],
            workers: 2,
            ..IdentifyConfig::default()
        }
    }

    #[test]
    fn classify_boundaries_are_strict() {
        let p = partition(&[0.11, 0.10, -0.10, -0.11, 0.0], 0.10);
        assert_eq!(p.positive, vec![0]);
        assert_eq!(p.negative, vec![3]);
        assert_eq!(p.irrelevant, vec![1, 2, 4]);
    }

    #[test]
    fn planted_marker_neuron_has_unit_delta() {
        let (p, h) = planted();
        let qs = p.questions(Domain::E, 3, 5);
        let alpha: Vec<_> = qs.iter().filter(|q| q.topic == "alpha").cloned().collect();
        let id = identify(&h, Domain::E, "alpha", &alpha, &p.prompts(Domain::E), &cfg()).unwrap();
        assert_eq!(id.delta.get(p.layout.pos_detector()), 1.0);
        assert_eq!(id.delta.get(p.layout.neg_detector()), -1.0);
        assert_eq!(id.delta.get(p.layout.always_on()), 0.0);
    }

    #[test]
    fn identical_prompts_give_zero_delta_and_swap_negates() {
        let (p, h) = planted();
        let qs = p.questions(Domain::E, 2, 1);
        let pair = p.prompts(Domain::E);
        let same = PersonaPair {
            positive: pair.positive.clone(),
            negative: PromptTemplate {
                aspect: Aspect::Negative,
                ..pair.positive.clone()
            },
        };
        let z = identify(&h, Domain::E, "all", &qs, &same, &cfg()).unwrap();
        assert!(z.delta.values.iter().all(|&v| v == 0.0));
        let fwd = identify(&h, Domain::E, "all", &qs, &pair, &cfg()).unwrap();
        let rev = identify(&h, Domain::E, "all", &qs, &pair.swapped(), &cfg()).unwrap();
        assert_eq!(rev.delta.values, fwd.delta.negated().values);
    }

    #[test]
    fn empty_question_set_is_an_error() {
        let (p, h) = planted();
        let r = identify(&h, Domain::E, "alpha", &[], &p.prompts(Domain::E), &cfg());
        assert!(matches!(r, Err(IrisError::EmptyQuestions)));
    }

    #[test]
    fn generation_errors_carry_question_id() {
        let (p, h) = planted();
        let mut qs = p.questions(Domain::E, 1, 1);
        qs[0].text = "x".repeat(500);
        qs[0].id = "too-long".into();
        match identify(&h, Domain::E, "alpha", &qs, &p.prompts(Domain::E), &cfg()) {
            Err(IrisError::Generation { question_id, .. }) => assert_eq!(question_id, "too-long"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn classify_records_take_raw_probability_of_their_aspect() {
        let (p, h) = planted();
        let qs = p.questions(Domain::E, 3, 2);
        let beta: Vec<_> = qs.iter().filter(|q| q.topic == "beta").cloned().collect();
        let id = identify(&h, Domain::E, "beta", &beta, &p.prompts(Domain::E), &cfg()).unwrap();
        let c = classify(&id.delta, &id.positive, &id.negative, 0.10).unwrap();
        let pp = id.positive.activation_probability().unwrap();
        let pn = id.negative.activation_probability().unwrap();
        for r in &c.positive {
            assert_eq!(r.polarity, Aspect::Positive);
            assert!((r.raw_aspect_prob - pp.get(r.loc)).abs() < 1e-8);
        }
        for r in &c.negative {
            assert_eq!(r.polarity, Aspect::Negative);
            assert!((r.raw_aspect_prob - pn.get(r.loc)).abs() < 1e-8);
        }
        assert_eq!(
            c.positive.len() + c.negative.len() + c.irrelevant,
            id.delta.values.len()
        );
    }

    #[test]
    fn global_mode_matches_merged_topic_stats() {
        let (p, h) = planted();
        let qs = p.questions(Domain::E, 2, 3);
        let pair = p.prompts(Domain::E);
        let c = cfg();
        let mut pos = ActivationStats::new(2, 16, StatsOptions::default());
        let mut neg = ActivationStats::new(2, 16, StatsOptions::default());
        for (topic, group) in group_questions(&qs, Domain::E, &c) {
            let id = identify(&h, Domain::E, &topic, &group, &pair, &c).unwrap();
            pos = pos.merge(&id.positive).unwrap();
            neg = neg.merge(&id.negative).unwrap();
        }
        let merged = DeltaMatrix::from_probabilities(
            Domain::E,
            GLOBAL_TOPIC,
            &pos.activation_probability().unwrap(),
            &neg.activation_probability().unwrap(),
        )
        .unwrap();
        let global_cfg = IdentifyConfig { global_mode: true, ..c };
        let groups = group_questions(&qs, Domain::E, &global_cfg);
        assert_eq!(groups.len(), 1);
        let g = identify(&h, Domain::E, GLOBAL_TOPIC, &groups[0].1, &pair, &global_cfg).unwrap();
        assert_eq!(partition(&g.delta.values, 0.1), partition(&merged.values, 0.1));
    }

    #[test]
    fn question_order_does_not_change_the_bank() {
        let (p, h) = planted();
        let mut qs = p.questions(Domain::E, 3, 4);
        let mut prompts = BTreeMap::new();
        prompts.insert(Domain::E, p.prompts(Domain::E));
        let a = identify_bank(&h, &qs, &prompts, &cfg()).unwrap();
        qs.reverse();
        let b = identify_bank(&h, &qs, &prompts, &cfg()).unwrap();
        assert_eq!(a.to_canonical_string(), b.to_canonical_string());
    }

    proptest! {
        #[test]
        fn partition_laws(
            delta in proptest::collection::vec(-1.0f64..=1.0, 1..64),
            t1 in 0.01f64..0.5,
            t2 in 0.01f64..0.5,
        ) {
            let p = partition(&delta, t1);
            let mut all: Vec<usize> = p.positive.iter().chain(&p.negative).chain(&p.irrelevant).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..delta.len()).collect::<Vec<_>>());
            let neg: Vec<f64> = delta.iter().map(|v| -v).collect();
            let q = partition(&neg, t1);
            prop_assert_eq!(&q.positive, &p.negative);
            prop_assert_eq!(&q.negative, &p.positive);
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let (pl, ph) = (partition(&delta, lo), partition(&delta, hi));
            prop_assert!(ph.positive.iter().all(|i| pl.positive.contains(i)));
            prop_assert!(ph.negative.iter().all(|i| pl.negative.contains(i)));
        }
    }
}
