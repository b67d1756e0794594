//! Situation retrieval: compare a question's activation-difference vector
//! with every topic's bank vector and normalize the similarities.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::bank::{FeatureMode, NeuronBank};
use crate::error::{IrisError, Result};
use crate::identify::{probe_prompt, PersonaPair};
use crate::probe::StatsOptions;
use crate::runtime::ModelHandle;
use crate::types::{Aspect, Domain};

/// Cosine similarity plus a flag set when either input had zero norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cosine {
    pub value: f64,
    pub degenerate: bool,
}

/// `v·w / (‖v‖‖w‖)`; zero (flagged) when either norm is zero.
pub fn cosine(v: &[f64], w: &[f64]) -> Result<Cosine> {
    if v.len() != w.len() {
        return Err(IrisError::DimensionMismatch {
            context: "cosine operands".into(),
            expected: v.len(),
            found: w.len(),
        });
    }
    let dot: f64 = v.iter().zip(w).map(|(a, b)| a * b).sum();
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nw = w.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nv == 0.0 || nw == 0.0 {
        return Ok(Cosine {
            value: 0.0,
            degenerate: true,
        });
    }
    Ok(Cosine {
        value: (dot / (nv * nw)).clamp(-1.0, 1.0),
        degenerate: false,
    })
}

/// Softmax with temperature one.
pub fn coefficients(similarities: &[f64]) -> Result<Vec<f64>> {
    coefficients_with_temperature(similarities, 1.0)
}

pub fn coefficients_with_temperature(similarities: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if similarities.is_empty() {
        return Err(IrisError::InvalidArgument("no similarities to normalize".into()));
    }
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(IrisError::InvalidArgument(format!(
            "temperature {temperature} must be > 0"
        )));
    }
    if similarities.iter().any(|s| !s.is_finite()) {
        return Err(IrisError::NonFinite("similarities".into()));
    }
    let max = similarities.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = similarities.iter().map(|s| ((s - max) / temperature).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// `P⁺ − P⁻` over the generation tokens of one question, flattened as
/// `layer * ffn_dim + unit`.
pub fn delta_vector(model: &ModelHandle, question: &str, prompts: &PersonaPair, max_new: usize) -> Result<Vec<f64>> {
    if question.is_empty() {
        return Err(IrisError::InvalidArgument("empty question".into()));
    }
    let counts_only = StatsOptions {
        cap: 0,
        ..StatsOptions::default()
    };
    let run = |aspect: Aspect| -> Result<Vec<f64>> {
        let text = prompts.for_aspect(aspect).render(question);
        Ok(probe_prompt(model, &text, max_new, counts_only)?
            .activation_probability()?
            .values)
    };
    let pos = run(Aspect::Positive)?;
    let neg = run(Aspect::Negative)?;
    Ok(pos.iter().zip(&neg).map(|(p, n)| p - n).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityProfile {
    pub domain: Domain,
    pub similarities: BTreeMap<String, f64>,
    pub coefficients: BTreeMap<String, f64>,
    /// Topics whose similarity hit the zero-norm guard.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub degenerate_topics: Vec<String>,
}

impl SimilarityProfile {
    /// Topic with the largest coefficient; first in sorted order on ties.
    pub fn argmax(&self) -> &str {
        let mut best: Option<(&str, f64)> = None;
        for (t, &c) in &self.coefficients {
            if best.is_none_or(|(_, b)| c > b) {
                best = Some((t, c));
            }
        }
        best.map(|(t, _)| t).unwrap_or_default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetrieveOptions {
    pub mode: FeatureMode,
    pub temperature: f64,
}

impl Default for RetrieveOptions {
    fn default() -> Self {
        RetrieveOptions {
            mode: FeatureMode::SignedDelta,
            temperature: 1.0,
        }
    }
}

pub fn retrieve(
    bank: &NeuronBank,
    domain: Domain,
    delta_v: &[f64],
    options: RetrieveOptions,
) -> Result<SimilarityProfile> {
    let topics = bank.topics(domain);
    if topics.is_empty() {
        return Err(IrisError::MissingCondition {
            domain: domain.to_string(),
            topic: "*".into(),
        });
    }
    if delta_v.len() != bank.vector_len() {
        return Err(IrisError::DimensionMismatch {
            context: "Δv".into(),
            expected: bank.vector_len(),
            found: delta_v.len(),
        });
    }
    let mut sims = Vec::with_capacity(topics.len());
    let mut degenerate_topics = Vec::new();
    for &t in &topics {
        let c = cosine(delta_v, &bank.feature_vector(domain, t, options.mode)?)?;
        if c.degenerate {
            log::warn!("zero-norm vector while comparing with {domain} / {t}; similarity set to 0");
            degenerate_topics.push(t.to_string());
        }
        sims.push(c.value);
    }
    let coefs = coefficients_with_temperature(&sims, options.temperature)?;
    Ok(SimilarityProfile {
        domain,
        similarities: topics.iter().map(|t| t.to_string()).zip(sims).collect(),
        coefficients: topics.iter().map(|t| t.to_string()).zip(coefs).collect(),
        degenerate_topics,
    })
}
