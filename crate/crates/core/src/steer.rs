//! Coefficient-weighted neuron steering.
//!
//! A [`SteeringPlan`] holds one additive delta per amplified neuron and a
//! set of clamped neurons. Amplified neurons are the records whose
//! polarity matches the target aspect; each topic containing the neuron
//! contributes `e_t · γ · a95 · f(ΔP)`. Clamped neurons are the
//! opposite-polarity records of every topic with `e_t > σ`, rewritten to
//! `min(0, n)`. A neuron that is amplified anywhere is never clamped.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bank::NeuronBank;
use crate::error::{IrisError, Result};
use crate::identify::PersonaPair;
use crate::retrieve::{delta_vector, retrieve, RetrieveOptions, SimilarityProfile};
use crate::runtime::{
    ByteTokenizer, HiddenTransform, InterventionHook, InterventionSet, ModelHandle, TapSpec, Transcript,
};
use crate::types::{Aspect, Domain, NeuronLoc};

pub const DEFAULT_GAMMA: f64 = 1.1;
pub const DEFAULT_SIGMA: f64 = 0.10;

/// `1 / (1 + e^{−10(|x| − 0.15)})`.
pub fn smooth(x: f64) -> f64 {
    1.0 / (1.0 + (-10.0 * (x.abs() - 0.15)).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteeringConfig {
    pub gamma: f64,
    pub sigma: f64,
    pub target_domain: Domain,
    pub target_aspect: Aspect,
}

impl SteeringConfig {
    pub fn new(target_domain: Domain, target_aspect: Aspect) -> Self {
        SteeringConfig {
            gamma: DEFAULT_GAMMA,
            sigma: DEFAULT_SIGMA,
            target_domain,
            target_aspect,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(IrisError::InvalidArgument(format!("gamma {} must be >= 0", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.sigma) {
            return Err(IrisError::InvalidArgument(format!(
                "sigma {} outside [0, 1]",
                self.sigma
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SteeringPlan {
    pub deltas: BTreeMap<NeuronLoc, f64>,
    pub clamp: BTreeSet<NeuronLoc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCounts {
    pub layer: usize,
    pub amplified: usize,
    pub clamped: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanSummary {
    pub amplified: usize,
    pub clamped: usize,
    pub per_layer: Vec<LayerCounts>,
}

/// Plan entries of one layer as an FFN hook.
#[derive(Debug, Clone, PartialEq)]
struct LayerTransform {
    deltas: Vec<(usize, f32)>,
    clamp: Vec<usize>,
}

impl HiddenTransform for LayerTransform {
    fn apply(&self, hidden: &mut [f32]) {
        for &(i, d) in &self.deltas {
            // A zero delta leaves the value bit-identical (keeps -0.0).
            if d != 0.0 {
                hidden[i] += d;
            }
        }
        for &i in &self.clamp {
            hidden[i] = hidden[i].min(0.0);
        }
    }
}

impl SteeringPlan {
    fn layers(&self) -> BTreeSet<usize> {
        self.deltas.keys().chain(&self.clamp).map(|l| l.layer).collect()
    }

    fn layer_transform(&self, layer: usize) -> LayerTransform {
        LayerTransform {
            deltas: self
                .deltas
                .iter()
                .filter(|(l, _)| l.layer == layer)
                .map(|(l, &d)| (l.unit, d as f32))
                .collect(),
            clamp: self.clamp.iter().filter(|l| l.layer == layer).map(|l| l.unit).collect(),
        }
    }

    /// Returns the rewritten hidden vector of `layer`.
    pub fn apply(&self, layer: usize, hidden: &[f32]) -> Vec<f32> {
        let mut out = hidden.to_vec();
        self.layer_transform(layer).apply(&mut out);
        out
    }

    /// One hook per layer that has plan entries.
    pub fn interventions(&self) -> InterventionSet {
        self.layers()
            .into_iter()
            .map(|layer| InterventionHook {
                layer,
                transform: Arc::new(self.layer_transform(layer)),
            })
            .collect()
    }

    pub fn summary(&self) -> PlanSummary {
        let per_layer = self
            .layers()
            .into_iter()
            .map(|layer| LayerCounts {
                layer,
                amplified: self.deltas.keys().filter(|l| l.layer == layer).count(),
                clamped: self.clamp.iter().filter(|l| l.layer == layer).count(),
            })
            .collect();
        PlanSummary {
            amplified: self.deltas.len(),
            clamped: self.clamp.len(),
            per_layer,
        }
    }
}

pub fn compile_plan(bank: &NeuronBank, profile: &SimilarityProfile, cfg: &SteeringConfig) -> Result<SteeringPlan> {
    cfg.validate()?;
    if profile.domain != cfg.target_domain {
        return Err(IrisError::DomainMismatch(format!(
            "profile is for {}, steering targets {}",
            profile.domain, cfg.target_domain
        )));
    }
    let mut plan = SteeringPlan::default();
    let mut opposed = BTreeSet::new();
    for (topic, &e) in &profile.coefficients {
        let records = bank.records(cfg.target_domain, topic).map_err(|_| {
            IrisError::TopicMismatch(format!(
                "profile topic `{topic}` missing from the bank for {}",
                cfg.target_domain
            ))
        })?;
        for r in records {
            if r.polarity == cfg.target_aspect {
                *plan.deltas.entry(r.loc).or_insert(0.0) += e * cfg.gamma * r.a95 * smooth(r.delta_p);
            } else if e > cfg.sigma {
                opposed.insert(r.loc);
            }
        }
    }
    plan.clamp = opposed.into_iter().filter(|l| !plan.deltas.contains_key(l)).collect();
    Ok(plan)
}

#[derive(Debug, Clone)]
pub struct SteeredRun {
    pub delta_v: Vec<f64>,
    pub profile: SimilarityProfile,
    pub plan: SteeringPlan,
    pub transcript: Transcript,
}

/// Retrieval, plan compilation and a steered generation under the target
/// aspect's persona prompt.
#[allow(clippy::too_many_arguments)]
pub fn steer_generate(
    model: &ModelHandle,
    bank: &NeuronBank,
    question: &str,
    cfg: &SteeringConfig,
    prompts: &PersonaPair,
    max_new: usize,
    retrieve_options: RetrieveOptions,
    taps: &TapSpec,
) -> Result<SteeredRun> {
    bank.check_fingerprint(model.fingerprint())?;
    let delta_v = delta_vector(model, question, prompts, max_new)?;
    let profile = retrieve(bank, cfg.target_domain, &delta_v, retrieve_options)?;
    let plan = compile_plan(bank, &profile, cfg)?;
    let text = prompts.for_aspect(cfg.target_aspect).render(question);
    let tokens = ByteTokenizer::new(model.config().vocab_size).tokenize(text.as_bytes())?;
    let transcript = model.generate(&tokens, max_new, Some(&plan.interventions()), taps)?;
    Ok(SteeredRun {
        delta_v,
        profile,
        plan,
        transcript,
    })
}

/// Plain persona-prompted generation, for comparison with a steered run.
pub fn unsteered_generate(
    model: &ModelHandle,
    question: &str,
    aspect: Aspect,
    prompts: &PersonaPair,
    max_new: usize,
    taps: &TapSpec,
) -> Result<Transcript> {
    let text = prompts.for_aspect(aspect).render(question);
    let tokens = ByteTokenizer::new(model.config().vocab_size).tokenize(text.as_bytes())?;
    model.generate(&tokens, max_new, None, taps)
}
