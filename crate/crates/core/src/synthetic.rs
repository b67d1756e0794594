//! Synthetic models with known ground truth.
//!
//! [`random_weights`] draws seeded uniform weights for oracle tests.
//! [`PlantedModel`] hand-wires a small relu transformer whose FFN units
//! respond to marker bytes, so identification and retrieval can be checked
//! against a known answer.
//!
//! # Planted layout
//!
//! Residual dimensions (`T` topics, `d = 5 + T`):
//!
//! | dim | meaning |
//! |-----|---------|
//! | 0 | constant, `C` in every token embedding |
//! | 1 | positive persona marker `+` |
//! | 2 | negative persona marker `-` |
//! | 3..3+T | topic markers |
//! | 3+T | positive trait readout |
//! | 4+T | negative trait readout |
//!
//! Layer 0 attention attends (almost) only to marker tokens and copies
//! their marker dims, so every later position sees the average of the
//! markers in its context. With one persona marker and one topic marker
//! in the prompt, each present marker contributes `α/2`.
//!
//! Layer 0 FFN: unit `k < T` detects topic `k`; unit `T` detects `+`;
//! unit `T+1` detects `-`; unit `T+2` is always on. None of them write to
//! the residual stream.
//!
//! Last layer FFN: for topic `k`, units `2kB..2kB+B` fire iff `+` and
//! topic `k` are both present, units `2kB+B..2(k+1)B` iff `-` and topic
//! `k`; unit `2TB` fires on `+`, unit `2TB+1` on `-`. Positive units feed
//! the positive trait dim, negative units the negative one. The head maps
//! the constant dim to `.`, the trait dims to `P` and `N`; `P` wins once
//! the positive trait readout exceeds [`PlantedSpec::flip_ratio`] times the
//! constant.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{IrisError, Result};
use crate::harness::QuestionRecord;
use crate::identify::{PersonaPair, PromptTemplate};
use crate::runtime::{ActivationKind, Matrix, ModelConfig, ModelHandle, ModelWeights, PositionalKind};
use crate::types::{Aspect, Domain, NeuronLoc};

/// Seeded uniform weights in `[-scale, scale]`; norm gains are one.
pub fn random_weights(config: ModelConfig, seed: u64, scale: f32) -> Result<ModelWeights> {
    let mut weights = ModelWeights::zeros(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fill = |m: &mut Matrix| {
        for v in m.data.iter_mut() {
            *v = rng.random_range(-scale..=scale);
        }
    };
    fill(&mut weights.tok_embedding);
    if let Some(p) = weights.pos_embedding.as_mut() {
        fill(p);
    }
    for layer in weights.layers.iter_mut() {
        fill(&mut layer.wq);
        fill(&mut layer.wk);
        fill(&mut layer.wv);
        fill(&mut layer.wo);
        fill(&mut layer.w1);
        if let Some(w3) = layer.w3.as_mut() {
            fill(w3);
        }
        fill(&mut layer.w2);
    }
    if let Some(h) = weights.lm_head.as_mut() {
        fill(h);
    }
    Ok(weights)
}

pub const POS_MARKER: u8 = b'+';
pub const NEG_MARKER: u8 = b'-';
pub const TOPIC_MARKERS: [u8; 6] = *b"#@&%^*";
pub const NEUTRAL_TOKEN: u8 = b'.';
pub const POS_TRAIT_TOKEN: u8 = b'P';
pub const NEG_TRAIT_TOKEN: u8 = b'N';
const FILLER: &[u8] = b"abcdefghijklmnopqrstuvwxyz    ";

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedSpec {
    pub n_topics: usize,
    /// Units per (topic, aspect) block in the last layer.
    pub block_size: usize,
    pub n_layers: usize,
    pub ffn_dim: usize,
    pub max_context: usize,
    /// Positive trait readout / constant readout ratio at which `P`
    /// overtakes `.`.
    pub flip_ratio: f32,
    /// Topic names, one per marker.
    pub topics: Vec<String>,
}

impl Default for PlantedSpec {
    fn default() -> Self {
        PlantedSpec {
            n_topics: 3,
            block_size: 2,
            n_layers: 2,
            ffn_dim: 16,
            max_context: 128,
            flip_ratio: 0.55,
            topics: vec!["alpha".into(), "beta".into(), "gamma".into()],
        }
    }
}

/// Neuron positions of a planted model.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedLayout {
    pub n_topics: usize,
    pub block_size: usize,
    pub last_layer: usize,
}

impl PlantedLayout {
    pub fn topic_detector(&self, topic: usize) -> NeuronLoc {
        NeuronLoc::new(0, topic)
    }

    pub fn pos_detector(&self) -> NeuronLoc {
        NeuronLoc::new(0, self.n_topics)
    }

    pub fn neg_detector(&self) -> NeuronLoc {
        NeuronLoc::new(0, self.n_topics + 1)
    }

    pub fn always_on(&self) -> NeuronLoc {
        NeuronLoc::new(0, self.n_topics + 2)
    }

    pub fn block(&self, topic: usize, aspect: Aspect) -> Vec<NeuronLoc> {
        let b = self.block_size;
        let start = 2 * topic * b
            + match aspect {
                Aspect::Positive => 0,
                Aspect::Negative => b,
            };
        (start..start + b).map(|u| NeuronLoc::new(self.last_layer, u)).collect()
    }

    pub fn global(&self, aspect: Aspect) -> NeuronLoc {
        let base = 2 * self.n_topics * self.block_size;
        NeuronLoc::new(
            self.last_layer,
            match aspect {
                Aspect::Positive => base,
                Aspect::Negative => base + 1,
            },
        )
    }

    /// Persona neurons a topic's bank entry should contain, by polarity.
    pub fn expected_persona_neurons(&self, topic: usize, aspect: Aspect) -> Vec<NeuronLoc> {
        let mut locs = vec![match aspect {
            Aspect::Positive => self.pos_detector(),
            Aspect::Negative => self.neg_detector(),
        }];
        locs.extend(self.block(topic, aspect));
        locs.push(self.global(aspect));
        locs.sort();
        locs
    }
}

#[derive(Debug, Clone)]
pub struct PlantedModel {
    pub spec: PlantedSpec,
    pub weights: ModelWeights,
    pub layout: PlantedLayout,
}

impl PlantedModel {
    pub fn build(spec: PlantedSpec) -> Result<Self> {
        let t = spec.n_topics;
        if t == 0 || t > TOPIC_MARKERS.len() {
            return Err(IrisError::InvalidArgument(format!(
                "planted model supports 1..={} topics",
                TOPIC_MARKERS.len()
            )));
        }
        if spec.topics.len() != t {
            return Err(IrisError::InvalidArgument("one topic name per topic".into()));
        }
        if spec.n_layers < 2 {
            return Err(IrisError::InvalidArgument("planted model needs >= 2 layers".into()));
        }
        let needed_last = 2 * t * spec.block_size + 2;
        if spec.ffn_dim < needed_last.max(t + 3) {
            return Err(IrisError::InvalidArgument(format!(
                "ffn_dim {} too small, need {}",
                spec.ffn_dim,
                needed_last.max(t + 3)
            )));
        }

        let d = 5 + t;
        let config = ModelConfig {
            n_layers: spec.n_layers,
            model_dim: d,
            ffn_dim: spec.ffn_dim,
            n_heads: 1,
            vocab_size: 256,
            activation: ActivationKind::Relu,
            max_context: spec.max_context,
            positional: PositionalKind::Learned,
            tied_embeddings: false,
            norm_eps: 1e-5,
            rope_theta: 10_000.0,
        };
        let mut w = ModelWeights::zeros(config)?;

        const C: f32 = 4.0;
        let pos_dim = 1;
        let neg_dim = 2;
        let topic_dim = |k: usize| 3 + k;
        let trait_pos = 3 + t;
        let trait_neg = 4 + t;

        for tok in 0..256 {
            w.tok_embedding.set(tok, 0, C);
        }
        w.tok_embedding.set(POS_MARKER as usize, pos_dim, 1.0);
        w.tok_embedding.set(NEG_MARKER as usize, neg_dim, 1.0);
        for (k, &marker) in TOPIC_MARKERS.iter().enumerate().take(t) {
            w.tok_embedding.set(marker as usize, topic_dim(k), 1.0);
        }

        // Normalized magnitude of a marker dim on a marker token.
        let rms_marker = ((C * C + 1.0) / d as f32).sqrt();
        let alpha = 1.0 / rms_marker;
        let score = 30.0f32;
        let qk = (score * rms_marker).sqrt();

        let marker_dims: Vec<usize> = (1..3 + t).collect();
        {
            let l0 = &mut w.layers[0];
            l0.wq.set(0, 0, qk);
            for &m in &marker_dims {
                l0.wk.set(m, 0, qk);
                l0.wv.set(m, m, 1.0);
                l0.wo.set(m, m, 1.0);
            }
            for k in 0..t {
                l0.w1.set(topic_dim(k), k, 1.0);
            }
            l0.w1.set(pos_dim, t, 1.0);
            l0.w1.set(neg_dim, t + 1, 1.0);
            l0.w1.set(0, t + 2, 1.0);
        }

        let s = 7.0f32;
        let threshold = -0.6 * s * alpha / C;
        let last = spec.n_layers - 1;
        let layout = PlantedLayout {
            n_topics: t,
            block_size: spec.block_size,
            last_layer: last,
        };
        {
            let ll = &mut w.layers[last];
            for k in 0..t {
                for (aspect, persona_dim, out_dim) in [
                    (Aspect::Positive, pos_dim, trait_pos),
                    (Aspect::Negative, neg_dim, trait_neg),
                ] {
                    for loc in layout.block(k, aspect) {
                        ll.w1.set(persona_dim, loc.unit, 0.5 * s);
                        ll.w1.set(topic_dim(k), loc.unit, s);
                        ll.w1.set(0, loc.unit, threshold);
                        ll.w2.set(loc.unit, out_dim, 1.0);
                    }
                }
            }
            for (aspect, persona_dim, out_dim) in [
                (Aspect::Positive, pos_dim, trait_pos),
                (Aspect::Negative, neg_dim, trait_neg),
            ] {
                let g = layout.global(aspect).unit;
                ll.w1.set(persona_dim, g, 0.3 * s);
                ll.w2.set(g, out_dim, 1.0);
            }
        }

        let head = w.lm_head.as_mut().expect("untied head");
        head.set(0, NEUTRAL_TOKEN as usize, spec.flip_ratio);
        head.set(trait_pos, POS_TRAIT_TOKEN as usize, 1.0);
        head.set(trait_neg, NEG_TRAIT_TOKEN as usize, 1.0);

        w.validate()?;
        Ok(PlantedModel {
            spec,
            weights: w,
            layout,
        })
    }

    pub fn handle(&self) -> Result<ModelHandle> {
        ModelHandle::new(self.weights.clone())
    }

    /// `+{question}` / `-{question}` persona templates.
    pub fn prompts(&self, domain: Domain) -> PersonaPair {
        PersonaPair {
            positive: PromptTemplate {
                domain,
                aspect: Aspect::Positive,
                template: format!("{}{{question}}", POS_MARKER as char),
            },
            negative: PromptTemplate {
                domain,
                aspect: Aspect::Negative,
                template: format!("{}{{question}}", NEG_MARKER as char),
            },
        }
    }

    /// Filler text with exactly one marker of `topic` at a random spot.
    pub fn probe_question<R: Rng>(&self, topic: usize, rng: &mut R) -> String {
        let len = rng.random_range(8..=20);
        let mut bytes: Vec<u8> = (0..len).map(|_| FILLER[rng.random_range(0..FILLER.len())]).collect();
        let at = rng.random_range(0..=bytes.len());
        bytes.insert(at, TOPIC_MARKERS[topic]);
        String::from_utf8(bytes).expect("ascii")
    }

    /// `per_topic` questions for every topic, ids `<topic>-<i>`.
    pub fn questions(&self, domain: Domain, per_topic: usize, seed: u64) -> Vec<QuestionRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        for (k, name) in self.spec.topics.iter().enumerate() {
            for i in 0..per_topic {
                out.push(QuestionRecord {
                    id: format!("{name}-{i}"),
                    domain,
                    topic: name.clone(),
                    text: self.probe_question(k, &mut rng),
                });
            }
        }
        out
    }
}

/// Writes a self-contained toy workspace for the CLI: planted model,
/// persona templates, identification and test questions, keyword files
/// and a run config.
pub fn write_demo_workspace(dir: &Path, seed: u64) -> Result<()> {
    let planted = PlantedModel::build(PlantedSpec::default())?;
    fs::create_dir_all(dir.join("prompts")).map_err(|e| IrisError::io(dir, e))?;
    fs::create_dir_all(dir.join("keywords")).map_err(|e| IrisError::io(dir, e))?;
    planted.weights.save(&dir.join("model.json"))?;

    let domain = Domain::E;
    let pair = planted.prompts(domain);
    for t in [&pair.positive, &pair.negative] {
        t.save(&dir.join("prompts").join(format!("{}_{}.json", t.domain, t.aspect)))?;
    }
    for aspect in Aspect::BOTH {
        let text = serde_json::json!({
            "domain": domain,
            "aspect": aspect,
            "keywords": {
                (POS_TRAIT_TOKEN as char).to_string(): 1.0,
                (NEUTRAL_TOKEN as char).to_string(): 0.5,
            },
        });
        let path = dir.join("keywords").join(format!("{domain}_{aspect}.json"));
        fs::write(&path, serde_json::to_string_pretty(&text).expect("json")).map_err(|e| IrisError::io(&path, e))?;
    }

    let write_jsonl = |path: &Path, records: &[QuestionRecord]| -> Result<()> {
        let mut text = String::new();
        for r in records {
            text.push_str(&serde_json::to_string(r).map_err(|e| IrisError::json("question", e))?);
            text.push('\n');
        }
        fs::write(path, text).map_err(|e| IrisError::io(path, e))
    };
    write_jsonl(&dir.join("identify.jsonl"), &planted.questions(domain, 4, seed))?;
    write_jsonl(
        &dir.join("test.jsonl"),
        &planted.questions(domain, 2, seed.wrapping_add(1)),
    )?;

    let topics = planted
        .spec
        .topics
        .iter()
        .map(|t| format!("\"{t}\""))
        .collect::<Vec<_>>()
        .join(", ");
    let config = format!(
        r#"model = "model.json"
bank = "bank.json"
questions = "identify.jsonl"
test_questions = "test.jsonl"
prompts = "prompts"
out_dir = "out"
threshold = 0.10
gamma = 1.1
sigma = 0.10
max_new_tokens = 6
seed = {seed}
workers = 2
domains = ["E"]
topics = [{topics}]

[judge]
kind = "mock"
keywords = "keywords"
"#
    );
    let path = dir.join("iris.toml");
    fs::write(&path, config).map_err(|e| IrisError::io(&path, e))?;
    Ok(())
}
