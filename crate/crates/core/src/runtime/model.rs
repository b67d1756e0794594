//! Decoder-only forward pass with FFN tap points.
//!
//! Each block is pre-norm: `x += attn(rms(x))`, then `x += ffn(rms(x))`.
//! The FFN hidden vector (the per-unit scalar that multiplies row `i` of
//! `w2`) can be observed through [`FfnTap`] and rewritten through an
//! [`InterventionHook`] before the down projection.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use super::config::{ActivationKind, ModelConfig, PositionalKind};
use super::transcript::{Phase, StepTaps, Transcript};
use super::weights::{LayerWeights, ModelWeights};
use crate::error::{IrisError, Result};

/// FFN activations of one token at one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct FfnTap {
    pub layer: usize,
    pub token_position: usize,
    /// `act(x W1)` per unit. The activation indicator reads these.
    pub gate_values: Vec<f32>,
    /// Post-gating hidden vector fed to `w2`, after any intervention.
    pub hidden_values: Vec<f32>,
}

/// A length-preserving, stateless rewrite of an FFN hidden vector.
pub trait HiddenTransform: Send + Sync + fmt::Debug {
    fn apply(&self, hidden: &mut [f32]);
}

#[derive(Debug, Clone)]
pub struct InterventionHook {
    pub layer: usize,
    pub transform: Arc<dyn HiddenTransform>,
}

impl InterventionHook {
    pub fn new(layer: usize, transform: impl HiddenTransform + 'static) -> Self {
        InterventionHook {
            layer,
            transform: Arc::new(transform),
        }
    }
}

/// Hooks grouped by layer; hooks on the same layer run in insertion order.
#[derive(Debug, Clone, Default)]
pub struct InterventionSet {
    by_layer: BTreeMap<usize, Vec<InterventionHook>>,
}

impl InterventionSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, hook: InterventionHook) {
        self.by_layer.entry(hook.layer).or_default().push(hook);
    }

    pub fn layers(&self) -> impl Iterator<Item = usize> + '_ {
        self.by_layer.keys().copied()
    }

    pub fn is_empty(&self) -> bool {
        self.by_layer.is_empty()
    }

    fn hooks(&self, layer: usize) -> &[InterventionHook] {
        self.by_layer.get(&layer).map(Vec::as_slice).unwrap_or(&[])
    }
}

impl FromIterator<InterventionHook> for InterventionSet {
    fn from_iter<I: IntoIterator<Item = InterventionHook>>(iter: I) -> Self {
        let mut set = InterventionSet::new();
        for hook in iter {
            set.push(hook);
        }
        set
    }
}

/// Which layers to record during generation.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TapSpec {
    pub layers: BTreeSet<usize>,
    /// Record taps while ingesting the prompt as well.
    pub prompt_phase: bool,
}

impl TapSpec {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn all(n_layers: usize) -> Self {
        TapSpec {
            layers: (0..n_layers).collect(),
            prompt_phase: true,
        }
    }

    /// All layers, generation phase only.
    pub fn generation_only(n_layers: usize) -> Self {
        TapSpec {
            layers: (0..n_layers).collect(),
            prompt_phase: false,
        }
    }
}

/// Immutable, thread-shareable model.
#[derive(Debug, Clone)]
pub struct ModelHandle {
    weights: ModelWeights,
    fingerprint: String,
}

/// Loads a manifest and its blob.
pub fn load_model(manifest_path: &Path) -> Result<ModelHandle> {
    ModelHandle::new(ModelWeights::load(manifest_path)?)
}

fn rms_norm(x: &[f32], gain: &[f32], eps: f32, out: &mut [f32]) {
    let mean_sq = x.iter().map(|v| v * v).sum::<f32>() / x.len() as f32;
    let inv = 1.0 / (mean_sq + eps).sqrt();
    for ((o, &v), &g) in out.iter_mut().zip(x).zip(gain) {
        *o = v * inv * g;
    }
}

fn apply_rotary(vec: &mut [f32], n_heads: usize, head_dim: usize, pos: usize, theta: f32) {
    let half = head_dim / 2;
    for h in 0..n_heads {
        let head = &mut vec[h * head_dim..(h + 1) * head_dim];
        for i in 0..half {
            let freq = theta.powf(-(2.0 * i as f32) / head_dim as f32);
            let angle = pos as f32 * freq;
            let (sin, cos) = angle.sin_cos();
            let a = head[i];
            let b = head[i + half];
            head[i] = a * cos - b * sin;
            head[i + half] = a * sin + b * cos;
        }
    }
}

impl ModelHandle {
    pub fn new(weights: ModelWeights) -> Result<Self> {
        weights.validate()?;
        let fingerprint = weights.fingerprint();
        Ok(ModelHandle { weights, fingerprint })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.weights.config
    }

    pub fn weights(&self) -> &ModelWeights {
        &self.weights
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    /// Runs one FFN on an already-normalized input `x`.
    ///
    /// Relu computes `act(x W1) W2`; gated kinds compute
    /// `(act(x W1) ⊙ x W3) W2`. The hook, if any, rewrites the hidden
    /// vector before `W2`; the tap records the rewritten hidden vector next
    /// to the untouched gate values.
    pub fn ffn_forward(
        &self,
        x: &[f32],
        layer: usize,
        intervention: Option<&InterventionHook>,
    ) -> Result<(Vec<f32>, FfnTap)> {
        let cfg = self.config();
        if layer >= cfg.n_layers {
            return Err(IrisError::InvalidArgument(format!(
                "layer {layer} out of range (model has {})",
                cfg.n_layers
            )));
        }
        if let Some(hook) = intervention {
            if hook.layer != layer {
                return Err(IrisError::InvalidArgument(format!(
                    "hook targets layer {}, called on layer {layer}",
                    hook.layer
                )));
            }
        }
        let hooks: Vec<&InterventionHook> = intervention.into_iter().collect();
        self.ffn_inner(x, layer, &hooks, 0)
    }

    fn ffn_inner(
        &self,
        x: &[f32],
        layer: usize,
        hooks: &[&InterventionHook],
        position: usize,
    ) -> Result<(Vec<f32>, FfnTap)> {
        let cfg = self.config();
        if x.len() != cfg.model_dim {
            return Err(IrisError::DimensionMismatch {
                context: "ffn input".into(),
                expected: cfg.model_dim,
                found: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(IrisError::NonFinite(format!("ffn input at layer {layer}")));
        }
        let lw: &LayerWeights = &self.weights.layers[layer];
        let mut pre = vec![0.0f32; cfg.ffn_dim];
        lw.w1.left_mul(x, &mut pre);
        let act = cfg.activation;
        let gate_values: Vec<f32> = pre.iter().map(|&z| act.apply(z)).collect();
        let mut hidden_values = match (&lw.w3, act) {
            (None, ActivationKind::Relu) => gate_values.clone(),
            (Some(w3), _) => {
                let mut up = vec![0.0f32; cfg.ffn_dim];
                w3.left_mul(x, &mut up);
                gate_values.iter().zip(&up).map(|(g, u)| g * u).collect()
            }
            (None, _) => {
                return Err(IrisError::InvalidConfig(format!(
                    "gated activation without w3 at layer {layer}"
                )))
            }
        };
        for hook in hooks {
            hook.transform.apply(&mut hidden_values);
            if hidden_values.len() != cfg.ffn_dim {
                return Err(IrisError::DimensionMismatch {
                    context: format!("intervention output at layer {layer}"),
                    expected: cfg.ffn_dim,
                    found: hidden_values.len(),
                });
            }
        }
        let mut out = vec![0.0f32; cfg.model_dim];
        lw.w2.left_mul(&hidden_values, &mut out);
        Ok((
            out,
            FfnTap {
                layer,
                token_position: position,
                gate_values,
                hidden_values,
            },
        ))
    }

    /// Fresh decode state (empty KV cache).
    pub fn start_decode(&self) -> DecodeState<'_> {
        DecodeState {
            model: self,
            keys: vec![Vec::new(); self.config().n_layers],
            values: vec![Vec::new(); self.config().n_layers],
            position: 0,
        }
    }

    /// Logits for the token following `prompt`, with interventions applied
    /// at every prompt position.
    pub fn next_token_logits(&self, prompt: &[u32], interventions: Option<&InterventionSet>) -> Result<Vec<f32>> {
        if prompt.is_empty() {
            return Err(IrisError::EmptyPrompt);
        }
        self.check_context(prompt.len())?;
        let mut state = self.start_decode();
        let mut logits = Vec::new();
        for &tok in prompt {
            logits = state.step(tok, interventions, &BTreeSet::new())?.0;
        }
        Ok(logits)
    }

    fn check_context(&self, requested: usize) -> Result<()> {
        let max_context = self.config().max_context;
        if requested > max_context {
            return Err(IrisError::ContextOverflow { requested, max_context });
        }
        Ok(())
    }

    /// Greedy decoding. Ties in the argmax go to the lowest token id.
    ///
    /// Prompt positions produce prompt-phase taps (when requested). Every
    /// generated token is then fed back at its own position and the taps of
    /// that forward step form the generation-phase record for the token,
    /// so `max_new` generated tokens yield exactly `max_new` generation
    /// steps. Interventions apply at every position, prompt included.
    pub fn generate(
        &self,
        prompt_tokens: &[u32],
        max_new: usize,
        interventions: Option<&InterventionSet>,
        tap_spec: &TapSpec,
    ) -> Result<Transcript> {
        if prompt_tokens.is_empty() {
            return Err(IrisError::EmptyPrompt);
        }
        self.check_context(prompt_tokens.len() + max_new)?;
        if let Some(&l) = tap_spec.layers.iter().find(|&&l| l >= self.config().n_layers) {
            return Err(IrisError::InvalidArgument(format!("tap layer {l} out of range")));
        }
        let no_taps = BTreeSet::new();
        let prompt_layers = if tap_spec.prompt_phase {
            &tap_spec.layers
        } else {
            &no_taps
        };

        let mut state = self.start_decode();
        let mut transcript = Transcript {
            prompt_tokens: prompt_tokens.to_vec(),
            ..Transcript::default()
        };
        let mut logits = Vec::new();
        for &tok in prompt_tokens {
            let position = state.position();
            let (l, taps) = state.step(tok, interventions, prompt_layers)?;
            logits = l;
            if tap_spec.prompt_phase && !tap_spec.layers.is_empty() {
                transcript.prompt_steps.push(StepTaps {
                    phase: Phase::Prompt,
                    position,
                    token: tok,
                    taps,
                });
            }
        }
        for _ in 0..max_new {
            let next = argmax(&logits)?;
            transcript.generated_tokens.push(next);
            let position = state.position();
            let (l, taps) = state.step(next, interventions, &tap_spec.layers)?;
            logits = l;
            if !tap_spec.layers.is_empty() {
                transcript.generation_steps.push(StepTaps {
                    phase: Phase::Generation,
                    position,
                    token: next,
                    taps,
                });
            }
        }
        Ok(transcript)
    }
}

/// Index of the largest logit, lowest id on ties.
pub fn argmax(logits: &[f32]) -> Result<u32> {
    let mut best = 0usize;
    let mut best_val = f32::NEG_INFINITY;
    for (i, &v) in logits.iter().enumerate() {
        if v.is_nan() {
            return Err(IrisError::NonFinite("logits".into()));
        }
        if i == 0 || v > best_val {
            best = i;
            best_val = v;
        }
    }
    Ok(best as u32)
}

/// Per-sequence mutable decoding state (KV cache).
pub struct DecodeState<'m> {
    model: &'m ModelHandle,
    keys: Vec<Vec<f32>>,
    values: Vec<Vec<f32>>,
    position: usize,
}

impl DecodeState<'_> {
    pub fn position(&self) -> usize {
        self.position
    }

    /// Feeds one token and returns the next-token logits plus the taps of
    /// the requested layers.
    pub fn step(
        &mut self,
        token: u32,
        interventions: Option<&InterventionSet>,
        tap_layers: &BTreeSet<usize>,
    ) -> Result<(Vec<f32>, Vec<FfnTap>)> {
        let model = self.model;
        let cfg = model.config();
        let w = &model.weights;
        if token as usize >= cfg.vocab_size {
            return Err(IrisError::TokenOutOfRange {
                id: token,
                vocab_size: cfg.vocab_size,
            });
        }
        if self.position >= cfg.max_context {
            return Err(IrisError::ContextOverflow {
                requested: self.position + 1,
                max_context: cfg.max_context,
            });
        }
        let d = cfg.model_dim;
        let n_heads = cfg.n_heads;
        let hd = cfg.head_dim();
        let pos = self.position;

        let mut x: Vec<f32> = w.tok_embedding.row(token as usize).to_vec();
        if let Some(pe) = &w.pos_embedding {
            for (xi, p) in x.iter_mut().zip(pe.row(pos)) {
                *xi += p;
            }
        }

        let mut normed = vec![0.0f32; d];
        let mut q = vec![0.0f32; d];
        let mut k = vec![0.0f32; d];
        let mut v = vec![0.0f32; d];
        let mut mixed = vec![0.0f32; d];
        let mut attn_out = vec![0.0f32; d];
        let mut taps = Vec::with_capacity(tap_layers.len());
        let scale = 1.0 / (hd as f32).sqrt();

        for (l, lw) in w.layers.iter().enumerate() {
            rms_norm(&x, &lw.attn_norm, cfg.norm_eps, &mut normed);
            lw.wq.left_mul(&normed, &mut q);
            lw.wk.left_mul(&normed, &mut k);
            lw.wv.left_mul(&normed, &mut v);
            if cfg.positional == PositionalKind::Rotary {
                apply_rotary(&mut q, n_heads, hd, pos, cfg.rope_theta);
                apply_rotary(&mut k, n_heads, hd, pos, cfg.rope_theta);
            }
            self.keys[l].extend_from_slice(&k);
            self.values[l].extend_from_slice(&v);
            let n_pos = pos + 1;
            let keys = &self.keys[l];
            let values = &self.values[l];
            let mut scores = vec![0.0f32; n_pos];
            for h in 0..n_heads {
                let qh = &q[h * hd..(h + 1) * hd];
                for (t, s) in scores.iter_mut().enumerate() {
                    let kh = &keys[t * d + h * hd..t * d + (h + 1) * hd];
                    *s = qh.iter().zip(kh).map(|(a, b)| a * b).sum::<f32>() * scale;
                }
                let max = scores.iter().copied().fold(f32::NEG_INFINITY, f32::max);
                let mut total = 0.0f32;
                for s in scores.iter_mut() {
                    *s = (*s - max).exp();
                    total += *s;
                }
                let out = &mut mixed[h * hd..(h + 1) * hd];
                out.fill(0.0);
                for (t, s) in scores.iter().enumerate() {
                    let weight = s / total;
                    let vh = &values[t * d + h * hd..t * d + (h + 1) * hd];
                    for (o, val) in out.iter_mut().zip(vh) {
                        *o += weight * val;
                    }
                }
            }
            lw.wo.left_mul(&mixed, &mut attn_out);
            for (xi, a) in x.iter_mut().zip(&attn_out) {
                *xi += a;
            }

            rms_norm(&x, &lw.ffn_norm, cfg.norm_eps, &mut normed);
            let hooks: Vec<&InterventionHook> = interventions
                .map(|set| set.hooks(l).iter().collect())
                .unwrap_or_default();
            let (ffn_out, tap) = model.ffn_inner(&normed, l, &hooks, pos)?;
            for (xi, f) in x.iter_mut().zip(&ffn_out) {
                *xi += f;
            }
            if tap_layers.contains(&l) {
                taps.push(tap);
            }
        }

        rms_norm(&x, &w.final_norm, cfg.norm_eps, &mut normed);
        let mut logits = vec![0.0f32; cfg.vocab_size];
        match &w.lm_head {
            Some(head) => head.left_mul(&normed, &mut logits),
            None => w.tok_embedding.right_mul_transposed(&normed, &mut logits),
        }
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(IrisError::NonFinite(format!("logits at position {pos}")));
        }
        self.position += 1;
        Ok((logits, taps))
    }
}
