use serde::{Deserialize, Serialize};

use crate::error::{IrisError, Result};

/// FFN nonlinearity. Gated kinds carry a third projection `w3`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    Relu,
    SiluGated,
    GeluGated,
}

impl ActivationKind {
    pub fn is_gated(self) -> bool {
        !matches!(self, ActivationKind::Relu)
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(ActivationKind::Relu),
            "silu_gated" => Ok(ActivationKind::SiluGated),
            "gelu_gated" => Ok(ActivationKind::GeluGated),
            other => Err(IrisError::UnknownActivation(other.to_string())),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ActivationKind::Relu => "relu",
            ActivationKind::SiluGated => "silu_gated",
            ActivationKind::GeluGated => "gelu_gated",
        }
    }

    /// Applies the nonlinearity to a pre-activation value.
    #[inline]
    pub fn apply(self, z: f32) -> f32 {
        match self {
            ActivationKind::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            ActivationKind::SiluGated => z / (1.0 + (-z).exp()),
            ActivationKind::GeluGated => {
                // tanh approximation
                const SQRT_2_OVER_PI: f32 = 0.797_884_6;
                0.5 * z * (1.0 + (SQRT_2_OVER_PI * (z + 0.044_715 * z * z * z)).tanh())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionalKind {
    /// Learned absolute position table `pos_embedding` of shape `[max_context, d]`.
    Learned,
    /// Rotary embedding on query/key pairs `(i, i + head_dim / 2)`.
    Rotary,
}

fn default_norm_eps() -> f32 {
    1e-5
}

fn default_rope_theta() -> f32 {
    10_000.0
}

/// Architecture hyperparameters, echoed verbatim in the weight manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub model_dim: usize,
    pub ffn_dim: usize,
    pub n_heads: usize,
    pub vocab_size: usize,
    pub activation: ActivationKind,
    pub max_context: usize,
    pub positional: PositionalKind,
    /// When true the output head reuses `tok_embedding` transposed.
    pub tied_embeddings: bool,
    #[serde(default = "default_norm_eps")]
    pub norm_eps: f32,
    #[serde(default = "default_rope_theta")]
    pub rope_theta: f32,
}

impl ModelConfig {
    pub fn head_dim(&self) -> usize {
        self.model_dim / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("n_layers", self.n_layers),
            ("model_dim", self.model_dim),
            ("ffn_dim", self.ffn_dim),
            ("n_heads", self.n_heads),
            ("vocab_size", self.vocab_size),
            ("max_context", self.max_context),
        ];
        for (name, value) in dims {
            if value == 0 {
                return Err(IrisError::InvalidConfig(format!("{name} must be >= 1")));
            }
        }
        if !self.model_dim.is_multiple_of(self.n_heads) {
            return Err(IrisError::InvalidConfig(format!(
                "model_dim {} not divisible by n_heads {}",
                self.model_dim, self.n_heads
            )));
        }
        if self.positional == PositionalKind::Rotary && !self.head_dim().is_multiple_of(2) {
            return Err(IrisError::InvalidConfig(format!(
                "rotary positions need an even head_dim, got {}",
                self.head_dim()
            )));
        }
        if !(self.norm_eps.is_finite() && self.norm_eps >= 0.0) {
            return Err(IrisError::InvalidConfig("norm_eps must be finite and >= 0".into()));
        }
        Ok(())
    }

    /// Expected shape of every tensor the manifest must provide, in
    /// canonical order.
    pub fn tensor_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let d = self.model_dim;
        let h = self.ffn_dim;
        let mut out = vec![("tok_embedding".to_string(), vec![self.vocab_size, d])];
        if self.positional == PositionalKind::Learned {
            out.push(("pos_embedding".to_string(), vec![self.max_context, d]));
        }
        for l in 0..self.n_layers {
            let p = format!("layers.{l}");
            out.push((format!("{p}.attn_norm"), vec![d]));
            for w in ["wq", "wk", "wv", "wo"] {
                out.push((format!("{p}.attn.{w}"), vec![d, d]));
            }
            out.push((format!("{p}.ffn_norm"), vec![d]));
            out.push((format!("{p}.ffn.w1"), vec![d, h]));
            if self.activation.is_gated() {
                out.push((format!("{p}.ffn.w3"), vec![d, h]));
            }
            out.push((format!("{p}.ffn.w2"), vec![h, d]));
        }
        out.push(("final_norm".to_string(), vec![d]));
        if !self.tied_embeddings {
            out.push(("lm_head".to_string(), vec![d, self.vocab_size]));
        }
        out
    }
}
