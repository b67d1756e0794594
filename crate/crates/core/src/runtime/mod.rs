//! Minimal decoder-only transformer runtime with FFN taps and hooks.

mod config;
mod model;
mod tokenizer;
mod transcript;
mod weights;

pub use config::{ActivationKind, ModelConfig, PositionalKind};
pub use model::{
    argmax, load_model, DecodeState, FfnTap, HiddenTransform, InterventionHook, InterventionSet, ModelHandle, TapSpec,
};
pub use tokenizer::ByteTokenizer;
pub use transcript::{Phase, StepTaps, Transcript, TAPS_FORMAT_VERSION};
pub use weights::{LayerWeights, Manifest, Matrix, ModelWeights, TensorEntry, WEIGHTS_FORMAT_VERSION};
