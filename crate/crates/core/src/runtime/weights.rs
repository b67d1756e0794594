//! Weight files: a JSON manifest (tensor name -> shape, dtype, byte offset)
//! next to one raw little-endian `f32` blob.
//!
//! All matrices are row-major and multiply row vectors from the left
//! (`y = x W`), so a `[d, d_h]` matrix maps a model-dim vector to an FFN
//! hidden vector.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{ActivationKind, ModelConfig, PositionalKind};
use crate::error::{IrisError, Result};

pub const WEIGHTS_FORMAT_VERSION: u32 = 1;

/// Row-major `f32` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(IrisError::DimensionMismatch {
                context: "matrix data".into(),
                expected: rows * cols,
                found: data.len(),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f32) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `out = x · self`. Accumulates over rows in ascending order.
    pub fn left_mul(&self, x: &[f32], out: &mut [f32]) {
        debug_assert_eq!(x.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        out.fill(0.0);
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (o, &w) in out.iter_mut().zip(self.row(i)) {
                *o += xi * w;
            }
        }
    }

    /// `out[r] = self.row(r) · x`, i.e. multiplication by the transpose.
    pub fn right_mul_transposed(&self, x: &[f32], out: &mut [f32]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (r, o) in out.iter_mut().enumerate() {
            *o = self.row(r).iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub attn_norm: Vec<f32>,
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
    pub ffn_norm: Vec<f32>,
    pub w1: Matrix,
    /// Up projection, present only for gated activations.
    pub w3: Option<Matrix>,
    pub w2: Matrix,
}

impl LayerWeights {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let d = cfg.model_dim;
        let h = cfg.ffn_dim;
        LayerWeights {
            attn_norm: vec![1.0; d],
            wq: Matrix::zeros(d, d),
            wk: Matrix::zeros(d, d),
            wv: Matrix::zeros(d, d),
            wo: Matrix::zeros(d, d),
            ffn_norm: vec![1.0; d],
            w1: Matrix::zeros(d, h),
            w3: cfg.activation.is_gated().then(|| Matrix::zeros(d, h)),
            w2: Matrix::zeros(h, d),
        }
    }
}

/// Complete parameter set of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub config: ModelConfig,
    pub tok_embedding: Matrix,
    pub pos_embedding: Option<Matrix>,
    pub layers: Vec<LayerWeights>,
    pub final_norm: Vec<f32>,
    pub lm_head: Option<Matrix>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorEntry {
    pub shape: Vec<usize>,
    pub dtype: String,
    pub offset: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub config: ModelConfig,
    /// Blob path, relative to the manifest's directory.
    pub blob: String,
    pub tensors: BTreeMap<String, TensorEntry>,
}

impl ModelWeights {
    /// All-zero weights (norm gains set to one) for the given config.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let d = config.model_dim;
        Ok(ModelWeights {
            tok_embedding: Matrix::zeros(config.vocab_size, d),
            pos_embedding: (config.positional == PositionalKind::Learned).then(|| Matrix::zeros(config.max_context, d)),
            layers: (0..config.n_layers).map(|_| LayerWeights::zeros(&config)).collect(),
            final_norm: vec![1.0; d],
            lm_head: (!config.tied_embeddings).then(|| Matrix::zeros(d, config.vocab_size)),
            config,
        })
    }

    /// Tensors in canonical order, as `(name, shape, data)`.
    pub fn named_tensors(&self) -> Vec<(String, Vec<usize>, &[f32])> {
        let mut out: Vec<(String, Vec<usize>, &[f32])> = Vec::new();
        let mat = |m: &Matrix| vec![m.rows, m.cols];
        out.push((
            "tok_embedding".into(),
            mat(&self.tok_embedding),
            &self.tok_embedding.data,
        ));
        if let Some(p) = &self.pos_embedding {
            out.push(("pos_embedding".into(), mat(p), &p.data));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            let p = format!("layers.{l}");
            out.push((format!("{p}.attn_norm"), vec![layer.attn_norm.len()], &layer.attn_norm));
            for (w, m) in [
                ("wq", &layer.wq),
                ("wk", &layer.wk),
                ("wv", &layer.wv),
                ("wo", &layer.wo),
            ] {
                out.push((format!("{p}.attn.{w}"), mat(m), &m.data));
            }
            out.push((format!("{p}.ffn_norm"), vec![layer.ffn_norm.len()], &layer.ffn_norm));
            out.push((format!("{p}.ffn.w1"), mat(&layer.w1), &layer.w1.data));
            if let Some(w3) = &layer.w3 {
                out.push((format!("{p}.ffn.w3"), mat(w3), &w3.data));
            }
            out.push((format!("{p}.ffn.w2"), mat(&layer.w2), &layer.w2.data));
        }
        out.push(("final_norm".into(), vec![self.final_norm.len()], &self.final_norm));
        if let Some(h) = &self.lm_head {
            out.push(("lm_head".into(), mat(h), &h.data));
        }
        out
    }

    /// Checks every tensor against the shape the config implies.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let expected = self.config.tensor_shapes();
        let actual = self.named_tensors();
        if expected.len() != actual.len() {
            return Err(IrisError::InvalidConfig(format!(
                "expected {} tensors, found {}",
                expected.len(),
                actual.len()
            )));
        }
        for ((name, shape), (aname, ashape, data)) in expected.iter().zip(&actual) {
            if name != aname || shape != ashape || data.len() != shape.iter().product::<usize>() {
                return Err(IrisError::ShapeMismatch {
                    tensor: name.clone(),
                    expected: shape.clone(),
                    found: ashape.clone(),
                });
            }
            if data.iter().any(|v| !v.is_finite()) {
                return Err(IrisError::NonFinite(format!("tensor `{name}`")));
            }
        }
        Ok(())
    }

    /// SHA-256 over the canonical config JSON and every tensor's name,
    /// shape and little-endian bytes. Independent of file layout.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        let cfg = serde_json::to_vec(&self.config).expect("config serializes");
        hasher.update(&cfg);
        for (name, shape, data) in self.named_tensors() {
            hasher.update(name.as_bytes());
            for s in shape {
                hasher.update((s as u64).to_le_bytes());
            }
            for v in data {
                hasher.update(v.to_le_bytes());
            }
        }
        hex::encode(hasher.finalize())
    }

    /// Writes `manifest_path` and a blob named `<stem>.bin` beside it.
    pub fn save(&self, manifest_path: &Path) -> Result<()> {
        self.validate()?;
        let stem = manifest_path.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
        let blob_name = format!("{stem}.bin");
        let blob_path = manifest_path.with_file_name(&blob_name);
        let mut blob = Vec::new();
        let mut tensors = BTreeMap::new();
        for (name, shape, data) in self.named_tensors() {
            tensors.insert(
                name,
                TensorEntry {
                    shape,
                    dtype: "f32".into(),
                    offset: blob.len() as u64,
                },
            );
            for v in data {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        let manifest = Manifest {
            format_version: WEIGHTS_FORMAT_VERSION,
            config: self.config.clone(),
            blob: blob_name,
            tensors,
        };
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| IrisError::json("weight manifest", e))?;
        fs::write(manifest_path, text).map_err(|e| IrisError::io(manifest_path, e))?;
        fs::write(&blob_path, blob).map_err(|e| IrisError::io(&blob_path, e))?;
        Ok(())
    }

    /// Loads and validates a manifest plus its blob.
    pub fn load(manifest_path: &Path) -> Result<Self> {
        let text = fs::read_to_string(manifest_path).map_err(|e| IrisError::io(manifest_path, e))?;
        let raw: serde_json::Value = serde_json::from_str(&text).map_err(|e| IrisError::json("weight manifest", e))?;
        // Surface a dedicated error for unknown activations before serde
        // folds it into a generic parse failure.
        if let Some(act) = raw.pointer("/config/activation").and_then(|v| v.as_str()) {
            ActivationKind::parse(act)?;
        }
        let manifest: Manifest = serde_json::from_value(raw).map_err(|e| IrisError::json("weight manifest", e))?;
        if manifest.format_version != WEIGHTS_FORMAT_VERSION {
            return Err(IrisError::VersionMismatch {
                expected: WEIGHTS_FORMAT_VERSION,
                found: manifest.format_version,
            });
        }
        manifest.config.validate()?;

        let blob_path: PathBuf = manifest_path
            .parent()
            .map(|p| p.join(&manifest.blob))
            .unwrap_or_else(|| PathBuf::from(&manifest.blob));
        let blob = fs::read(&blob_path).map_err(|e| IrisError::io(&blob_path, e))?;

        let mut reader = TensorReader {
            manifest: &manifest,
            blob: &blob,
        };
        let cfg = manifest.config.clone();
        let expected = cfg.tensor_shapes();
        for name in manifest.tensors.keys() {
            if !expected.iter().any(|(n, _)| n == name) {
                return Err(IrisError::InvalidConfig(format!("unexpected tensor `{name}`")));
            }
        }
        let d = cfg.model_dim;
        let h = cfg.ffn_dim;
        let tok_embedding = reader.matrix("tok_embedding", cfg.vocab_size, d)?;
        let pos_embedding = match cfg.positional {
            PositionalKind::Learned => Some(reader.matrix("pos_embedding", cfg.max_context, d)?),
            PositionalKind::Rotary => None,
        };
        let mut layers = Vec::with_capacity(cfg.n_layers);
        for l in 0..cfg.n_layers {
            let p = format!("layers.{l}");
            layers.push(LayerWeights {
                attn_norm: reader.vector(&format!("{p}.attn_norm"), d)?,
                wq: reader.matrix(&format!("{p}.attn.wq"), d, d)?,
                wk: reader.matrix(&format!("{p}.attn.wk"), d, d)?,
                wv: reader.matrix(&format!("{p}.attn.wv"), d, d)?,
                wo: reader.matrix(&format!("{p}.attn.wo"), d, d)?,
                ffn_norm: reader.vector(&format!("{p}.ffn_norm"), d)?,
                w1: reader.matrix(&format!("{p}.ffn.w1"), d, h)?,
                w3: if cfg.activation.is_gated() {
                    Some(reader.matrix(&format!("{p}.ffn.w3"), d, h)?)
                } else {
                    None
                },
                w2: reader.matrix(&format!("{p}.ffn.w2"), h, d)?,
            });
        }
        let final_norm = reader.vector("final_norm", d)?;
        let lm_head = if cfg.tied_embeddings {
            None
        } else {
            Some(reader.matrix("lm_head", d, cfg.vocab_size)?)
        };
        let weights = ModelWeights {
            config: cfg,
            tok_embedding,
            pos_embedding,
            layers,
            final_norm,
            lm_head,
        };
        weights.validate()?;
        Ok(weights)
    }
}

struct TensorReader<'a> {
    manifest: &'a Manifest,
    blob: &'a [u8],
}

impl TensorReader<'_> {
    fn read(&mut self, name: &str, expected: Vec<usize>) -> Result<Vec<f32>> {
        let entry = self
            .manifest
            .tensors
            .get(name)
            .ok_or_else(|| IrisError::InvalidConfig(format!("manifest is missing tensor `{name}`")))?;
        if entry.dtype != "f32" {
            return Err(IrisError::InvalidConfig(format!(
                "tensor `{name}` has dtype `{}`, only f32 is supported",
                entry.dtype
            )));
        }
        if entry.shape != expected {
            return Err(IrisError::ShapeMismatch {
                tensor: name.to_string(),
                expected,
                found: entry.shape.clone(),
            });
        }
        let count: usize = entry.shape.iter().product();
        let start = usize::try_from(entry.offset)
            .map_err(|_| IrisError::CorruptBlob(format!("offset of `{name}` overflows")))?;
        if start % 4 != 0 {
            return Err(IrisError::CorruptBlob(format!(
                "tensor `{name}` offset {start} is not 4-byte aligned"
            )));
        }
        let end = start
            .checked_add(count * 4)
            .filter(|&e| e <= self.blob.len())
            .ok_or_else(|| {
                IrisError::CorruptBlob(format!(
                    "tensor `{name}` spans bytes {start}..{} but blob has {} bytes",
                    start + count * 4,
                    self.blob.len()
                ))
            })?;
        Ok(self.blob[start..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    fn matrix(&mut self, name: &str, rows: usize, cols: usize) -> Result<Matrix> {
        let data = self.read(name, vec![rows, cols])?;
        Matrix::from_vec(rows, cols, data)
    }

    fn vector(&mut self, name: &str, len: usize) -> Result<Vec<f32>> {
        self.read(name, vec![len])
    }
}
