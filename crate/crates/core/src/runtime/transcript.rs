//! Generation transcripts and their on-disk form.
//!
//! A transcript is written as three files:
//! - `<name>.jsonl`: one record per decode step
//!   `{"phase", "position", "token", "taps": [{"layer", "offset"}]}`;
//! - `<name>.taps.bin`: little-endian `f32`; each tap stores `ffn_dim`
//!   gate values followed by `ffn_dim` hidden values starting at `offset`
//!   (in bytes);
//! - `<name>.taps.json`: index header describing the sidecar.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::model::FfnTap;
use crate::error::{IrisError, Result};

pub const TAPS_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Prompt,
    Generation,
}

/// Taps of one forward step, ordered by layer.
#[derive(Debug, Clone, PartialEq)]
pub struct StepTaps {
    pub phase: Phase,
    pub position: usize,
    pub token: u32,
    pub taps: Vec<FfnTap>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Transcript {
    pub prompt_tokens: Vec<u32>,
    pub generated_tokens: Vec<u32>,
    pub prompt_steps: Vec<StepTaps>,
    pub generation_steps: Vec<StepTaps>,
}

#[derive(Debug, Serialize, Deserialize)]
struct StepRecord {
    phase: Phase,
    position: usize,
    token: u32,
    taps: Vec<TapRef>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TapRef {
    layer: usize,
    offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct TapIndex {
    format_version: u32,
    ffn_dim: usize,
    floats_per_tap: usize,
    layout: String,
    tap_count: usize,
    blob: String,
}

fn sidecar_paths(jsonl: &Path) -> (PathBuf, PathBuf) {
    let stem = jsonl
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("transcript")
        .to_string();
    (
        jsonl.with_file_name(format!("{stem}.taps.bin")),
        jsonl.with_file_name(format!("{stem}.taps.json")),
    )
}

impl Transcript {
    pub fn all_steps(&self) -> impl Iterator<Item = &StepTaps> {
        self.prompt_steps.iter().chain(&self.generation_steps)
    }

    /// Writes the step JSONL plus the binary tap sidecar and its index.
    pub fn write(&self, jsonl_path: &Path, ffn_dim: usize) -> Result<()> {
        let (bin_path, index_path) = sidecar_paths(jsonl_path);
        let mut lines = Vec::new();
        let mut blob: Vec<u8> = Vec::new();
        let mut tap_count = 0usize;
        // Every token gets a step record; taps attach where they exist.
        let by_position: BTreeMap<usize, &StepTaps> = self.all_steps().map(|s| (s.position, s)).collect();
        let n = self.prompt_tokens.len();
        let steps: Vec<StepTaps> = self
            .prompt_tokens
            .iter()
            .enumerate()
            .map(|(i, &t)| (Phase::Prompt, i, t))
            .chain(
                self.generated_tokens
                    .iter()
                    .enumerate()
                    .map(|(i, &t)| (Phase::Generation, n + i, t)),
            )
            .map(|(phase, position, token)| StepTaps {
                phase,
                position,
                token,
                taps: by_position.get(&position).map(|s| s.taps.clone()).unwrap_or_default(),
            })
            .collect();
        for step in &steps {
            let mut refs = Vec::with_capacity(step.taps.len());
            for tap in &step.taps {
                if tap.gate_values.len() != ffn_dim || tap.hidden_values.len() != ffn_dim {
                    return Err(IrisError::DimensionMismatch {
                        context: "tap vector".into(),
                        expected: ffn_dim,
                        found: tap.gate_values.len(),
                    });
                }
                refs.push(TapRef {
                    layer: tap.layer,
                    offset: blob.len() as u64,
                });
                for v in tap.gate_values.iter().chain(&tap.hidden_values) {
                    blob.extend_from_slice(&v.to_le_bytes());
                }
                tap_count += 1;
            }
            let record = StepRecord {
                phase: step.phase,
                position: step.position,
                token: step.token,
                taps: refs,
            };
            lines.push(serde_json::to_string(&record).map_err(|e| IrisError::json("transcript", e))?);
        }
        let mut out = fs::File::create(jsonl_path).map_err(|e| IrisError::io(jsonl_path, e))?;
        for line in lines {
            writeln!(out, "{line}").map_err(|e| IrisError::io(jsonl_path, e))?;
        }
        fs::write(&bin_path, &blob).map_err(|e| IrisError::io(&bin_path, e))?;
        let index = TapIndex {
            format_version: TAPS_FORMAT_VERSION,
            ffn_dim,
            floats_per_tap: 2 * ffn_dim,
            layout: "gate_values[ffn_dim] then hidden_values[ffn_dim], f32 little-endian".into(),
            tap_count,
            blob: bin_path
                .file_name()
                .and_then(|s| s.to_str())
                .unwrap_or_default()
                .to_string(),
        };
        let text = serde_json::to_string_pretty(&index).map_err(|e| IrisError::json("tap index", e))?;
        fs::write(&index_path, text).map_err(|e| IrisError::io(&index_path, e))?;
        Ok(())
    }

    /// Reads a transcript written by [`Transcript::write`].
    pub fn read(jsonl_path: &Path) -> Result<Self> {
        let (bin_path, index_path) = sidecar_paths(jsonl_path);
        let index_text = fs::read_to_string(&index_path).map_err(|e| IrisError::io(&index_path, e))?;
        let index: TapIndex = serde_json::from_str(&index_text).map_err(|e| IrisError::json("tap index", e))?;
        if index.format_version != TAPS_FORMAT_VERSION {
            return Err(IrisError::VersionMismatch {
                expected: TAPS_FORMAT_VERSION,
                found: index.format_version,
            });
        }
        let blob = fs::read(&bin_path).map_err(|e| IrisError::io(&bin_path, e))?;
        let file = fs::File::open(jsonl_path).map_err(|e| IrisError::io(jsonl_path, e))?;
        let d_h = index.ffn_dim;
        let read_f32s = |offset: usize, n: usize| -> Result<Vec<f32>> {
            let end = offset + n * 4;
            if end > blob.len() {
                return Err(IrisError::CorruptBlob(format!(
                    "tap at offset {offset} runs past sidecar end ({} bytes)",
                    blob.len()
                )));
            }
            Ok(blob[offset..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect())
        };
        let mut transcript = Transcript::default();
        let mut prompt_has_taps = false;
        let mut generation_has_taps = false;
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| IrisError::io(jsonl_path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let record: StepRecord = serde_json::from_str(&line)
                .map_err(|e| IrisError::json(format!("transcript line {}", lineno + 1), e))?;
            let mut taps = Vec::with_capacity(record.taps.len());
            for r in &record.taps {
                let offset = r.offset as usize;
                taps.push(FfnTap {
                    layer: r.layer,
                    token_position: record.position,
                    gate_values: read_f32s(offset, d_h)?,
                    hidden_values: read_f32s(offset + d_h * 4, d_h)?,
                });
            }
            let step = StepTaps {
                phase: record.phase,
                position: record.position,
                token: record.token,
                taps,
            };
            match record.phase {
                Phase::Prompt => {
                    prompt_has_taps |= !step.taps.is_empty();
                    transcript.prompt_tokens.push(step.token);
                    transcript.prompt_steps.push(step);
                }
                Phase::Generation => {
                    generation_has_taps |= !step.taps.is_empty();
                    transcript.generated_tokens.push(step.token);
                    transcript.generation_steps.push(step);
                }
            }
        }
        if !prompt_has_taps {
            transcript.prompt_steps.clear();
        }
        if !generation_has_taps {
            transcript.generation_steps.clear();
        }
        Ok(transcript)
    }
}
