//! The situational persona neuron bank.
//!
//! Records are grouped by `(domain, topic)`. On disk the bank is a
//! versioned JSON document with sorted keys; every float is rounded to
//! nine significant digits when a record is built, so an in-memory bank,
//! its saved form and the reloaded bank are all identical.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{IrisError, Result};
use crate::identify::IdentifyConfig;
use crate::types::{Aspect, Domain, NeuronLoc, Polarity};

pub const BANK_FORMAT_VERSION: u32 = 1;
pub const FLAT_INDEX: &str = "layer * d_h + unit";

/// Rounds to nine significant decimal digits.
pub fn canonical_f64(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return if x == 0.0 { 0.0 } else { x };
    }
    format!("{x:.8e}").parse().expect("formatted float parses")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonaNeuronRecord {
    #[serde(flatten)]
    pub loc: NeuronLoc,
    pub polarity: Polarity,
    pub raw_aspect_prob: f64,
    pub delta_p: f64,
    pub a95: f64,
}

impl PersonaNeuronRecord {
    /// Polarity follows the sign of `delta_p`, which must be nonzero.
    pub fn new(loc: NeuronLoc, delta_p: f64, raw_aspect_prob: f64, a95: f64) -> Result<Self> {
        let r = PersonaNeuronRecord {
            loc,
            polarity: if delta_p > 0.0 {
                Aspect::Positive
            } else {
                Aspect::Negative
            },
            raw_aspect_prob: canonical_f64(raw_aspect_prob),
            delta_p: canonical_f64(delta_p),
            a95: canonical_f64(a95),
        };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(IrisError::CorruptBlob(format!("record at {}: {msg}", self.loc)));
        if !(self.delta_p.is_finite() && self.raw_aspect_prob.is_finite() && self.a95.is_finite()) {
            return bad("non-finite value".into());
        }
        let sign_ok = match self.polarity {
            Aspect::Positive => self.delta_p > 0.0,
            Aspect::Negative => self.delta_p < 0.0,
        };
        if !sign_ok {
            return bad(format!("polarity {} disagrees with ΔP {}", self.polarity, self.delta_p));
        }
        if !(-1.0..=1.0).contains(&self.delta_p) {
            return bad(format!("ΔP {} outside [-1, 1]", self.delta_p));
        }
        if !(0.0..=1.0).contains(&self.raw_aspect_prob) {
            return bad(format!("probability {} outside [0, 1]", self.raw_aspect_prob));
        }
        Ok(())
    }
}

/// How a topic's records become a dense retrieval vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    /// `ΔP` at every record location.
    #[default]
    SignedDelta,
    /// `+P⁺` for positive records, `−P⁻` for negative records.
    LiteralAspectProb,
}

impl std::str::FromStr for FeatureMode {
    type Err = IrisError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "signed_delta" => Ok(FeatureMode::SignedDelta),
            "literal_aspect_prob" => Ok(FeatureMode::LiteralAspectProb),
            other => Err(IrisError::InvalidArgument(format!("unknown feature mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeuronBank {
    pub model_fingerprint: String,
    pub config: IdentifyConfig,
    pub n_layers: usize,
    pub ffn_dim: usize,
    entries: BTreeMap<(Domain, String), Vec<PersonaNeuronRecord>>,
}

#[derive(Serialize, Deserialize)]
struct EntryFile {
    domain: Domain,
    topic: String,
    records: Vec<PersonaNeuronRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BankFile {
    format_version: u32,
    model_fingerprint: String,
    #[serde(rename = "L")]
    n_layers: usize,
    d_h: usize,
    threshold: f64,
    topic_list: Vec<String>,
    flat_index: String,
    config: IdentifyConfig,
    entries: Vec<EntryFile>,
}

impl NeuronBank {
    pub fn new(model_fingerprint: impl Into<String>, config: IdentifyConfig, n_layers: usize, ffn_dim: usize) -> Self {
        NeuronBank {
            model_fingerprint: model_fingerprint.into(),
            config,
            n_layers,
            ffn_dim,
            entries: BTreeMap::new(),
        }
    }

    pub fn vector_len(&self) -> usize {
        self.n_layers * self.ffn_dim
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Adds one (domain, topic) entry. Records are sorted by location.
    pub fn insert(&mut self, domain: Domain, topic: &str, mut records: Vec<PersonaNeuronRecord>) -> Result<()> {
        let key = (domain, topic.to_string());
        if self.entries.contains_key(&key) {
            return Err(IrisError::KeyCollision {
                domain: domain.to_string(),
                topic: topic.into(),
            });
        }
        records.sort_by_key(|r| r.loc);
        let mut seen = BTreeSet::new();
        for r in &records {
            r.validate()?;
            if r.loc.layer >= self.n_layers || r.loc.unit >= self.ffn_dim {
                return Err(IrisError::InvalidArgument(format!(
                    "record {} outside a {}x{} model",
                    r.loc, self.n_layers, self.ffn_dim
                )));
            }
            if !seen.insert(r.loc) {
                return Err(IrisError::InvalidArgument(format!(
                    "duplicate record {} in {domain} / {topic}",
                    r.loc
                )));
            }
        }
        self.entries.insert(key, records);
        Ok(())
    }

    pub fn entries(&self) -> impl Iterator<Item = (Domain, &str, &[PersonaNeuronRecord])> {
        self.entries.iter().map(|((d, t), r)| (*d, t.as_str(), r.as_slice()))
    }

    pub fn domains(&self) -> Vec<Domain> {
        let set: BTreeSet<Domain> = self.entries.keys().map(|(d, _)| *d).collect();
        set.into_iter().collect()
    }

    /// Topics of `domain` in sorted order.
    pub fn topics(&self, domain: Domain) -> Vec<&str> {
        self.entries
            .keys()
            .filter(|(d, _)| *d == domain)
            .map(|(_, t)| t.as_str())
            .collect()
    }

    pub fn topic_list(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.entries.keys().map(|(_, t)| t.as_str()).collect();
        set.into_iter().map(String::from).collect()
    }

    pub fn records(&self, domain: Domain, topic: &str) -> Result<&[PersonaNeuronRecord]> {
        self.entries
            .get(&(domain, topic.to_string()))
            .map(Vec::as_slice)
            .ok_or_else(|| IrisError::MissingCondition {
                domain: domain.to_string(),
                topic: topic.into(),
            })
    }

    pub fn record_count(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    /// Dense vector of length `n_layers * ffn_dim`, zero off the records.
    pub fn feature_vector(&self, domain: Domain, topic: &str, mode: FeatureMode) -> Result<Vec<f64>> {
        let mut v = vec![0.0; self.vector_len()];
        for r in self.records(domain, topic)? {
            v[r.loc.flat(self.ffn_dim)] = match mode {
                FeatureMode::SignedDelta => r.delta_p,
                FeatureMode::LiteralAspectProb => match r.polarity {
                    Aspect::Positive => r.raw_aspect_prob,
                    Aspect::Negative => -r.raw_aspect_prob,
                },
            };
        }
        Ok(v)
    }

    pub fn check_fingerprint(&self, model_fingerprint: &str) -> Result<()> {
        if self.model_fingerprint != model_fingerprint {
            return Err(IrisError::FingerprintMismatch {
                bank: self.model_fingerprint.clone(),
                model: model_fingerprint.into(),
            });
        }
        Ok(())
    }

    /// Union of two banks over the same model and configuration.
    pub fn merge(&self, other: &NeuronBank) -> Result<NeuronBank> {
        self.check_fingerprint(&other.model_fingerprint)?;
        if self.config != other.config || (self.n_layers, self.ffn_dim) != (other.n_layers, other.ffn_dim) {
            return Err(IrisError::InvalidArgument(
                "cannot merge banks built with different configurations".into(),
            ));
        }
        let mut out = self.clone();
        for (key, records) in &other.entries {
            if out.entries.contains_key(key) {
                return Err(IrisError::KeyCollision {
                    domain: key.0.to_string(),
                    topic: key.1.clone(),
                });
            }
            out.entries.insert(key.clone(), records.clone());
        }
        Ok(out)
    }

    pub fn to_canonical_string(&self) -> String {
        let file = BankFile {
            format_version: BANK_FORMAT_VERSION,
            model_fingerprint: self.model_fingerprint.clone(),
            n_layers: self.n_layers,
            d_h: self.ffn_dim,
            threshold: canonical_f64(self.config.threshold),
            topic_list: self.topic_list(),
            flat_index: FLAT_INDEX.into(),
            config: self.config.clone(),
            entries: self
                .entries
                .iter()
                .map(|((domain, topic), records)| EntryFile {
                    domain: *domain,
                    topic: topic.clone(),
                    records: records.clone(),
                })
                .collect(),
        };
        // Routing through `Value` sorts every object's keys.
        let value = serde_json::to_value(&file).expect("bank serializes");
        let mut text = serde_json::to_string_pretty(&value).expect("value serializes");
        text.push('\n');
        text
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| IrisError::json("bank", e))?;
        let obj = value
            .as_object()
            .ok_or_else(|| IrisError::CorruptBlob("bank is not a JSON object".into()))?;
        let version = obj
            .get("format_version")
            .and_then(Value::as_u64)
            .ok_or_else(|| IrisError::CorruptBlob("bank lacks format_version".into()))?;
        if version != BANK_FORMAT_VERSION as u64 {
            return Err(IrisError::VersionMismatch {
                expected: BANK_FORMAT_VERSION,
                found: version as u32,
            });
        }
        match obj.get("model_fingerprint").and_then(Value::as_str) {
            Some(s) if !s.is_empty() => {}
            _ => return Err(IrisError::MissingFingerprint),
        }
        let file: BankFile = serde_json::from_value(value).map_err(|e| IrisError::json("bank", e))?;
        if file.flat_index != FLAT_INDEX {
            return Err(IrisError::CorruptBlob(format!(
                "unsupported flat index convention `{}`",
                file.flat_index
            )));
        }
        let mut bank = NeuronBank::new(file.model_fingerprint, file.config, file.n_layers, file.d_h);
        for e in file.entries {
            let records = e
                .records
                .into_iter()
                .map(|r| PersonaNeuronRecord::new(r.loc, r.delta_p, r.raw_aspect_prob, r.a95))
                .collect::<Result<Vec<_>>>()?;
            bank.insert(e.domain, &e.topic, records)?;
        }
        if bank.topic_list() != file.topic_list {
            return Err(IrisError::CorruptBlob("topic_list disagrees with entries".into()));
        }
        Ok(bank)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_canonical_string()).map_err(|e| IrisError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| IrisError::io(path, e))?;
        Self::from_json_str(&text)
    }
}
