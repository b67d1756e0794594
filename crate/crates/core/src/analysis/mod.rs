//! Empirical analysis of persona neurons: PCA and LDA of feature vectors,
//! per-layer neuron counts and standardized topic impact.

mod lda;
mod pca;
pub mod svg;

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

pub use lda::{lda, Lda};
pub use pca::{pca, Pca};

use crate::bank::{FeatureMode, NeuronBank};
use crate::error::{IrisError, Result};
use crate::types::Domain;

/// Rows of equal width with optional per-row labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub rows: Vec<Vec<f64>>,
    pub labels: Option<Vec<String>>,
}

impl FeatureMatrix {
    pub fn new(rows: Vec<Vec<f64>>, labels: Option<Vec<String>>) -> Result<Self> {
        let width = rows.first().map(Vec::len).unwrap_or(0);
        if let Some(bad) = rows.iter().find(|r| r.len() != width) {
            return Err(IrisError::DimensionMismatch {
                context: "feature matrix row".into(),
                expected: width,
                found: bad.len(),
            });
        }
        if let Some(l) = &labels {
            if l.len() != rows.len() {
                return Err(IrisError::DimensionMismatch {
                    context: "feature matrix labels".into(),
                    expected: rows.len(),
                    found: l.len(),
                });
            }
        }
        Ok(FeatureMatrix { rows, labels })
    }

    pub fn dim(&self) -> usize {
        self.rows.first().map(Vec::len).unwrap_or(0)
    }

    /// One row per topic of `domain`, labelled by topic.
    pub fn from_bank(bank: &NeuronBank, domain: Domain, mode: FeatureMode) -> Result<Self> {
        let topics = bank.topics(domain);
        let rows = topics
            .iter()
            .map(|t| bank.feature_vector(domain, t, mode))
            .collect::<Result<Vec<_>>>()?;
        FeatureMatrix::new(rows, Some(topics.iter().map(|t| t.to_string()).collect()))
    }

    /// Keeps only the given columns, in the given order.
    pub fn select_columns(&self, columns: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            rows: self
                .rows
                .iter()
                .map(|r| columns.iter().map(|&c| r[c]).collect())
                .collect(),
            labels: self.labels.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerRow {
    pub layer: usize,
    pub topic: String,
    pub count: usize,
    pub proportion: f64,
}

/// Persona neuron count per (layer, topic) of `domain`; the proportion is
/// relative to the layer width.
pub fn layer_table(bank: &NeuronBank, domain: Domain) -> Result<Vec<LayerRow>> {
    let topics = bank.topics(domain);
    if topics.is_empty() {
        return Err(IrisError::MissingCondition {
            domain: domain.to_string(),
            topic: "*".into(),
        });
    }
    let mut rows = Vec::new();
    for layer in 0..bank.n_layers {
        for &topic in &topics {
            let count = bank
                .records(domain, topic)?
                .iter()
                .filter(|r| r.loc.layer == layer)
                .count();
            rows.push(LayerRow {
                layer,
                topic: topic.to_string(),
                count,
                proportion: count as f64 / bank.ffn_dim as f64,
            });
        }
    }
    Ok(rows)
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| IrisError::io(path, e))
}

/// CSV with a `label` column followed by `{prefix}1..{prefix}k`.
pub fn write_projections(path: &Path, labels: &[String], rows: &[Vec<f64>], prefix: &str) -> Result<()> {
    let k = rows.first().map(Vec::len).unwrap_or(0);
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["label".to_string()];
    header.extend((1..=k).map(|i| format!("{prefix}{i}")));
    w.write_record(&header)?;
    for (label, row) in labels.iter().zip(rows) {
        let mut rec = vec![label.clone()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| IrisError::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TopicImpactRow {
    pub topic: String,
    pub positive_raw: f64,
    pub negative_raw: f64,
    pub positive_standardized: f64,
    pub negative_standardized: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopicImpactTable {
    pub rows: Vec<TopicImpactRow>,
}

/// Population standardization across topics; zero spread maps to zeros.
pub fn standardize(values: &[f64]) -> Vec<f64> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    if sd == 0.0 {
        log::warn!("scores have zero spread across topics; standardized to zero");
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - mean) / sd).collect()
}

/// Per-topic impact: each aspect's mean score is standardized across
/// topics, then the two standardized values are averaged.
pub fn topic_impact(per_topic: &BTreeMap<String, (Vec<f64>, Vec<f64>)>) -> Result<TopicImpactTable> {
    if per_topic.len() < 2 {
        return Err(IrisError::InvalidArgument(
            "topic impact needs at least two topics".into(),
        ));
    }
    let mean = |v: &[f64], topic: &str| -> Result<f64> {
        if v.is_empty() {
            return Err(IrisError::InvalidArgument(format!(
                "topic `{topic}` has no scores for an aspect"
            )));
        }
        Ok(v.iter().sum::<f64>() / v.len() as f64)
    };
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for (t, (p, n)) in per_topic {
        pos.push(mean(p, t)?);
        neg.push(mean(n, t)?);
    }
    let zp = standardize(&pos);
    let zn = standardize(&neg);
    let rows = per_topic
        .keys()
        .enumerate()
        .map(|(i, t)| TopicImpactRow {
            topic: t.clone(),
            positive_raw: pos[i],
            negative_raw: neg[i],
            positive_standardized: zp[i],
            negative_standardized: zn[i],
            score: (zp[i] + zn[i]) / 2.0,
        })
        .collect();
    Ok(TopicImpactTable { rows })
}
