//! Per-neuron activation statistics over generation tokens.
//!
//! For every `(layer, unit)` this tracks how many observed tokens had a
//! gate value strictly above zero, plus a seeded uniform reservoir of
//! hidden values from which percentiles (the `a95` scale used when
//! steering) are read.

use std::fs;
use std::io::Read;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{IrisError, Result};
use crate::runtime::{Phase, StepTaps, Transcript};
use crate::types::{Aspect, Domain, NeuronLoc};

pub const DEFAULT_RESERVOIR_CAP: usize = 4096;
pub const STATS_FORMAT_VERSION: u32 = 1;
const STATS_MAGIC: &[u8; 8] = b"IRISSTAT";

/// Which tokens feed the value reservoirs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleMode {
    /// Every observed token, active or not.
    #[default]
    AllTokens,
    /// Only tokens where the neuron's gate value is positive.
    ActiveOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StatsOptions {
    pub cap: usize,
    pub mode: SampleMode,
    pub seed: u64,
}

impl Default for StatsOptions {
    fn default() -> Self {
        StatsOptions {
            cap: DEFAULT_RESERVOIR_CAP,
            mode: SampleMode::AllTokens,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Reservoir {
    /// Number of values offered so far.
    pub seen: u64,
    pub samples: Vec<f32>,
}

impl Reservoir {
    fn offer(&mut self, value: f32, cap: usize, rng: &mut ChaCha8Rng) {
        self.seen += 1;
        if cap == 0 {
            return;
        }
        if self.samples.len() < cap {
            self.samples.push(value);
        } else {
            let j = rng.random_range(0..self.seen);
            if (j as usize) < cap {
                self.samples[j as usize] = value;
            }
        }
    }

    fn merge(&self, other: &Reservoir, cap: usize, rng: &mut ChaCha8Rng) -> Reservoir {
        let seen = self.seen + other.seen;
        if self.samples.len() + other.samples.len() <= cap {
            let mut samples = self.samples.clone();
            samples.extend_from_slice(&other.samples);
            return Reservoir { seen, samples };
        }
        // Hypergeometric split of `cap` draws between the two streams,
        // then a uniform subset of each side's reservoir.
        let (mut rem_a, mut rem_b) = (self.seen, other.seen);
        let mut from_a = 0usize;
        for _ in 0..cap {
            if rng.random_range(0..rem_a + rem_b) < rem_a {
                from_a += 1;
                rem_a -= 1;
            } else {
                rem_b -= 1;
            }
        }
        let from_a = from_a.min(self.samples.len());
        let from_b = (cap - from_a).min(other.samples.len());
        let mut samples = subset(&self.samples, from_a, rng);
        samples.extend(subset(&other.samples, from_b, rng));
        Reservoir { seen, samples }
    }
}

/// Uniform `k`-subset of `items`, kept in original order.
fn subset(items: &[f32], k: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    if k >= items.len() {
        return items.to_vec();
    }
    let mut idx: Vec<usize> = (0..items.len()).collect();
    for i in 0..k {
        let j = rng.random_range(i..idx.len());
        idx.swap(i, j);
    }
    let mut chosen = idx[..k].to_vec();
    chosen.sort_unstable();
    chosen.into_iter().map(|i| items[i]).collect()
}

/// Label attached to a probability matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Condition {
    pub domain: Domain,
    pub topic: String,
    pub aspect: Aspect,
}

/// Activation probabilities, row-major `[n_layers, ffn_dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMatrix {
    pub n_layers: usize,
    pub ffn_dim: usize,
    pub values: Vec<f64>,
    pub token_count: u64,
    pub condition: Option<Condition>,
}

impl ProbabilityMatrix {
    pub fn get(&self, loc: NeuronLoc) -> f64 {
        self.values[loc.flat(self.ffn_dim)]
    }
}

#[derive(Debug, Clone)]
pub struct ActivationStats {
    n_layers: usize,
    ffn_dim: usize,
    token_count: u64,
    active_counts: Vec<u64>,
    reservoirs: Vec<Reservoir>,
    options: StatsOptions,
    rng: ChaCha8Rng,
}

#[derive(Debug, Serialize, Deserialize)]
struct StatsHeader {
    format_version: u32,
    n_layers: usize,
    ffn_dim: usize,
    token_count: u64,
    cap: usize,
    mode: SampleMode,
    seed: u64,
    rng_seed: String,
    rng_stream: u64,
    rng_word_pos: String,
    layout: String,
}

fn mix_seeds(a: u64, b: u64, ta: u64, tb: u64) -> u64 {
    let mut h = a ^ 0x9E37_79B9_7F4A_7C15;
    for v in [b, ta, tb] {
        h = (h ^ v).wrapping_mul(0x1000_0000_01B3).rotate_left(29);
    }
    h
}

impl ActivationStats {
    pub fn new(n_layers: usize, ffn_dim: usize, options: StatsOptions) -> Self {
        let n = n_layers * ffn_dim;
        ActivationStats {
            n_layers,
            ffn_dim,
            token_count: 0,
            active_counts: vec![0; n],
            reservoirs: vec![Reservoir::default(); n],
            options,
            rng: ChaCha8Rng::seed_from_u64(options.seed),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_layers, self.ffn_dim)
    }

    pub fn token_count(&self) -> u64 {
        self.token_count
    }

    pub fn options(&self) -> StatsOptions {
        self.options
    }

    pub fn active_count(&self, loc: NeuronLoc) -> u64 {
        self.active_counts[loc.flat(self.ffn_dim)]
    }

    pub fn active_counts(&self) -> &[u64] {
        &self.active_counts
    }

    pub fn reservoir(&self, loc: NeuronLoc) -> &Reservoir {
        &self.reservoirs[loc.flat(self.ffn_dim)]
    }

    /// Records one token. The step must carry one tap for every layer.
    pub fn observe(&mut self, step: &StepTaps) -> Result<()> {
        if step.taps.len() != self.n_layers {
            return Err(IrisError::DimensionMismatch {
                context: format!("taps at position {}", step.position),
                expected: self.n_layers,
                found: step.taps.len(),
            });
        }
        for (expected_layer, tap) in step.taps.iter().enumerate() {
            if tap.layer != expected_layer {
                return Err(IrisError::InvalidArgument(format!(
                    "taps must cover layers 0..{} in order, found layer {} at slot {expected_layer}",
                    self.n_layers, tap.layer
                )));
            }
            if tap.gate_values.len() != self.ffn_dim || tap.hidden_values.len() != self.ffn_dim {
                return Err(IrisError::DimensionMismatch {
                    context: format!("tap at layer {}", tap.layer),
                    expected: self.ffn_dim,
                    found: tap.gate_values.len().min(tap.hidden_values.len()),
                });
            }
        }
        self.token_count += 1;
        let cap = self.options.cap;
        let mode = self.options.mode;
        for tap in &step.taps {
            let base = tap.layer * self.ffn_dim;
            for (i, (&gate, &hidden)) in tap.gate_values.iter().zip(&tap.hidden_values).enumerate() {
                let active = gate > 0.0;
                if active {
                    self.active_counts[base + i] += 1;
                }
                if active || mode == SampleMode::AllTokens {
                    self.reservoirs[base + i].offer(hidden, cap, &mut self.rng);
                }
            }
        }
        Ok(())
    }

    /// Feeds every generation-phase step; prompt steps are ignored.
    pub fn observe_transcript(&mut self, transcript: &Transcript) -> Result<()> {
        if transcript.generation_steps.len() != transcript.generated_tokens.len() {
            return Err(IrisError::InvalidArgument(
                "transcript lacks generation taps for some tokens".into(),
            ));
        }
        for step in &transcript.generation_steps {
            debug_assert_eq!(step.phase, Phase::Generation);
            self.observe(step)?;
        }
        Ok(())
    }

    /// `active_counts / token_count` for every neuron.
    pub fn activation_probability(&self) -> Result<ProbabilityMatrix> {
        if self.token_count == 0 {
            return Err(IrisError::EmptyObservation);
        }
        let n = self.token_count as f64;
        Ok(ProbabilityMatrix {
            n_layers: self.n_layers,
            ffn_dim: self.ffn_dim,
            values: self.active_counts.iter().map(|&c| c as f64 / n).collect(),
            token_count: self.token_count,
            condition: None,
        })
    }

    /// Percentile of the sampled hidden values at `loc`, interpolating
    /// linearly between order statistics at rank `1 + (q/100)(n-1)`.
    pub fn percentile(&self, loc: NeuronLoc, q: f64) -> Result<f64> {
        if loc.layer >= self.n_layers || loc.unit >= self.ffn_dim {
            return Err(IrisError::InvalidArgument(format!("neuron {loc} out of range")));
        }
        let samples = &self.reservoir(loc).samples;
        if samples.is_empty() {
            return Err(IrisError::EmptyReservoir {
                layer: loc.layer,
                unit: loc.unit,
            });
        }
        percentile_of(samples, q)
    }

    /// Combines two shards. Counts add exactly; reservoirs are unioned so
    /// they stay a uniform sample of the combined stream.
    pub fn merge(&self, other: &ActivationStats) -> Result<ActivationStats> {
        if self.shape() != other.shape() {
            return Err(IrisError::DimensionMismatch {
                context: "merged stats".into(),
                expected: self.n_layers * self.ffn_dim,
                found: other.n_layers * other.ffn_dim,
            });
        }
        if self.options.cap != other.options.cap || self.options.mode != other.options.mode {
            return Err(IrisError::InvalidArgument(
                "cannot merge stats with different reservoir settings".into(),
            ));
        }
        let seed = mix_seeds(
            self.options.seed,
            other.options.seed,
            self.token_count,
            other.token_count,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cap = self.options.cap;
        let reservoirs = self
            .reservoirs
            .iter()
            .zip(&other.reservoirs)
            .map(|(a, b)| a.merge(b, cap, &mut rng))
            .collect();
        Ok(ActivationStats {
            n_layers: self.n_layers,
            ffn_dim: self.ffn_dim,
            token_count: self.token_count + other.token_count,
            active_counts: self
                .active_counts
                .iter()
                .zip(&other.active_counts)
                .map(|(a, b)| a + b)
                .collect(),
            reservoirs,
            options: StatsOptions { seed, ..self.options },
            rng,
        })
    }

    /// Binary form: magic, u32 header length, JSON header, then
    /// little-endian active counts (u64), seen counts (u64), sample
    /// lengths (u32) and samples (f32), all in flat `layer * ffn_dim + unit`
    /// order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = StatsHeader {
            format_version: STATS_FORMAT_VERSION,
            n_layers: self.n_layers,
            ffn_dim: self.ffn_dim,
            token_count: self.token_count,
            cap: self.options.cap,
            mode: self.options.mode,
            seed: self.options.seed,
            rng_seed: hex::encode(self.rng.get_seed()),
            rng_stream: self.rng.get_stream(),
            rng_word_pos: self.rng.get_word_pos().to_string(),
            layout: "active u64[n], seen u64[n], len u32[n], samples f32[sum len]; n = n_layers*ffn_dim, index = layer*ffn_dim+unit".into(),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(STATS_MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for c in &self.active_counts {
            out.extend_from_slice(&c.to_le_bytes());
        }
        for r in &self.reservoirs {
            out.extend_from_slice(&r.seen.to_le_bytes());
        }
        for r in &self.reservoirs {
            out.extend_from_slice(&(r.samples.len() as u32).to_le_bytes());
        }
        for r in &self.reservoirs {
            for v in &r.samples {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = bytes;
        let mut magic = [0u8; 8];
        read_exact(&mut cur, &mut magic)?;
        if &magic != STATS_MAGIC {
            return Err(IrisError::CorruptBlob("not an activation stats file".into()));
        }
        let header_len = read_u32(&mut cur)? as usize;
        if header_len > cur.len() {
            return Err(IrisError::CorruptBlob("truncated stats header".into()));
        }
        let header: StatsHeader =
            serde_json::from_slice(&cur[..header_len]).map_err(|e| IrisError::json("stats header", e))?;
        cur = &cur[header_len..];
        if header.format_version != STATS_FORMAT_VERSION {
            return Err(IrisError::VersionMismatch {
                expected: STATS_FORMAT_VERSION,
                found: header.format_version,
            });
        }
        let n = header.n_layers * header.ffn_dim;
        let mut active_counts = Vec::with_capacity(n);
        for _ in 0..n {
            active_counts.push(read_u64(&mut cur)?);
        }
        let mut seen = Vec::with_capacity(n);
        for _ in 0..n {
            seen.push(read_u64(&mut cur)?);
        }
        let mut lens = Vec::with_capacity(n);
        for _ in 0..n {
            lens.push(read_u32(&mut cur)? as usize);
        }
        let mut reservoirs = Vec::with_capacity(n);
        for (s, len) in seen.into_iter().zip(lens) {
            if len > header.cap || len as u64 > s {
                return Err(IrisError::CorruptBlob("reservoir larger than its cap".into()));
            }
            let mut samples = Vec::with_capacity(len);
            for _ in 0..len {
                samples.push(f32::from_bits(read_u32(&mut cur)?));
            }
            reservoirs.push(Reservoir { seen: s, samples });
        }
        if !cur.is_empty() {
            return Err(IrisError::CorruptBlob("trailing bytes after stats payload".into()));
        }
        if active_counts.iter().any(|&c| c > header.token_count) {
            return Err(IrisError::CorruptBlob("active count exceeds token count".into()));
        }
        let seed_bytes: [u8; 32] = hex::decode(&header.rng_seed)
            .ok()
            .and_then(|b| b.try_into().ok())
            .ok_or_else(|| IrisError::CorruptBlob("bad rng seed".into()))?;
        let word_pos: u128 = header
            .rng_word_pos
            .parse()
            .map_err(|_| IrisError::CorruptBlob("bad rng position".into()))?;
        let mut rng = ChaCha8Rng::from_seed(seed_bytes);
        rng.set_stream(header.rng_stream);
        rng.set_word_pos(word_pos);
        Ok(ActivationStats {
            n_layers: header.n_layers,
            ffn_dim: header.ffn_dim,
            token_count: header.token_count,
            active_counts,
            reservoirs,
            options: StatsOptions {
                cap: header.cap,
                mode: header.mode,
                seed: header.seed,
            },
            rng,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| IrisError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| IrisError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

impl PartialEq for ActivationStats {
    fn eq(&self, other: &Self) -> bool {
        self.n_layers == other.n_layers
            && self.ffn_dim == other.ffn_dim
            && self.token_count == other.token_count
            && self.active_counts == other.active_counts
            && self.reservoirs == other.reservoirs
            && self.options == other.options
    }
}

fn read_exact(cur: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    cur.read_exact(buf)
        .map_err(|_| IrisError::CorruptBlob("truncated stats payload".into()))
}

fn read_u32(cur: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(cur, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(cur: &mut &[u8]) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(cur, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Linear-interpolation percentile over an unsorted sample.
pub fn percentile_of(samples: &[f32], q: f64) -> Result<f64> {
    if !(0.0..=100.0).contains(&q) {
        return Err(IrisError::InvalidArgument(format!("percentile {q} outside [0, 100]")));
    }
    if samples.is_empty() {
        return Err(IrisError::InvalidArgument("percentile of an empty sample".into()));
    }
    let mut sorted: Vec<f64> = samples.iter().map(|&v| v as f64).collect();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let rank = 1.0 + (q / 100.0) * (n as f64 - 1.0);
    let lo = rank.floor() as usize;
    let frac = rank - lo as f64;
    let low = sorted[lo - 1];
    if lo >= n || frac == 0.0 {
        return Ok(low);
    }
    Ok(low + frac * (sorted[lo] - low))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runtime::FfnTap;
    use proptest::prelude::*;

    fn step(position: usize, gates: &[Vec<f32>]) -> StepTaps {
        StepTaps {
            phase: Phase::Generation,
            position,
            token: 0,
            taps: gates
                .iter()
                .enumerate()
                .map(|(layer, g)| FfnTap {
                    layer,
                    token_position: position,
                    gate_values: g.clone(),
                    hidden_values: g.iter().map(|v| v * 2.0).collect(),
                })
                .collect(),
        }
    }

    fn stats_from(seq: &[Vec<Vec<f32>>], seed: u64) -> ActivationStats {
        let l = seq[0].len();
        let h = seq[0][0].len();
        let mut s = ActivationStats::new(
            l,
            h,
            StatsOptions {
                seed,
                ..Default::default()
            },
        );
        for (i, g) in seq.iter().enumerate() {
            s.observe(&step(i, g)).unwrap();
        }
        s
    }

    #[test]
    fn counts_strictly_positive_gates() {
        let mut s = ActivationStats::new(1, 1, StatsOptions::default());
        for (i, g) in [0.5f32, -0.2, 1.0].iter().enumerate() {
            s.observe(&step(i, &[vec![*g]])).unwrap();
        }
        assert_eq!(s.active_count(NeuronLoc::new(0, 0)), 2);
        assert_eq!(s.token_count(), 3);
        let p = s.activation_probability().unwrap();
        assert!((p.values[0] - 0.666_667).abs() < 1e-6);
        assert!((p.values[0] - 2.0 / 3.0).abs() < 1e-9);

        let mut zero = ActivationStats::new(1, 2, StatsOptions::default());
        zero.observe(&step(0, &[vec![0.0, -1.0]])).unwrap();
        assert_eq!(zero.active_counts(), &[0, 0]);
        assert_eq!(zero.activation_probability().unwrap().values, vec![0.0, 0.0]);
    }

    #[test]
    fn empty_stats_have_no_probability() {
        let s = ActivationStats::new(2, 3, StatsOptions::default());
        assert!(matches!(s.activation_probability(), Err(IrisError::EmptyObservation)));
        assert!(matches!(
            s.percentile(NeuronLoc::new(0, 0), 95.0),
            Err(IrisError::EmptyReservoir { .. })
        ));
    }

    #[test]
    fn observe_rejects_incomplete_steps() {
        let mut s = ActivationStats::new(2, 2, StatsOptions::default());
        assert!(s.observe(&step(0, &[vec![1.0, 1.0]])).is_err());
        assert!(s.observe(&step(0, &[vec![1.0], vec![1.0]])).is_err());
        assert_eq!(s.token_count(), 0);
    }

    #[test]
    fn percentile_examples() {
        assert_eq!(percentile_of(&[0.0, 10.0], 95.0).unwrap(), 9.5);
        assert_eq!(percentile_of(&[7.0], 3.0).unwrap(), 7.0);
        assert_eq!(percentile_of(&[7.0], 100.0).unwrap(), 7.0);
        let hundred: Vec<f32> = (1..=100).map(|v| v as f32).collect();
        // rank = 1 + 0.95 * 99 = 95.05 -> 95 + 0.05 * (96 - 95)
        assert!((percentile_of(&hundred, 95.0).unwrap() - 95.05).abs() < 1e-9);
        assert!(percentile_of(&hundred, 101.0).is_err());
    }

    #[test]
    fn reservoir_respects_cap_and_is_exact_below() {
        let opts = StatsOptions {
            cap: 8,
            mode: SampleMode::AllTokens,
            seed: 3,
        };
        let mut s = ActivationStats::new(1, 1, opts);
        for i in 0..5 {
            s.observe(&step(i, &[vec![i as f32]])).unwrap();
        }
        assert_eq!(s.reservoir(NeuronLoc::new(0, 0)).samples, vec![0.0, 2.0, 4.0, 6.0, 8.0]);
        for i in 5..100 {
            s.observe(&step(i, &[vec![i as f32]])).unwrap();
        }
        let r = s.reservoir(NeuronLoc::new(0, 0));
        assert_eq!(r.samples.len(), 8);
        assert_eq!(r.seen, 100);
    }

    #[test]
    fn active_only_mode_skips_inactive_tokens() {
        let opts = StatsOptions {
            mode: SampleMode::ActiveOnly,
            ..Default::default()
        };
        let mut s = ActivationStats::new(1, 1, opts);
        for (i, g) in [1.0f32, -1.0, 3.0].iter().enumerate() {
            s.observe(&step(i, &[vec![*g]])).unwrap();
        }
        assert_eq!(s.reservoir(NeuronLoc::new(0, 0)).samples, vec![2.0, 6.0]);
    }

    #[test]
    fn merge_with_empty_is_identity_on_counts_and_samples() {
        let x = stats_from(&[vec![vec![1.0, -1.0]], vec![vec![2.0, 0.5]]], 1);
        let empty = ActivationStats::new(1, 2, StatsOptions::default());
        let m = x.merge(&empty).unwrap();
        assert_eq!(m.active_counts(), x.active_counts());
        assert_eq!(m.token_count(), x.token_count());
        assert_eq!(m.reservoirs, x.reservoirs);
    }

    #[test]
    fn merge_above_cap_keeps_cap_samples_from_both_streams() {
        let opts = |seed| StatsOptions {
            cap: 16,
            mode: SampleMode::AllTokens,
            seed,
        };
        let mut a = ActivationStats::new(1, 1, opts(1));
        let mut b = ActivationStats::new(1, 1, opts(2));
        for i in 0..40 {
            a.observe(&step(i, &[vec![1.0]])).unwrap();
            b.observe(&step(i, &[vec![-1.0]])).unwrap();
        }
        let m = a.merge(&b).unwrap();
        let r = m.reservoir(NeuronLoc::new(0, 0));
        assert_eq!(r.samples.len(), 16);
        assert_eq!(r.seen, 80);
        assert!(r.samples.contains(&2.0) && r.samples.contains(&-2.0));
    }

    #[test]
    fn merge_rejects_shape_mismatch() {
        let a = ActivationStats::new(1, 2, StatsOptions::default());
        let b = ActivationStats::new(2, 2, StatsOptions::default());
        assert!(a.merge(&b).is_err());
    }

    #[test]
    fn binary_round_trip_preserves_state() {
        let s = stats_from(
            &[
                vec![vec![1.0, -1.0], vec![0.0, 3.0]],
                vec![vec![2.0, 0.5], vec![-1.0, 1.0]],
            ],
            9,
        );
        let bytes = s.to_bytes();
        let back = ActivationStats::from_bytes(&bytes).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.to_bytes(), bytes);
        let mut bad = bytes.clone();
        bad.truncate(bytes.len() - 3);
        assert!(matches!(
            ActivationStats::from_bytes(&bad),
            Err(IrisError::CorruptBlob(_))
        ));
    }

    fn gate_stream() -> impl Strategy<Value = Vec<Vec<Vec<f32>>>> {
        proptest::collection::vec(
            proptest::collection::vec(proptest::collection::vec(-1.0f32..1.0, 3), 2),
            1..40,
        )
    }

    proptest! {
        #[test]
        fn merge_counts_match_concatenated_stream(a in gate_stream(), b in gate_stream()) {
            let sa = stats_from(&a, 1);
            let sb = stats_from(&b, 2);
            let joined: Vec<_> = a.iter().chain(&b).cloned().collect();
            let sj = stats_from(&joined, 3);
            let ab = sa.merge(&sb).unwrap();
            let ba = sb.merge(&sa).unwrap();
            prop_assert_eq!(ab.active_counts(), sj.active_counts());
            prop_assert_eq!(ab.token_count(), sj.token_count());
            prop_assert_eq!(ab.active_counts(), ba.active_counts());
            prop_assert_eq!(
                ab.activation_probability().unwrap().values,
                sj.activation_probability().unwrap().values
            );
        }

        #[test]
        fn merge_is_associative_on_counts(a in gate_stream(), b in gate_stream(), c in gate_stream()) {
            let (sa, sb, sc) = (stats_from(&a, 1), stats_from(&b, 2), stats_from(&c, 3));
            let left = sa.merge(&sb).unwrap().merge(&sc).unwrap();
            let right = sa.merge(&sb.merge(&sc).unwrap()).unwrap();
            prop_assert_eq!(left.active_counts(), right.active_counts());
            prop_assert_eq!(left.token_count(), right.token_count());
        }

        #[test]
        fn percentile_is_monotone_with_min_max_ends(
            samples in proptest::collection::vec(-100.0f32..100.0, 1..50),
            q1 in 0.0f64..=100.0,
            q2 in 0.0f64..=100.0,
        ) {
            let (lo, hi) = if q1 <= q2 { (q1, q2) } else { (q2, q1) };
            prop_assert!(percentile_of(&samples, lo).unwrap() <= percentile_of(&samples, hi).unwrap());
            let min = samples.iter().copied().fold(f32::INFINITY, f32::min) as f64;
            let max = samples.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
            prop_assert_eq!(percentile_of(&samples, 0.0).unwrap(), min);
            prop_assert_eq!(percentile_of(&samples, 100.0).unwrap(), max);
        }
    }
}
