//! Small domain types shared across modules: personality domains, aspects,
//! neuron locations and the situational topic taxonomy.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::IrisError;

/// Big Five personality domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Domain {
    O,
    C,
    E,
    A,
    N,
}

impl Domain {
    pub const ALL: [Domain; 5] = [Domain::O, Domain::C, Domain::E, Domain::A, Domain::N];

    pub fn as_str(self) -> &'static str {
        match self {
            Domain::O => "O",
            Domain::C => "C",
            Domain::E => "E",
            Domain::A => "A",
            Domain::N => "N",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Domain {
    type Err = IrisError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "O" | "o" => Ok(Domain::O),
            "C" | "c" => Ok(Domain::C),
            "E" | "e" => Ok(Domain::E),
            "A" | "a" => Ok(Domain::A),
            "N" | "n" => Ok(Domain::N),
            other => Err(IrisError::InvalidArgument(format!(
                "unknown personality domain `{other}` (expected one of O, C, E, A, N)"
            ))),
        }
    }
}

/// Positive or negative pole of a personality domain. Also used as the
/// polarity of a persona neuron record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aspect {
    Positive,
    Negative,
}

/// Polarity of a persona neuron; same two values as [`Aspect`].
pub type Polarity = Aspect;

impl Aspect {
    pub const BOTH: [Aspect; 2] = [Aspect::Positive, Aspect::Negative];

    pub fn opposite(self) -> Aspect {
        match self {
            Aspect::Positive => Aspect::Negative,
            Aspect::Negative => Aspect::Positive,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Aspect::Positive => "positive",
            Aspect::Negative => "negative",
        }
    }
}

impl fmt::Display for Aspect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Aspect {
    type Err = IrisError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "positive" | "pos" | "+" => Ok(Aspect::Positive),
            "negative" | "neg" | "-" => Ok(Aspect::Negative),
            other => Err(IrisError::InvalidArgument(format!(
                "unknown aspect `{other}` (expected positive or negative)"
            ))),
        }
    }
}

/// Location of one FFN hidden unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NeuronLoc {
    pub layer: usize,
    pub unit: usize,
}

impl NeuronLoc {
    pub const fn new(layer: usize, unit: usize) -> Self {
        NeuronLoc { layer, unit }
    }

    /// Flat index `layer * ffn_dim + unit`.
    pub fn flat(self, ffn_dim: usize) -> usize {
        self.layer * ffn_dim + self.unit
    }

    pub fn from_flat(index: usize, ffn_dim: usize) -> Self {
        NeuronLoc {
            layer: index / ffn_dim,
            unit: index % ffn_dim,
        }
    }
}

impl fmt::Display for NeuronLoc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.layer, self.unit)
    }
}

/// Topic label used for the single merged condition in global mode.
pub const GLOBAL_TOPIC: &str = "global";

/// Topic label for questions that carry no situation label.
pub const UNKNOWN_TOPIC: &str = "unknown";

/// The 30 situational topics, in alphabetical order.
pub const TOPIC_TAXONOMY: [&str; 30] = [
    "Art and culture",
    "Beauty and self-care",
    "Creativity and inspiration",
    "Diversity and inclusion",
    "Education and learning",
    "Entrepreneurship and business",
    "Family and parenting",
    "Fashion and style",
    "Food and drink",
    "Gaming and technology",
    "Health and wellness",
    "History and nostalgia",
    "Literature and writing",
    "Mindfulness and meditation",
    "Money and finance",
    "Music and entertainment",
    "Nature and the environment",
    "Personal growth and development",
    "Philosophy and ethics",
    "Politics and current events",
    "Pop culture and trends",
    "Relationships and dating",
    "Science and innovation",
    "Social media and communication",
    "Spirituality and faith",
    "Sports and fitness",
    "Technology",
    "Travel and adventure",
    "Travel and culture exchange",
    "Work and career",
];

pub fn default_topics() -> Vec<String> {
    TOPIC_TAXONOMY.iter().map(|t| t.to_string()).collect()
}
