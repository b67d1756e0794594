//! Persona prompt templates, one file per (domain, aspect).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{IrisError, Result};
use crate::types::{Aspect, Domain};

pub const QUESTION_PLACEHOLDER: &str = "{question}";

/// Template text with a `{question}` placeholder. Stored as JSON
/// `{"domain", "aspect", "template"}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub domain: Domain,
    pub aspect: Aspect,
    pub template: String,
}

impl PromptTemplate {
    pub fn new(domain: Domain, aspect: Aspect, template: impl Into<String>) -> Result<Self> {
        let t = PromptTemplate {
            domain,
            aspect,
            template: template.into(),
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.template.contains(QUESTION_PLACEHOLDER) {
            return Err(IrisError::InvalidArgument(format!(
                "{} {} template lacks the {QUESTION_PLACEHOLDER} placeholder",
                self.domain, self.aspect
            )));
        }
        Ok(())
    }

    pub fn render(&self, question: &str) -> String {
        self.template.replace(QUESTION_PLACEHOLDER, question)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| IrisError::io(path, e))?;
        let t: PromptTemplate =
            serde_json::from_str(&text).map_err(|e| IrisError::json(path.display().to_string(), e))?;
        t.validate()?;
        Ok(t)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).map_err(|e| IrisError::json("prompt template", e))?;
        text.push('\n');
        fs::write(path, text).map_err(|e| IrisError::io(path, e))
    }

    /// Conventional file name inside a template directory.
    pub fn file_name(domain: Domain, aspect: Aspect) -> String {
        format!("{domain}_{aspect}.json")
    }
}

/// Positive and negative persona templates of one domain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PersonaPair {
    pub positive: PromptTemplate,
    pub negative: PromptTemplate,
}

impl PersonaPair {
    pub fn for_aspect(&self, aspect: Aspect) -> &PromptTemplate {
        match aspect {
            Aspect::Positive => &self.positive,
            Aspect::Negative => &self.negative,
        }
    }

    pub fn domain(&self) -> Domain {
        self.positive.domain
    }

    /// Same templates with roles exchanged.
    pub fn swapped(&self) -> PersonaPair {
        PersonaPair {
            positive: self.negative.clone(),
            negative: self.positive.clone(),
        }
    }

    /// Reads `<dir>/<D>_positive.json` and `<dir>/<D>_negative.json`.
    pub fn load_dir(dir: &Path, domain: Domain) -> Result<Self> {
        let read = |aspect: Aspect| -> Result<PromptTemplate> {
            let path = dir.join(PromptTemplate::file_name(domain, aspect));
            let t = PromptTemplate::load(&path)?;
            if t.domain != domain || t.aspect != aspect {
                return Err(IrisError::InvalidArgument(format!(
                    "{} declares {} {}, expected {domain} {aspect}",
                    path.display(),
                    t.domain,
                    t.aspect
                )));
            }
            Ok(t)
        };
        Ok(PersonaPair {
            positive: read(Aspect::Positive)?,
            negative: read(Aspect::Negative)?,
        })
    }
}
