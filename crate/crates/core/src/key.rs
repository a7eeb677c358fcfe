//! The defender's secret: trigger sets, target embeddings and method
//! parameters.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::triggers::TriggerSet;

pub const DEFAULT_ALPHA: f64 = 0.25;
pub const DEFAULT_MAX_TRIGGERS: usize = 4;
pub const DEFAULT_WARDEN_WATERMARKS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    None,
    EmbMarker,
    Warden,
    Espew,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::None, Method::EmbMarker, Method::Warden, Method::Espew];

    pub fn name(self) -> &'static str {
        match self {
            Method::None => "none",
            Method::EmbMarker => "embmarker",
            Method::Warden => "warden",
            Method::Espew => "espew",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown method '{s}'")))
    }
}

/// `triggers` and `targets` are parallel. ESpeW and EmbMarker carry exactly
/// one pair; WARDEN carries one or more; NONE may carry any number, all
/// ignored at injection time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WatermarkKey {
    pub method: Method,
    pub triggers: Vec<TriggerSet>,
    pub targets: Vec<Embedding>,
    pub alpha: f64,
    pub max_trigger_count: usize,
    /// Text whose clean embedding is the first target. Lets the target be
    /// re-fetched through a suspect service that permutes coordinates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_sample: Option<String>,
}

impl WatermarkKey {
    pub fn new(
        method: Method,
        triggers: Vec<TriggerSet>,
        targets: Vec<Embedding>,
        alpha: f64,
        max_trigger_count: usize,
    ) -> Result<Self> {
        let key = WatermarkKey {
            method,
            triggers,
            targets,
            alpha,
            max_trigger_count,
            target_sample: None,
        };
        key.validate()?;
        Ok(key)
    }

    pub fn with_target_sample(mut self, text: impl Into<String>) -> Self {
        self.target_sample = Some(text.into());
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.triggers.len() != self.targets.len() {
            return Err(Error::Config(format!(
                "{} trigger sets but {} targets",
                self.triggers.len(),
                self.targets.len()
            )));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if self.max_trigger_count == 0 {
            return Err(Error::Config("max trigger count must be positive".into()));
        }
        match self.method {
            Method::Espew | Method::EmbMarker if self.triggers.len() != 1 => Err(Error::Config(format!(
                "{} needs exactly one trigger set, found {}",
                self.method,
                self.triggers.len()
            ))),
            Method::Warden if self.triggers.is_empty() => {
                Err(Error::Config("warden needs at least one trigger set".into()))
            }
            _ => {
                if let Some(first) = self.targets.first() {
                    for t in &self.targets[1..] {
                        Error::check_dim(first.dim(), t.dim())?;
                    }
                }
                Ok(())
            }
        }
    }

    /// Embedding dimension implied by the targets, if any.
    pub fn dim(&self) -> Option<usize> {
        self.targets.first().map(Embedding::dim)
    }

    /// Union of all trigger tokens, sorted.
    pub fn all_trigger_tokens(&self) -> Vec<String> {
        let mut all: Vec<String> = self
            .triggers
            .iter()
            .flat_map(|t| t.tokens().iter().cloned())
            .collect();
        all.sort();
        all.dedup();
        all
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let key: WatermarkKey = serde_json::from_str(&text)?;
        key.validate()?;
        Ok(key)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}
