use serde::{Deserialize, Serialize};

/// A tokenized text: the unit the provider embeds and the stealer copies.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub tokens: Vec<String>,
}

impl Document {
    pub fn new(id: impl Into<String>, tokens: Vec<String>) -> Self {
        Document {
            id: id.into(),
            tokens,
        }
    }

    /// Builds a document by tokenizing raw text.
    pub fn from_text(id: impl Into<String>, text: &str) -> Self {
        Document::new(id, crate::triggers::tokenize(text))
    }

    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

pub type Corpus = Vec<Document>;
