use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::NewsExample;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const NO_KEYWORD: usize = 2;

const SPECIALS: [&str; 3] = ["<pad>", "<unk>", "<no-keyword>"];

/// Token to index map with reserved low indices for the special entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Default for Vocab {
    fn default() -> Self {
        Self::from(SPECIALS.iter().map(|s| s.to_string()).collect::<Vec<_>>())
    }
}

impl Vocab {
    /// Tokens and keywords of `examples` in order of first appearance.
    pub fn build<'a>(examples: impl IntoIterator<Item = &'a NewsExample>) -> Self {
        let mut v = Self::default();
        for ex in examples {
            for t in ex.tokens.iter().chain(ex.keywords.iter().flatten()) {
                v.insert(t);
            }
        }
        v
    }

    pub fn insert(&mut self, token: &str) -> usize {
        if let Some(&i) = self.index.get(token) {
            return i;
        }
        self.index.insert(token.to_string(), self.tokens.len());
        self.tokens.push(token.to_string());
        self.tokens.len() - 1
    }

    /// Index of `token`, or [`UNK`] when absent.
    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::DepParse;

    #[test]
    fn specials_and_order() {
        let ex = NewsExample {
            id: "a".into(),
            tokens: vec!["b".into(), "a".into(), "b".into()],
            parse: DepParse::from_signed(&[-1, 0, 0], None).unwrap(),
            keywords: Some(vec!["z".into()]),
            label: 0,
        };
        let v = Vocab::build([&ex]);
        assert_eq!(v.tokens()[3..], ["b", "a", "z"]);
        assert_eq!(v.id("<pad>"), PAD);
        assert_eq!(v.id("never"), UNK);
        assert_eq!(v.id("<no-keyword>"), NO_KEYWORD);
        let json = serde_json::to_string(&v).unwrap();
        assert_eq!(serde_json::from_str::<Vocab>(&json).unwrap(), v);
    }
}
