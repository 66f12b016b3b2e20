//! TF-IDF keyword fallback for records that carry no keyword list.

use std::collections::{HashMap, HashSet};

use super::NewsExample;

/// Corpus document frequencies.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DocFreq {
    pub n_docs: usize,
    pub df: HashMap<String, usize>,
}

impl DocFreq {
    pub fn from_examples<'a>(examples: impl IntoIterator<Item = &'a NewsExample>) -> Self {
        Self::from_docs(examples.into_iter().map(|e| e.tokens.as_slice()))
    }

    pub fn from_docs<'a>(docs: impl IntoIterator<Item = &'a [String]>) -> Self {
        let mut out = Self::default();
        for doc in docs {
            out.n_docs += 1;
            let uniq: HashSet<&String> = doc.iter().collect();
            for t in uniq {
                *out.df.entry(t.clone()).or_insert(0) += 1;
            }
        }
        out
    }

    /// Smoothed `ln((1 + N) / (1 + df)) + 1`.
    pub fn idf(&self, token: &str) -> f64 {
        let df = self.df.get(token).copied().unwrap_or(0);
        ((1 + self.n_docs) as f64 / (1 + df) as f64).ln() + 1.0
    }
}

/// Top `k` distinct tokens by in-document count × idf; ties go to the
/// token that appears first.
pub fn extract_keywords_fallback(tokens: &[String], df: &DocFreq, k: usize) -> Vec<String> {
    let mut first: Vec<(&String, usize)> = Vec::new();
    let mut counts: HashMap<&String, usize> = HashMap::new();
    for t in tokens {
        let c = counts.entry(t).or_insert(0);
        if *c == 0 {
            first.push((t, first.len()));
        }
        *c += 1;
    }
    let mut scored: Vec<(f64, usize, &String)> = first
        .into_iter()
        .map(|(t, pos)| (counts[t] as f64 * df.idf(t), pos, t))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    scored.into_iter().take(k).map(|(_, _, t)| t.clone()).collect()
}
