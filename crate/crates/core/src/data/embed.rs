//! External per-token vectors.
//!
//! File format: a `dim N` header line, then one `token v_1 ... v_N` line per
//! token. A vocabulary word absent from the file may carry its subword
//! segmentation as pieces joined by `##` (`play##ing` is `play` + `##ing`);
//! its vector is the sum of the piece vectors.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::{DataError, Vocab, UNK};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct VectorTable {
    pub dim: usize,
    pub vectors: HashMap<String, Vec<f64>>,
}

impl VectorTable {
    pub fn parse(text: &str) -> Result<Self, DataError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let dim = match lines.next().map(|(_, l)| l.split_whitespace().collect::<Vec<_>>()) {
            Some(h) if h.len() == 2 && h[0] == "dim" => h[1]
                .parse::<usize>()
                .map_err(|_| DataError::Other(format!("bad vector dimension `{}`", h[1])))?,
            _ => return Err(DataError::Other("vector file must start with `dim N`".into())),
        };
        let mut vectors = HashMap::new();
        for (k, line) in lines {
            let mut parts = line.split_whitespace();
            let token = parts.next().expect("non-empty line");
            let v: Vec<f64> = parts
                .map(str::parse)
                .collect::<Result<_, _>>()
                .map_err(|e| DataError::Other(format!("vector line {}: {e}", k + 1)))?;
            if v.len() != dim {
                return Err(DataError::Other(format!(
                    "vector line {}: {} values, expected {dim}",
                    k + 1,
                    v.len()
                )));
            }
            vectors.insert(token.to_string(), v);
        }
        Ok(Self { dim, vectors })
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
        Self::parse(&text)
    }

    fn pieces(word: &str) -> Vec<String> {
        let mut parts = word.split("##");
        let mut out = vec![parts.next().unwrap_or_default().to_string()];
        out.extend(parts.map(|p| format!("##{p}")));
        out.retain(|p| p != "##" && !p.is_empty());
        out
    }

    /// Vector for a word: exact entry, else the sum of its pieces. `None`
    /// when neither resolves.
    pub fn word_vector(&self, word: &str) -> Option<Vec<f64>> {
        if let Some(v) = self.vectors.get(word) {
            return Some(v.clone());
        }
        let pieces = Self::pieces(word);
        if pieces.len() < 2 {
            return None;
        }
        let mut sum = vec![0.0; self.dim];
        for p in &pieces {
            let v = self
                .vectors
                .get(p)
                .or_else(|| self.vectors.get(p.trim_start_matches("##")))?;
            sum.iter_mut().zip(v).for_each(|(s, x)| *s += x);
        }
        Some(sum)
    }

    /// `|vocab| × dim` table. Unresolved words share the UNK row, which is
    /// the file's `<unk>` entry or zeros.
    pub fn build_table(&self, vocab: &Vocab) -> Tensor {
        let unk = self.vectors.get("<unk>").cloned().unwrap_or_else(|| vec![0.0; self.dim]);
        let mut t = Tensor::zeros(vocab.len(), self.dim);
        for (i, tok) in vocab.tokens().iter().enumerate() {
            let v = if i == UNK {
                unk.clone()
            } else {
                self.word_vector(tok).unwrap_or_else(|| unk.clone())
            };
            for (j, x) in v.into_iter().enumerate() {
                t.set(i, j, x);
            }
        }
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subword_vectors_are_summed() {
        let vt = VectorTable::parse("dim 2\nplay 1 2\n##ing 3 4\nrun 0.5 -1\n").unwrap();
        assert_eq!(vt.word_vector("play##ing"), Some(vec![4.0, 6.0]));
        assert_eq!(vt.word_vector("run"), Some(vec![0.5, -1.0]));
        assert_eq!(vt.word_vector("walk"), None);
        let mut vocab = Vocab::default();
        vocab.insert("run");
        vocab.insert("walk");
        let t = vt.build_table(&vocab);
        assert_eq!(t.row(3), &[0.5, -1.0]);
        assert_eq!(t.row(4), &[0.0, 0.0]);
    }

    #[test]
    fn malformed_files() {
        assert!(VectorTable::parse("2\na 1 2\n").is_err());
        assert!(VectorTable::parse("dim 2\na 1\n").is_err());
        assert!(VectorTable::parse("dim 2\na 1 x\n").is_err());
    }
}
