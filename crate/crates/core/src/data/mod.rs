//! Corpus records, JSONL and CoNLL-U readers, and encoding into model
//! inputs.

mod conllu;
pub mod embed;
pub mod keywords;
pub mod synthetic;
mod vocab;

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::CorpusFormat;
use crate::graph::{build_hop_stack, DepParse};
use crate::model::EncodedExample;

pub use conllu::{parse_conllu, write_conllu};
pub use keywords::{extract_keywords_fallback, DocFreq};
pub use vocab::{Vocab, NO_KEYWORD, PAD, UNK};

/// One news piece: words, their dependency parse, keywords and label.
#[derive(Debug, Clone, PartialEq)]
pub struct NewsExample {
    pub id: String,
    pub tokens: Vec<String>,
    pub parse: DepParse,
    /// `None` when the record carried no keyword field.
    pub keywords: Option<Vec<String>>,
    /// 1 = fake, 0 = real.
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordError {
    pub line: usize,
    pub id: Option<String>,
    pub field: &'static str,
    pub message: String,
}

impl fmt::Display for RecordError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}", self.line)?;
        if let Some(id) = &self.id {
            write!(f, " (record {id})")?;
        }
        write!(f, ": field `{}`: {}", self.field, self.message)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {} invalid record(s); first: {}", .errors.len(), .errors[0])]
    Invalid { path: PathBuf, errors: Vec<RecordError> },
    #[error("{0}")]
    Other(String),
}

impl DataError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct JsonRecord {
    id: String,
    tokens: Vec<String>,
    heads: Vec<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    deprels: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    keywords: Option<Vec<String>>,
    label: i64,
}

#[derive(Debug, Clone, Default)]
pub struct Loaded {
    pub examples: Vec<NewsExample>,
    pub warnings: Vec<String>,
}

/// Validates raw fields into an example; errors name the offending field.
pub fn validate_record(
    id: String,
    tokens: Vec<String>,
    heads: &[i64],
    deprels: Option<Vec<String>>,
    keywords: Option<Vec<String>>,
    label: i64,
    line: usize,
) -> Result<NewsExample, RecordError> {
    let err = |field, message: String| RecordError {
        line,
        id: Some(id.clone()),
        field,
        message,
    };
    if tokens.is_empty() {
        return Err(err("tokens", "no tokens".into()));
    }
    if heads.len() != tokens.len() {
        return Err(err(
            "heads",
            format!("{} heads for {} tokens", heads.len(), tokens.len()),
        ));
    }
    if let Some(d) = &deprels {
        if d.len() != tokens.len() {
            return Err(err("deprels", format!("{} deprels for {} tokens", d.len(), tokens.len())));
        }
    }
    let label = match label {
        0 => 0,
        1 => 1,
        other => return Err(err("label", format!("label {other} not in {{0,1}}"))),
    };
    let parse = DepParse::from_signed(heads, deprels).map_err(|e| err("heads", e.to_string()))?;
    Ok(NewsExample {
        id,
        tokens,
        parse,
        keywords,
        label,
    })
}

fn parse_jsonl(text: &str, fail_fast: bool) -> (Vec<NewsExample>, Vec<RecordError>) {
    let mut out = Vec::new();
    let mut errors = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let lineno = k + 1;
        if line.trim().is_empty() {
            continue;
        }
        let result = serde_json::from_str::<JsonRecord>(line)
            .map_err(|e| RecordError {
                line: lineno,
                id: None,
                field: "record",
                message: e.to_string(),
            })
            .and_then(|r| validate_record(r.id, r.tokens, &r.heads, r.deprels, r.keywords, r.label, lineno));
        match result {
            Ok(ex) => out.push(ex),
            Err(e) => {
                errors.push(e);
                if fail_fast {
                    break;
                }
            }
        }
    }
    (out, errors)
}

/// Reads and validates a corpus. All malformed records are reported unless
/// `fail_fast` stops at the first.
pub fn load_corpus(path: &Path, format: CorpusFormat, fail_fast: bool) -> Result<Loaded, DataError> {
    let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    let (examples, mut errors) = match format {
        CorpusFormat::Jsonl => parse_jsonl(&text, fail_fast),
        CorpusFormat::Conllu => parse_conllu(&text, fail_fast),
    };
    let mut seen = std::collections::HashSet::new();
    for ex in &examples {
        if !seen.insert(ex.id.as_str()) {
            errors.push(RecordError {
                line: 0,
                id: Some(ex.id.clone()),
                field: "id",
                message: "duplicate id".into(),
            });
        }
    }
    if !errors.is_empty() {
        return Err(DataError::Invalid {
            path: path.to_path_buf(),
            errors,
        });
    }
    let mut warnings = Vec::new();
    if examples.is_empty() {
        warnings.push(format!("{}: corpus is empty", path.display()));
    }
    Ok(Loaded { examples, warnings })
}

pub fn to_jsonl_line(ex: &NewsExample) -> String {
    let rec = JsonRecord {
        id: ex.id.clone(),
        tokens: ex.tokens.clone(),
        heads: ex.parse.signed_heads(),
        deprels: ex.parse.deprels().map(|d| d.to_vec()),
        keywords: ex.keywords.clone(),
        label: i64::from(ex.label),
    };
    serde_json::to_string(&rec).expect("record serializes")
}

pub fn save_corpus(path: &Path, examples: &[NewsExample], format: CorpusFormat) -> Result<(), DataError> {
    let body = match format {
        CorpusFormat::Jsonl => {
            let mut s = String::new();
            for ex in examples {
                s.push_str(&to_jsonl_line(ex));
                s.push('\n');
            }
            s
        }
        CorpusFormat::Conllu => write_conllu(examples),
    };
    let mut f = fs::File::create(path).map_err(|e| DataError::io(path, e))?;
    f.write_all(body.as_bytes()).map_err(|e| DataError::io(path, e))
}

/// Counts the records of a JSONL file without validating them.
pub fn count_lines(path: &Path) -> Result<usize, DataError> {
    let f = fs::File::open(path).map_err(|e| DataError::io(path, e))?;
    Ok(BufReader::new(f).lines().map_while(|l| l.ok()).filter(|l| !l.trim().is_empty()).count())
}

/// Keywords used for an example: its own list if present, otherwise the
/// TF-IDF fallback.
pub fn keywords_for(ex: &NewsExample, df: &DocFreq, k: usize) -> Vec<String> {
    match &ex.keywords {
        Some(k) => k.clone(),
        None => extract_keywords_fallback(&ex.tokens, df, k),
    }
}

/// Vocabulary lookup, tail truncation to `max_len` and hop-stack
/// construction on the truncated parse.
pub fn encode(ex: &NewsExample, vocab: &Vocab, max_len: usize, hops: usize, df: &DocFreq, k: usize) -> EncodedExample {
    let n = ex.tokens.len().min(max_len);
    let parse = if n < ex.tokens.len() {
        ex.parse.truncate(max_len)
    } else {
        ex.parse.clone()
    };
    let mut kw: Vec<usize> = keywords_for(ex, df, k).iter().map(|w| vocab.id(w)).collect();
    if kw.is_empty() {
        kw.push(NO_KEYWORD);
    }
    EncodedExample {
        id: ex.id.clone(),
        ids: ex.tokens[..n].iter().map(|t| vocab.id(t)).collect(),
        hops: build_hop_stack(&parse, hops).expect("validated parse"),
        keyword_ids: kw,
        label: ex.label,
    }
}

pub fn encode_all(
    examples: &[NewsExample],
    vocab: &Vocab,
    max_len: usize,
    hops: usize,
    df: &DocFreq,
    k: usize,
) -> Vec<EncodedExample> {
    examples.iter().map(|e| encode(e, vocab, max_len, hops, df, k)).collect()
}
