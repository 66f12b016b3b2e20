//! CoNLL-U import. Columns ID, FORM, HEAD and DEPREL are read; the label
//! comes from a `# label = 0|1` comment, the id from `# sent_id = ...`, and
//! optional keywords from `# keywords = w1 w2 ...`.

use super::{validate_record, NewsExample, RecordError};

struct Block {
    start: usize,
    id: Option<String>,
    label: Option<String>,
    keywords: Option<Vec<String>>,
    forms: Vec<String>,
    heads: Vec<i64>,
    deprels: Vec<String>,
    error: Option<RecordError>,
}

impl Block {
    fn new(start: usize) -> Self {
        Self {
            start,
            id: None,
            label: None,
            keywords: None,
            forms: Vec::new(),
            heads: Vec::new(),
            deprels: Vec::new(),
            error: None,
        }
    }

    fn finish(self, ordinal: usize) -> Result<NewsExample, RecordError> {
        if let Some(e) = self.error {
            return Err(e);
        }
        let id = self.id.unwrap_or_else(|| format!("s{ordinal}"));
        let label = match self.label.as_deref().map(str::trim) {
            Some("0") => 0,
            Some("1") => 1,
            other => {
                return Err(RecordError {
                    line: self.start,
                    id: Some(id),
                    field: "label",
                    message: match other {
                        None => "missing `# label = ` comment".into(),
                        Some(v) => format!("label {v} not in {{0,1}}"),
                    },
                })
            }
        };
        validate_record(
            id,
            self.forms,
            &self.heads,
            Some(self.deprels),
            self.keywords,
            label,
            self.start,
        )
    }
}

pub fn parse_conllu(text: &str, fail_fast: bool) -> (Vec<NewsExample>, Vec<RecordError>) {
    let mut out = Vec::new();
    let mut errors = Vec::new();
    let mut block: Option<Block> = None;
    let mut ordinal = 0;
    let mut flush = |b: Option<Block>, out: &mut Vec<NewsExample>, errors: &mut Vec<RecordError>| {
        if let Some(b) = b {
            if b.forms.is_empty() && b.error.is_none() {
                return;
            }
            ordinal += 1;
            match b.finish(ordinal) {
                Ok(ex) => out.push(ex),
                Err(e) => errors.push(e),
            }
        }
    };
    for (k, raw) in text.lines().enumerate() {
        let lineno = k + 1;
        let line = raw.trim_end();
        if line.is_empty() {
            flush(block.take(), &mut out, &mut errors);
            if fail_fast && !errors.is_empty() {
                return (out, errors);
            }
            continue;
        }
        let b = block.get_or_insert_with(|| Block::new(lineno));
        if let Some(comment) = line.strip_prefix('#') {
            if let Some((key, value)) = comment.split_once('=') {
                let value = value.trim();
                match key.trim() {
                    "sent_id" => b.id = Some(value.to_string()),
                    "label" => b.label = Some(value.to_string()),
                    "keywords" => b.keywords = Some(value.split_whitespace().map(String::from).collect()),
                    _ => {}
                }
            }
            continue;
        }
        if b.error.is_some() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 8 {
            b.error = Some(RecordError {
                line: lineno,
                id: b.id.clone(),
                field: "record",
                message: format!("expected 10 tab-separated columns, found {}", cols.len()),
            });
            continue;
        }
        // multiword ranges and empty nodes carry no tree position
        if cols[0].contains('-') || cols[0].contains('.') {
            continue;
        }
        match (cols[0].parse::<usize>(), cols[6].parse::<i64>()) {
            (Ok(idx), Ok(head)) if idx == b.forms.len() + 1 => {
                b.forms.push(cols[1].to_string());
                b.heads.push(head - 1);
                b.deprels.push(cols[7].to_string());
            }
            _ => {
                b.error = Some(RecordError {
                    line: lineno,
                    id: b.id.clone(),
                    field: "heads",
                    message: format!("bad ID/HEAD columns `{}`/`{}`", cols[0], cols[6]),
                });
            }
        }
    }
    flush(block.take(), &mut out, &mut errors);
    if fail_fast {
        errors.truncate(1);
    }
    (out, errors)
}

pub fn write_conllu(examples: &[NewsExample]) -> String {
    let mut s = String::new();
    for ex in examples {
        s.push_str(&format!("# sent_id = {}\n# label = {}\n", ex.id, ex.label));
        if let Some(k) = &ex.keywords {
            s.push_str(&format!("# keywords = {}\n", k.join(" ")));
        }
        let heads = ex.parse.signed_heads();
        for (i, form) in ex.tokens.iter().enumerate() {
            let rel = ex.parse.deprels().map_or("_", |d| d[i].as_str());
            s.push_str(&format!("{}\t{}\t_\t_\t_\t_\t{}\t{}\t_\t_\n", i + 1, form, heads[i] + 1, rel));
        }
        s.push('\n');
    }
    s
}
