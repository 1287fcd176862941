use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::LanguageTag;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalExample {
    pub text: String,
    pub gold_label: String,
    pub lang: LanguageTag,
}

#[derive(Deserialize)]
struct Row {
    text: String,
    label: String,
    lang: String,
}

/// Parses a tab-separated file with header `text, label, lang`. Rows are
/// numbered by file line, so the first data row is row 2. An empty input
/// yields no examples.
pub fn parse_eval_set<L: AsRef<str>>(text: &str, labels: &[L]) -> Result<Vec<EvalExample>> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .quoting(false)
        .from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    for col in ["text", "label", "lang"] {
        if !headers.iter().any(|h| h == col) {
            return Err(Error::SchemaViolation {
                line: 1,
                message: format!("missing column {col}"),
            });
        }
    }
    let mut out = Vec::new();
    for (i, rec) in reader.deserialize::<Row>().enumerate() {
        let row = i + 2;
        let r = rec.map_err(|e| Error::SchemaViolation {
            line: row,
            message: e.to_string(),
        })?;
        if !labels.iter().any(|l| l.as_ref() == r.label) {
            return Err(Error::UnknownLabel { label: r.label, row });
        }
        let lang = r.lang.parse().map_err(|_| Error::SchemaViolation {
            line: row,
            message: format!("invalid language tag {:?}", r.lang),
        })?;
        out.push(EvalExample {
            text: r.text,
            gold_label: r.label,
            lang,
        });
    }
    Ok(out)
}

pub fn load_eval_set<L: AsRef<str>>(path: impl AsRef<Path>, labels: &[L]) -> Result<Vec<EvalExample>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let text = String::from_utf8(bytes).map_err(|_| Error::InvalidEncoding { path: path.into() })?;
    parse_eval_set(&text, labels)
}

pub fn eval_set_to_tsv(examples: &[EvalExample]) -> String {
    let mut out = String::from("text\tlabel\tlang\n");
    for e in examples {
        out.push_str(&format!("{}\t{}\t{}\n", e.text, e.gold_label, e.lang));
    }
    out
}
