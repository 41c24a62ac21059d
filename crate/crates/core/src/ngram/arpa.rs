//! ARPA back-off model files.
//!
//! ```text
//!
//! \data\
//! ngram 1=4
//! ngram 2=2
//!
//! \1-grams:
//! -0.30103<TAB>a<TAB>-0.1
//! ...
//!
//! \end\
//! ```
//!
//! Entries are written sorted by their token strings. Numbers use the
//! shortest representation that parses back to the identical `f64`.

use std::collections::BTreeSet;
use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::error::{Error, Result};

use super::{Key, NGramEntry, NGramModel, WordId};

#[derive(Debug, Error, PartialEq)]
#[error("line {line}: {kind}")]
pub struct ArpaError {
    pub line: usize,
    pub kind: ArpaErrorKind,
}

#[derive(Debug, Error, PartialEq)]
pub enum ArpaErrorKind {
    #[error("missing \\data\\ header")]
    MissingData,
    #[error("malformed count line {0:?}")]
    BadCountLine(String),
    #[error("unsupported order {0} (max 3)")]
    UnsupportedOrder(usize),
    #[error("section \\{0}-grams: was not declared or is out of order")]
    UnexpectedSection(usize),
    #[error("{order}-gram section declares {declared} entries but lists {found}")]
    CountMismatch {
        order: usize,
        declared: usize,
        found: usize,
    },
    #[error("expected {expected} words plus log-probability, got {found} fields")]
    FieldCount { expected: usize, found: usize },
    #[error("non-numeric field {0:?}")]
    NotANumber(String),
    #[error("word {0:?} has no unigram entry")]
    UnknownWord(String),
    #[error("duplicate n-gram")]
    Duplicate,
    #[error("missing \\end\\ marker")]
    MissingEnd,
    #[error("unexpected line {0:?}")]
    Unexpected(String),
}

fn err(line: usize, kind: ArpaErrorKind) -> ArpaError {
    ArpaError { line, kind }
}

struct Num(f64);

impl fmt::Display for Num {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0 == 0.0 {
            // no "-0"
            f.write_str("0")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

pub fn to_arpa_string(model: &NGramModel) -> String {
    let mut out = String::new();
    out.push_str("\n\\data\\\n");
    for n in 1..=model.order() {
        let _ = writeln!(out, "ngram {n}={}", model.count(n));
    }
    for n in 1..=model.order() {
        out.push_str(&section_string(model, n));
    }
    out.push_str("\n\\end\\\n");
    out
}

/// One `\N-grams:` section including its leading blank line.
pub fn section_string(model: &NGramModel, n: usize) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "\n\\{n}-grams:");
    for (words, e) in model.sorted_entries(n) {
        let _ = write!(out, "{}\t{}", Num(e.logprob), words.join(" "));
        if let Some(b) = e.backoff {
            let _ = write!(out, "\t{}", Num(b));
        }
        out.push('\n');
    }
    out
}

pub fn write_arpa(model: &NGramModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_arpa_string(model)).map_err(|e| Error::io(path, e))
}

pub fn read_arpa(path: impl AsRef<Path>) -> Result<NGramModel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_arpa(&text)?)
}

type RawEntry = (Vec<String>, NGramEntry);

pub fn parse_arpa(text: &str) -> std::result::Result<NGramModel, ArpaError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));

    // header
    let mut last = 0;
    loop {
        match lines.next() {
            Some((_, "\\data\\")) => break,
            // free text before the header is allowed, model content is not
            Some((n, l)) if l.starts_with("ngram ") || section_header(l).is_some() => {
                return Err(err(n, ArpaErrorKind::MissingData))
            }
            Some((n, _)) => last = n,
            None => return Err(err(last.max(1), ArpaErrorKind::MissingData)),
        }
    }
    let mut declared: Vec<usize> = Vec::new();
    let mut pending: Option<(usize, usize)> = None;
    for (n, line) in lines.by_ref() {
        last = n;
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("ngram ") {
            let (order, count) = rest
                .split_once('=')
                .and_then(|(o, c)| Some((o.trim().parse::<usize>().ok()?, c.trim().parse::<usize>().ok()?)))
                .ok_or_else(|| err(n, ArpaErrorKind::BadCountLine(line.into())))?;
            if order == 0 || order > 3 {
                return Err(err(n, ArpaErrorKind::UnsupportedOrder(order)));
            }
            if order != declared.len() + 1 {
                return Err(err(n, ArpaErrorKind::BadCountLine(line.into())));
            }
            declared.push(count);
            continue;
        }
        match section_header(line) {
            Some(order) => {
                pending = Some((order, n));
                break;
            }
            None => return Err(err(n, ArpaErrorKind::Unexpected(line.into()))),
        }
    }
    if declared.is_empty() {
        return Err(err(last, ArpaErrorKind::BadCountLine(String::new())));
    }

    let mut sections: Vec<Vec<(usize, RawEntry)>> = Vec::new();
    let mut ended = false;
    while let Some((order, header_line)) = pending.take() {
        if order != sections.len() + 1 || order > declared.len() {
            return Err(err(header_line, ArpaErrorKind::UnexpectedSection(order)));
        }
        let mut entries = Vec::with_capacity(declared[order - 1]);
        let mut end_line = header_line;
        for (n, line) in lines.by_ref() {
            end_line = n;
            if line.is_empty() {
                continue;
            }
            if line == "\\end\\" {
                ended = true;
                break;
            }
            if let Some(next) = section_header(line) {
                pending = Some((next, n));
                break;
            }
            entries.push((n, parse_entry(n, line, order)?));
        }
        if entries.len() != declared[order - 1] {
            return Err(err(
                end_line,
                ArpaErrorKind::CountMismatch {
                    order,
                    declared: declared[order - 1],
                    found: entries.len(),
                },
            ));
        }
        sections.push(entries);
        if ended {
            break;
        }
    }
    if !ended {
        return Err(err(last_line(text), ArpaErrorKind::MissingEnd));
    }
    if sections.len() != declared.len() {
        return Err(err(
            last_line(text),
            ArpaErrorKind::CountMismatch {
                order: sections.len() + 1,
                declared: declared[sections.len()],
                found: 0,
            },
        ));
    }

    let words: BTreeSet<&str> = sections[0].iter().map(|(_, (w, _))| w[0].as_str()).collect();
    let mut model = NGramModel::empty(declared.len(), words.into_iter().map(String::from).collect());
    for entries in &sections {
        for (n, (ws, entry)) in entries {
            let mut key = Key::new();
            for w in ws {
                let id: WordId = model
                    .word_id(w)
                    .ok_or_else(|| err(*n, ArpaErrorKind::UnknownWord(w.clone())))?;
                key.push(id);
            }
            if model.entry(&key).is_some() {
                return Err(err(*n, ArpaErrorKind::Duplicate));
            }
            model.insert(&key, *entry);
        }
    }
    Ok(model)
}

fn last_line(text: &str) -> usize {
    text.lines().count().max(1)
}

fn section_header(line: &str) -> Option<usize> {
    line.strip_prefix('\\')?.strip_suffix("-grams:")?.parse().ok()
}

fn parse_num(line: usize, field: &str) -> std::result::Result<f64, ArpaError> {
    field
        .parse::<f64>()
        .ok()
        .filter(|v| !v.is_nan())
        .ok_or_else(|| err(line, ArpaErrorKind::NotANumber(field.into())))
}

fn parse_entry(line_no: usize, line: &str, order: usize) -> std::result::Result<RawEntry, ArpaError> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != order + 1 && fields.len() != order + 2 {
        return Err(err(
            line_no,
            ArpaErrorKind::FieldCount {
                expected: order,
                found: fields.len(),
            },
        ));
    }
    let logprob = parse_num(line_no, fields[0])?;
    let backoff = match fields.get(order + 1) {
        Some(f) => Some(parse_num(line_no, f)?),
        None => None,
    };
    Ok((
        fields[1..=order].iter().map(|s| s.to_string()).collect(),
        NGramEntry { logprob, backoff },
    ))
}
