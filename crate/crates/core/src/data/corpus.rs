use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{tokenize_and_normalize, DataError, Result};

/// A corpus line as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub title: String,
    #[serde(default)]
    pub r#abstract: String,
    pub keyphrases: Keyphrases,
}

/// Keyphrases as a JSON list or as one `;`-separated string.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Keyphrases {
    List(Vec<String>),
    Joined(String),
}

impl Keyphrases {
    pub fn into_list(self) -> Vec<String> {
        match self {
            Keyphrases::List(v) => v,
            Keyphrases::Joined(s) => s.split(';').map(str::to_string).collect(),
        }
    }
}

/// A normalized document. The context is the title followed by the abstract.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub title: Vec<String>,
    pub r#abstract: Vec<String>,
    pub keyphrases: Vec<Vec<String>>,
}

impl Document {
    /// Normalizes a raw record. Keyphrases that normalize to nothing are
    /// dropped with a warning.
    pub fn from_raw(raw: RawRecord) -> Result<Self> {
        let title = tokenize_and_normalize(&raw.title);
        if title.is_empty() {
            return Err(DataError::EmptyTitle);
        }
        let mut keyphrases = Vec::new();
        for k in raw.keyphrases.into_list() {
            let toks = tokenize_and_normalize(&k);
            if toks.is_empty() {
                if !k.trim().is_empty() {
                    log::warn!("dropping keyphrase {k:?}: empty after normalization");
                }
                continue;
            }
            keyphrases.push(toks);
        }
        Ok(Document {
            title,
            r#abstract: tokenize_and_normalize(&raw.r#abstract),
            keyphrases,
        })
    }

    pub fn context(&self) -> Vec<String> {
        let mut c = self.title.clone();
        c.extend(self.r#abstract.iter().cloned());
        c
    }

    pub fn context_len(&self) -> usize {
        self.title.len() + self.r#abstract.len()
    }
}

/// Parses one JSON line into a normalized document.
pub fn parse_line(line: &str) -> std::result::Result<Document, String> {
    let raw: RawRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
    Document::from_raw(raw).map_err(|e| e.to_string())
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub documents: Vec<Document>,
    /// `(line number, reason)` of every skipped line, 1-based.
    pub skipped: Vec<(usize, String)>,
}

/// Reads a JSON Lines corpus. Blank lines are ignored; malformed lines are
/// skipped with a warning and recorded.
pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let io = |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io)?);
    let mut corpus = Corpus::default();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_line(&line) {
            Ok(doc) => corpus.documents.push(doc),
            Err(reason) => {
                log::warn!(
                    "{}:{}: skipping malformed line: {reason}",
                    path.display(),
                    i + 1
                );
                corpus.skipped.push((i + 1, reason));
            }
        }
    }
    Ok(corpus)
}
