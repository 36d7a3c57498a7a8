use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use super::{DataError, Document, Result, SPECIALS, UNK};

/// Word/id bijection. Ids `0..SPECIALS.len()` are the reserved symbols.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// A vocabulary of the specials followed by `words` in order. Duplicates
    /// and special symbols inside `words` are ignored.
    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v = Vocabulary {
            words: Vec::new(),
            index: HashMap::new(),
        };
        for w in SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(words.into_iter().map(Into::into))
        {
            if !v.index.contains_key(&w) {
                v.index.insert(w.clone(), v.words.len());
                v.words.push(w);
            }
        }
        v
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    /// Id of `word`, or UNK.
    pub fn id(&self, word: &str) -> usize {
        self.get(word).unwrap_or(UNK)
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// The non-special words, one per line; line `n` (0-based) holds id
    /// `n + SPECIALS.len()`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for w in &self.words[SPECIALS.len()..] {
            s.push_str(w);
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Self {
        Vocabulary::from_words(text.lines().filter(|l| !l.is_empty()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Vocabulary::from_text(&text))
    }
}

/// Counts words over every context and keyphrase and keeps the most frequent
/// ones, ties broken lexicographically, so that the whole vocabulary
/// (specials included) has at most `cap` entries.
pub fn build_vocab(corpus: &[Document], cap: usize) -> Result<Vocabulary> {
    if corpus.is_empty() {
        return Err(DataError::EmptyCorpus);
    }
    let counts = corpus
        .par_iter()
        .fold(HashMap::<&str, u64>::new, |mut acc, doc| {
            let words = doc
                .title
                .iter()
                .chain(&doc.r#abstract)
                .chain(doc.keyphrases.iter().flatten());
            for w in words {
                *acc.entry(w.as_str()).or_default() += 1;
            }
            acc
        })
        .reduce(HashMap::new, |mut a, b| {
            for (w, c) in b {
                *a.entry(w).or_default() += c;
            }
            a
        });
    let mut ranked: Vec<(&str, u64)> = counts
        .into_iter()
        .filter(|(w, _)| !SPECIALS.contains(w))
        .collect();
    ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(cap.saturating_sub(SPECIALS.len()));
    Ok(Vocabulary::from_words(ranked.into_iter().map(|(w, _)| w)))
}
