use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::split_present_absent;
use crate::data::{Document, DIGIT_TOKEN};

pub const BUCKET_COUNT: usize = 5;

/// Bumped whenever `stopwords.txt` changes.
pub const STOPWORDS_VERSION: u32 = 1;

const STOPWORDS: &str = include_str!("stopwords.txt");

/// The bundled English stopword list.
pub fn default_stopwords() -> HashSet<String> {
    STOPWORDS
        .lines()
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect()
}

/// Bucket 1 to 5 for title length ratio `title_len / context_len` over the
/// half-open ranges `[0,3%) [3,6%) [6,9%) [9,12%) [12%,inf)`. `None` for an
/// empty context. Exact integer arithmetic, so boundaries land in the upper
/// bucket.
pub fn bucket_by_title_ratio(title_len: usize, context_len: usize) -> Option<u8> {
    if context_len == 0 {
        return None;
    }
    let above = (1..BUCKET_COUNT)
        .filter(|&k| 100 * title_len >= 3 * k * context_len)
        .count();
    Some(above as u8 + 1)
}

fn is_content_word(w: &str, stopwords: &HashSet<String>) -> bool {
    w != DIGIT_TOKEN && w.chars().any(char::is_alphabetic) && !stopwords.contains(w)
}

/// True when `phrase` shares a non-stopword token with `title`.
pub fn is_title_related(phrase: &[String], title: &[String], stopwords: &HashSet<String>) -> bool {
    phrase
        .iter()
        .any(|w| is_content_word(w, stopwords) && title.contains(w))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SplitCount {
    pub total: usize,
    pub title_related: usize,
    /// `100 * title_related / total`, 0 when empty.
    pub percentage: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TitleRelatedStats {
    pub present: SplitCount,
    pub absent: SplitCount,
}

/// Counts present and absent target keyphrases and how many of each are
/// TitleRelated.
pub fn title_related_stats(corpus: &[Document], stopwords: &HashSet<String>) -> TitleRelatedStats {
    let mut stats = TitleRelatedStats::default();
    for doc in corpus {
        let (present, absent) = split_present_absent(&doc.keyphrases, &doc.context());
        for (count, phrases) in [(&mut stats.present, present), (&mut stats.absent, absent)] {
            count.total += phrases.len();
            count.title_related += phrases
                .iter()
                .filter(|p| is_title_related(p, &doc.title, stopwords))
                .count();
        }
    }
    for c in [&mut stats.present, &mut stats.absent] {
        c.percentage = if c.total == 0 {
            0.0
        } else {
            100.0 * c.title_related as f64 / c.total as f64
        };
    }
    stats
}
