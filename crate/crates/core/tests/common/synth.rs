//! Synthetic corpora built from letter-only pseudo-words, so that no token
//! is touched by digit folding.

use std::ops::RangeInclusive;

use rand::seq::SliceRandom;
use rand::Rng;

use tgnet::data::{build_vocab, encode_document, Document, EncodedDocument, Vocabulary};

const CONSONANTS: &[u8] = b"bcdfghjklmnprstvz";
const VOWELS: &[u8] = b"aiou";

/// The `i`-th two-syllable pseudo-word; distinct for `i < 68 * 68`.
pub fn word(i: usize) -> String {
    let syl = |k: usize| {
        let c = CONSONANTS[k / VOWELS.len() % CONSONANTS.len()] as char;
        let v = VOWELS[k % VOWELS.len()] as char;
        format!("{c}{v}")
    };
    let n = CONSONANTS.len() * VOWELS.len();
    format!("{}{}", syl(i / n), syl(i % n))
}

fn words<R: Rng>(pool: usize, n: usize, rng: &mut R) -> Vec<String> {
    (0..n).map(|_| word(rng.gen_range(0..pool))).collect()
}

/// Documents with `phrases` keyphrases, all present: one span of the title
/// and the rest spans of the abstract, with lengths drawn from `lens`.
pub fn present_corpus<R: Rng>(
    n_docs: usize,
    pool: usize,
    phrases: usize,
    lens: RangeInclusive<usize>,
    rng: &mut R,
) -> Vec<Document> {
    (0..n_docs)
        .map(|_| {
            let title = words(pool, rng.gen_range(4..=6), rng);
            let r#abstract = words(pool, rng.gen_range(18..=26), rng);
            let mut keyphrases: Vec<Vec<String>> = Vec::new();
            let len = rng.gen_range(lens.clone()).min(title.len());
            let start = rng.gen_range(0..=title.len() - len);
            keyphrases.push(title[start..start + len].to_vec());
            while keyphrases.len() < phrases {
                let len = rng.gen_range(lens.clone());
                let start = rng.gen_range(0..=r#abstract.len() - len);
                let p = r#abstract[start..start + len].to_vec();
                if !keyphrases.contains(&p) {
                    keyphrases.push(p);
                }
            }
            Document {
                title,
                r#abstract,
                keyphrases,
            }
        })
        .collect()
}

/// Documents whose every keyphrase is a bigram of the title; the abstract
/// repeats some title words among random filler.
pub fn title_bigram_corpus<R: Rng>(n_docs: usize, pool: usize, rng: &mut R) -> Vec<Document> {
    (0..n_docs)
        .map(|_| {
            let title = words(pool, 6, rng);
            let mut r#abstract = words(pool, 20, rng);
            for w in title.iter().step_by(2) {
                let at = rng.gen_range(0..r#abstract.len());
                r#abstract.insert(at, w.clone());
            }
            let mut starts: Vec<usize> = (0..title.len() - 1).collect();
            starts.shuffle(rng);
            let keyphrases = starts[..2]
                .iter()
                .map(|&s| title[s..s + 2].to_vec())
                .collect();
            Document {
                title,
                r#abstract,
                keyphrases,
            }
        })
        .collect()
}

pub fn encode_all(docs: &[Document], vocab: &Vocabulary) -> Vec<EncodedDocument> {
    docs.iter()
        .map(|d| encode_document(d, vocab, 400))
        .collect()
}

pub fn vocab_and_encode(docs: &[Document], cap: usize) -> (Vocabulary, Vec<EncodedDocument>) {
    let vocab = build_vocab(docs, cap).unwrap();
    let enc = encode_all(docs, &vocab);
    (vocab, enc)
}
