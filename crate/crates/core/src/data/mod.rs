//! Corpus ingestion, normalization, vocabulary and id encoding.

mod batch;
mod corpus;
mod encode;
mod tokenize;
mod vocab;

pub use batch::{make_batches, Batch, BatchDoc};
pub use corpus::{load_corpus, parse_line, Corpus, Document, Keyphrases, RawRecord};
pub use encode::{decode_ids, encode_document, encode_triplets, EncodedDocument, Triplet};
pub use tokenize::tokenize_and_normalize;
pub use vocab::{build_vocab, Vocabulary};

use std::path::PathBuf;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;
pub const DIGIT: usize = 4;

/// Symbols of the reserved ids, in id order.
pub const SPECIALS: [&str; 5] = ["<pad>", "<unk>", "<bos>", "<eos>", "<digit>"];
pub const DIGIT_TOKEN: &str = "<digit>";

/// Default cap on context length, in tokens.
pub const MAX_CONTEXT_LEN: usize = 400;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    Format {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("document has an empty title")]
    EmptyTitle,
    #[error("document has no keyphrases left after normalization")]
    NoKeyphrases,
}

pub type Result<T> = std::result::Result<T, DataError>;
