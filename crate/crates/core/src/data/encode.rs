use serde::{Deserialize, Serialize};

use super::{Document, Vocabulary, EOS, UNK};

/// A document in id form. Extended ids at or beyond `|V|` name entries of
/// `oovs`, the document's out-of-vocabulary context words in first-occurrence
/// order. Raw tokens are kept for evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedDocument {
    /// Fixed-vocabulary ids of the (possibly truncated) context, OOV as UNK.
    pub context_ids: Vec<usize>,
    pub context_ext_ids: Vec<usize>,
    pub title_len: usize,
    pub oovs: Vec<String>,
    /// One EOS-terminated dynamic-vocabulary sequence per keyphrase.
    pub targets: Vec<Vec<usize>>,
    /// The full normalized context, before truncation.
    pub context_tokens: Vec<String>,
    pub keyphrases: Vec<Vec<String>>,
}

impl EncodedDocument {
    pub fn context_len(&self) -> usize {
        self.context_ids.len()
    }

    pub fn title_tokens(&self) -> &[String] {
        &self.context_tokens[..self.title_len]
    }
}

/// One context/title/keyphrase training example.
#[derive(Debug, Clone, PartialEq)]
pub struct Triplet {
    pub context_ids: Vec<usize>,
    pub title_ids: Vec<usize>,
    /// Dynamic-vocabulary ids ending in EOS.
    pub target_ids: Vec<usize>,
    pub context_ext_ids: Vec<usize>,
    pub oovs: Vec<String>,
}

/// Encodes `doc`. The context is cut to `max_context_len` tokens at the
/// tail, but never inside the title. Target words map to their vocabulary
/// id, else to their extended id if they occur in the kept context, else UNK.
pub fn encode_document(
    doc: &Document,
    vocab: &Vocabulary,
    max_context_len: usize,
) -> EncodedDocument {
    let context_tokens = doc.context();
    let title_len = doc.title.len();
    let keep = context_tokens.len().min(max_context_len.max(title_len));
    let v = vocab.len();

    let mut oovs: Vec<String> = Vec::new();
    let mut context_ext_ids = Vec::with_capacity(keep);
    for w in &context_tokens[..keep] {
        let id = match vocab.get(w) {
            Some(id) => id,
            None => match oovs.iter().position(|o| o == w) {
                Some(k) => v + k,
                None => {
                    oovs.push(w.clone());
                    v + oovs.len() - 1
                }
            },
        };
        context_ext_ids.push(id);
    }
    let context_ids = context_ext_ids
        .iter()
        .map(|&id| if id < v { id } else { UNK })
        .collect();

    let targets = doc
        .keyphrases
        .iter()
        .map(|k| {
            let mut ids: Vec<usize> = k
                .iter()
                .map(|w| {
                    vocab
                        .get(w)
                        .or_else(|| oovs.iter().position(|o| o == w).map(|p| v + p))
                        .unwrap_or(UNK)
                })
                .collect();
            ids.push(EOS);
            ids
        })
        .collect();

    EncodedDocument {
        context_ids,
        context_ext_ids,
        title_len,
        oovs,
        targets,
        context_tokens,
        keyphrases: doc.keyphrases.clone(),
    }
}

/// One [`Triplet`] per keyphrase of `doc`.
pub fn encode_triplets(doc: &Document, vocab: &Vocabulary, max_context_len: usize) -> Vec<Triplet> {
    let enc = encode_document(doc, vocab, max_context_len);
    enc.targets
        .iter()
        .map(|t| Triplet {
            context_ids: enc.context_ids.clone(),
            title_ids: enc.context_ids[..enc.title_len].to_vec(),
            target_ids: t.clone(),
            context_ext_ids: enc.context_ext_ids.clone(),
            oovs: enc.oovs.clone(),
        })
        .collect()
}

/// Maps dynamic-vocabulary ids back to words. Ids beyond the OOV list
/// decode to `<unk>`.
pub fn decode_ids(ids: &[usize], vocab: &Vocabulary, oovs: &[String]) -> Vec<String> {
    let v = vocab.len();
    ids.iter()
        .map(|&id| {
            if id < v {
                vocab.word(id).unwrap().to_string()
            } else {
                oovs.get(id - v)
                    .cloned()
                    .unwrap_or_else(|| vocab.word(UNK).unwrap().to_string())
            }
        })
        .collect()
}
