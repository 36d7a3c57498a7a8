use rand::seq::SliceRandom;
use rand::Rng;

use super::{EncodedDocument, PAD};

/// The keyphrases of one document that fall into a batch, with the context
/// padded to the batch width.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchDoc {
    /// Index into the document slice the batch was built from.
    pub doc: usize,
    pub context_ids: Vec<usize>,
    pub context_ext_ids: Vec<usize>,
    /// `false` on padding.
    pub mask: Vec<bool>,
    pub title_len: usize,
    pub oov_count: usize,
    pub targets: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub docs: Vec<BatchDoc>,
    /// Padded context width shared by every entry.
    pub width: usize,
}

impl Batch {
    pub fn triplet_count(&self) -> usize {
        self.docs.iter().map(|d| d.targets.len()).sum()
    }
}

/// Groups every (document, keyphrase) pair into batches of at most
/// `batch_size` triplets. Pairs are shuffled, bucketed by context length so
/// batches hold similar lengths, and the batch order is shuffled again.
/// Everything is determined by `rng`.
pub fn make_batches<R: Rng + ?Sized>(
    docs: &[EncodedDocument],
    batch_size: usize,
    rng: &mut R,
) -> Vec<Batch> {
    let batch_size = batch_size.max(1);
    let mut pairs: Vec<(usize, usize)> = docs
        .iter()
        .enumerate()
        .flat_map(|(d, doc)| (0..doc.targets.len()).map(move |k| (d, k)))
        .collect();
    pairs.shuffle(rng);
    pairs.sort_by_key(|&(d, _)| docs[d].context_len());

    let mut batches: Vec<Batch> = pairs
        .chunks(batch_size)
        .map(|chunk| assemble(docs, chunk))
        .collect();
    batches.shuffle(rng);
    batches
}

fn assemble(docs: &[EncodedDocument], chunk: &[(usize, usize)]) -> Batch {
    let width = chunk
        .iter()
        .map(|&(d, _)| docs[d].context_len())
        .max()
        .unwrap_or(0);
    let mut out: Vec<BatchDoc> = Vec::new();
    for &(d, k) in chunk {
        if let Some(entry) = out.iter_mut().find(|e| e.doc == d) {
            entry.targets.push(docs[d].targets[k].clone());
            continue;
        }
        let doc = &docs[d];
        let pad = width - doc.context_len();
        let padded = |ids: &[usize]| {
            ids.iter()
                .copied()
                .chain(std::iter::repeat(PAD).take(pad))
                .collect()
        };
        out.push(BatchDoc {
            doc: d,
            context_ids: padded(&doc.context_ids),
            context_ext_ids: padded(&doc.context_ext_ids),
            mask: (0..width).map(|i| i < doc.context_len()).collect(),
            title_len: doc.title_len,
            oov_count: doc.oovs.len(),
            targets: vec![doc.targets[k].clone()],
        });
    }
    Batch { docs: out, width }
}
