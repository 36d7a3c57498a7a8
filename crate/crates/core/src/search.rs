//! Beam-search inference and prediction post-processing.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{decode_ids, EncodedDocument, Vocabulary, BOS, EOS, SPECIALS, UNK};
use crate::layers::DropoutCtx;
use crate::model::{
    decode_step, encode_memory_bank, final_distribution, DecoderStep, MemoryBank, ModelError,
    ModelParams, Result,
};
use crate::tensor::{Real, Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamConfig {
    pub beam_size: usize,
    pub max_depth: usize,
    /// Rank completed hypotheses by log-probability per token instead of the
    /// total.
    pub length_normalize: bool,
}

impl Default for BeamConfig {
    fn default() -> Self {
        BeamConfig {
            beam_size: 200,
            max_depth: 6,
            length_normalize: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamHypothesis {
    /// Dynamic-vocabulary ids; ends in EOS iff `completed`.
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    /// Ranking score: `log_prob`, or its per-token mean under length
    /// normalization.
    pub score: f64,
    pub completed: bool,
}

struct Live<T> {
    tokens: Vec<usize>,
    log_prob: f64,
    state: Vec<T>,
    attentional: Vec<T>,
}

fn by_score_then_ids(a: &(f64, usize, usize), b: &(f64, usize, usize)) -> Ordering {
    b.0.partial_cmp(&a.0)
        .unwrap_or(Ordering::Equal)
        .then((a.1, a.2).cmp(&(b.1, b.2)))
}

/// Beam search over the final distribution. At every step the `beam_size`
/// best one-token extensions of all live hypotheses are kept; those ending
/// in EOS are set aside as completed. Completed hypotheses come first,
/// ranked by score, followed by the hypotheses still open at `max_depth`,
/// ranked by log-probability.
pub fn beam_search<T: Real>(
    params: &ModelParams<T>,
    bank: &MemoryBank<T>,
    context_ext_ids: &[usize],
    oov_count: usize,
    cfg: &BeamConfig,
) -> Result<Vec<BeamHypothesis>> {
    let d = params.hidden_dim();
    let mut live = vec![Live {
        tokens: Vec::new(),
        log_prob: 0.0,
        state: bank.init_state.data().to_vec(),
        attentional: vec![T::zero(); d],
    }];
    let mut completed: Vec<BeamHypothesis> = Vec::new();

    for _ in 0..cfg.max_depth {
        if live.is_empty() || cfg.beam_size == 0 {
            break;
        }
        let k = live.len();
        let mut tape = Tape::new();
        let vars = params.bind(&mut tape, false);
        let bank_var = tape.constant_ref(&bank.states);
        let state_rows: Vec<Vec<T>> = live.iter().map(|h| h.state.clone()).collect();
        let att_rows: Vec<Vec<T>> = live.iter().map(|h| h.attentional.clone()).collect();
        let prev = DecoderStep {
            state: tape.constant(Tensor::stack_rows(&state_rows)?),
            attentional: tape.constant(Tensor::stack_rows(&att_rows)?),
        };
        let prev_tokens: Vec<usize> = live
            .iter()
            .map(|h| h.tokens.last().copied().unwrap_or(BOS))
            .collect();
        let out = decode_step(
            &mut tape,
            &vars,
            prev,
            &prev_tokens,
            bank_var,
            &bank.mask,
            &mut DropoutCtx::inference(),
        )?;
        let logits = tape.value(out.logits);
        let weights = tape.value(out.weights);
        let states = tape.value(out.next.state);
        let atts = tape.value(out.next.attentional);

        let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
        for r in 0..k {
            let dist = final_distribution(
                logits.row_slice(r),
                weights.row_slice(r),
                atts.row_slice(r),
                params.copy.as_ref(),
                context_ext_ids,
                oov_count,
            )?;
            for (y, p) in dist.iter().enumerate() {
                let p = p.to_f64().unwrap_or(0.0);
                if p > 0.0 {
                    candidates.push((live[r].log_prob + p.ln(), r, y));
                }
            }
        }
        if candidates.len() > cfg.beam_size {
            candidates.select_nth_unstable_by(cfg.beam_size - 1, by_score_then_ids);
            candidates.truncate(cfg.beam_size);
        }
        candidates.sort_by(by_score_then_ids);

        let mut next = Vec::new();
        for (log_prob, r, y) in candidates {
            let mut tokens = live[r].tokens.clone();
            tokens.push(y);
            if y == EOS {
                let score = if cfg.length_normalize {
                    log_prob / tokens.len() as f64
                } else {
                    log_prob
                };
                completed.push(BeamHypothesis {
                    tokens,
                    log_prob,
                    score,
                    completed: true,
                });
            } else {
                next.push(Live {
                    tokens,
                    log_prob,
                    state: states.row_slice(r).to_vec(),
                    attentional: atts.row_slice(r).to_vec(),
                });
            }
        }
        live = next;
    }

    completed.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap_or(Ordering::Equal));
    let mut open: Vec<BeamHypothesis> = live
        .into_iter()
        .map(|h| BeamHypothesis {
            tokens: h.tokens,
            log_prob: h.log_prob,
            score: h.log_prob,
            completed: false,
        })
        .collect();
    open.sort_by(|a, b| {
        b.log_prob
            .partial_cmp(&a.log_prob)
            .unwrap_or(Ordering::Equal)
    });
    completed.extend(open);
    Ok(completed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPhrase {
    pub tokens: Vec<String>,
    pub score: f64,
}

/// Ranked keyphrases for one document, best first.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Prediction {
    pub phrases: Vec<ScoredPhrase>,
}

impl Prediction {
    /// Words of each hypothesis in rank order, EOS dropped.
    pub fn from_hypotheses(hyps: &[BeamHypothesis], vocab: &Vocabulary, oovs: &[String]) -> Self {
        Prediction {
            phrases: hyps
                .iter()
                .map(|h| {
                    let ids = if h.completed {
                        &h.tokens[..h.tokens.len() - 1]
                    } else {
                        &h.tokens[..]
                    };
                    ScoredPhrase {
                        tokens: decode_ids(ids, vocab, oovs),
                        score: h.score,
                    }
                })
                .collect(),
        }
    }

    pub fn token_lists(&self) -> Vec<Vec<String>> {
        self.phrases.iter().map(|p| p.tokens.clone()).collect()
    }

    /// Phrases joined by `;`, tokens by spaces.
    pub fn to_line(&self) -> String {
        self.phrases
            .iter()
            .map(|p| p.tokens.join(" "))
            .collect::<Vec<_>>()
            .join(";")
    }
}

/// Parses a predictions-file line back into token lists.
pub fn parse_prediction_line(line: &str) -> Vec<Vec<String>> {
    line.split(';')
        .map(|p| p.split_whitespace().map(String::from).collect::<Vec<_>>())
        .filter(|p| !p.is_empty())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PostMode {
    /// Keep every single-word phrase.
    #[default]
    TrainDomain,
    /// Keep only the first single-word phrase.
    Transfer,
}

impl std::str::FromStr for PostMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train-domain" => Ok(PostMode::TrainDomain),
            "transfer" => Ok(PostMode::Transfer),
            other => Err(format!(
                "unknown post-processing mode {other:?} (train-domain | transfer)"
            )),
        }
    }
}

impl std::fmt::Display for PostMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PostMode::TrainDomain => "train-domain",
            PostMode::Transfer => "transfer",
        })
    }
}

/// Removes empty phrases, phrases holding UNK or another non-word special,
/// and repeats of an earlier phrase; in transfer mode also every
/// single-word phrase after the first.
pub fn postprocess(pred: &Prediction, mode: PostMode) -> Prediction {
    let banned = [SPECIALS[UNK], SPECIALS[0], SPECIALS[BOS], SPECIALS[EOS]];
    let mut kept: Vec<ScoredPhrase> = Vec::new();
    let mut seen_single = false;
    for p in &pred.phrases {
        if p.tokens.is_empty() || p.tokens.iter().any(|t| banned.contains(&t.as_str())) {
            continue;
        }
        if kept.iter().any(|k| k.tokens == p.tokens) {
            continue;
        }
        if p.tokens.len() == 1 {
            if mode == PostMode::Transfer && seen_single {
                continue;
            }
            seen_single = true;
        }
        kept.push(p.clone());
    }
    Prediction { phrases: kept }
}

/// Beam search plus post-processing for every document, one task per
/// document.
pub fn predict_documents<T: Real>(
    params: &ModelParams<T>,
    docs: &[EncodedDocument],
    vocab: &Vocabulary,
    cfg: &BeamConfig,
    mode: PostMode,
) -> Result<Vec<Prediction>> {
    if vocab.len() != params.vocab_size() {
        return Err(ModelError::Width {
            what: "vocabulary",
            expected: params.vocab_size(),
            actual: vocab.len(),
        });
    }
    docs.par_iter()
        .map(|doc| {
            let bank = encode_memory_bank(params, &doc.context_ids, doc.title_len)?;
            let hyps = beam_search(params, &bank, &doc.context_ext_ids, doc.oovs.len(), cfg)?;
            Ok(postprocess(
                &Prediction::from_hypotheses(&hyps, vocab, &doc.oovs),
                mode,
            ))
        })
        .collect()
}
