use super::decoder::{copy_switch, decode_step, DecoderStep};
use super::encoder::encode_context;
use super::params::ModelVars;
use super::{ModelError, Result};
use crate::data::{BOS, EOS, UNK};
use crate::layers::DropoutCtx;
use crate::tensor::{Real, Tape, Tensor, Var};

/// Target probabilities at or below zero are lifted to this floor before
/// taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// One (possibly padded) source document.
#[derive(Debug, Clone, Copy)]
pub struct SourceView<'a> {
    pub context_ids: &'a [usize],
    /// Dynamic-vocabulary ids of the context, same length as `context_ids`.
    pub context_ext_ids: &'a [usize],
    pub mask: &'a [bool],
    pub title_len: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct LossOutput {
    /// Negative log-likelihood summed over every target of the document.
    pub loss: Var,
    /// Number of target tokens scored, EOS included.
    pub tokens: usize,
    /// Target probabilities that had to be floored.
    pub clamped: usize,
}

/// Teacher-forced negative log-likelihood of every target sequence of one
/// document, decoded as one batch of rows over a shared encoding.
///
/// Targets are dynamic-vocabulary ids ending in EOS. Without a copy
/// mechanism, ids outside the fixed vocabulary are scored as UNK.
pub fn sequence_loss<T: Real>(
    tape: &mut Tape<'_, T>,
    vars: &ModelVars,
    source: SourceView<'_>,
    targets: &[&[usize]],
    dropout: &mut DropoutCtx<'_>,
) -> Result<LossOutput> {
    if targets.is_empty() || targets.iter().any(|t| t.is_empty()) {
        return Err(ModelError::Width {
            what: "targets",
            expected: 1,
            actual: 0,
        });
    }
    let len = source.context_ids.len();
    if source.context_ext_ids.len() != len || source.mask.len() != len {
        return Err(ModelError::Width {
            what: "context ext ids / mask",
            expected: len,
            actual: source.context_ext_ids.len().min(source.mask.len()),
        });
    }
    let title_ids = &source.context_ids[..source.title_len.min(len)];
    let enc = encode_context(
        tape,
        vars,
        source.context_ids,
        source.mask,
        title_ids,
        dropout,
    )?;

    let v = vars.vocab_size;
    let has_copy = vars.copy.is_some();
    let rows = targets.len();
    let steps = targets.iter().map(|t| t.len()).max().unwrap();
    let d = vars.hidden_dim;

    let init = tape.concat(&vec![enc.init_state; rows], 0)?;
    let mut prev = DecoderStep {
        state: init,
        attentional: tape.constant(Tensor::zeros(&[rows, d])),
    };
    let mut prev_tokens = vec![BOS; rows];
    let mut log_probs = Vec::with_capacity(steps);
    let mut step_mask = vec![T::zero(); rows * steps];
    let mut tokens = 0;
    let mut clamped = 0;

    for t in 0..steps {
        let out = decode_step(
            tape,
            vars,
            prev,
            &prev_tokens,
            enc.bank,
            source.mask,
            dropout,
        )?;
        let p_vocab = tape.softmax(out.logits)?;

        let mut gen_pick = vec![T::zero(); rows * v];
        let mut copy_pick = vec![T::zero(); rows * len];
        let mut live = vec![false; rows];
        for (r, target) in targets.iter().enumerate() {
            let (y, is_live) = match target.get(t) {
                Some(&y) => (y, true),
                None => (EOS, false),
            };
            live[r] = is_live;
            let y = if !has_copy && y >= v { UNK } else { y };
            if y < v {
                gen_pick[r * v + y] = T::one();
            }
            if has_copy {
                for i in 0..len {
                    if source.mask[i] && source.context_ext_ids[i] == y {
                        copy_pick[r * len + i] = T::one();
                    }
                }
            }
            if is_live {
                step_mask[r * steps + t] = T::one();
                tokens += 1;
            }
        }

        let gen_pick = tape.constant(Tensor::new(vec![rows, v], gen_pick)?);
        let picked = tape.mul(p_vocab, gen_pick)?;
        let p_gen = tape.sum_last(picked)?;
        let mut p = p_gen;
        if let Some(gate) = copy_switch(tape, vars, out.next.attentional)? {
            let copy_pick = tape.constant(Tensor::new(vec![rows, len], copy_pick)?);
            let picked = tape.mul(out.weights, copy_pick)?;
            let p_copy = tape.sum_last(picked)?;
            let diff = tape.sub(p_copy, p_gen)?;
            let shift = tape.mul(gate, diff)?;
            p = tape.add(p_gen, shift)?;
        }

        let floor = T::lit(PROB_FLOOR);
        let needs_floor: Vec<bool> = tape
            .value(p)
            .data()
            .iter()
            .map(|&x| x <= T::zero())
            .collect();
        if needs_floor.iter().any(|&f| f) {
            clamped += needs_floor
                .iter()
                .zip(&live)
                .filter(|(f, l)| **f && **l)
                .count();
            let lift: Vec<T> = needs_floor
                .iter()
                .zip(tape.value(p).data())
                .map(|(&f, &x)| if f { floor - x } else { T::zero() })
                .collect();
            let lift = tape.constant(Tensor::new(vec![rows, 1], lift)?);
            p = tape.add(p, lift)?;
        }
        log_probs.push(tape.log(p)?);

        prev = out.next;
        prev_tokens = targets
            .iter()
            .map(|tg| tg.get(t).copied().unwrap_or(EOS))
            .collect();
    }

    let all = tape.concat(&log_probs, 1)?;
    let mask = tape.constant(Tensor::new(vec![rows, steps], step_mask)?);
    let kept = tape.mul(all, mask)?;
    let total = tape.sum(kept)?;
    let loss = tape.scale(total, -T::one())?;
    Ok(LossOutput {
        loss,
        tokens,
        clamped,
    })
}

/// Reference form of the objective over precomputed step distributions:
/// `-sum_t log P(y_t)` over unmasked steps, averaged over sequences.
/// Returns the loss and the number of floored probabilities.
pub fn nll_loss<T: Real>(
    distributions: &[Vec<Vec<T>>],
    targets: &[Vec<usize>],
    masks: &[Vec<bool>],
) -> (f64, usize) {
    let mut total = 0.0;
    let mut clamped = 0;
    for ((dists, ys), mask) in distributions.iter().zip(targets).zip(masks) {
        for ((dist, &y), &m) in dists.iter().zip(ys).zip(mask) {
            if !m {
                continue;
            }
            let mut p = dist[y].to_f64().unwrap();
            if p <= 0.0 {
                p = PROB_FLOOR;
                clamped += 1;
            }
            total -= p.ln();
        }
    }
    let n = distributions.len().max(1) as f64;
    (total / n, clamped)
}
