use super::params::{CopySwitch, ModelVars};
use super::{ModelError, Result};
use crate::data::UNK;
use crate::layers::{bilinear_attention, gru_cell_step, DropoutCtx};
use crate::tensor::{Real, Tape, Var};

/// Recurrent decoder state for a batch of `k` rows.
#[derive(Debug, Clone, Copy)]
pub struct DecoderStep {
    /// `h_t`, `[k, d]`
    pub state: Var,
    /// `h~_t`, `[k, d]`
    pub attentional: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct StepOutput {
    pub next: DecoderStep,
    /// Attention over the memory bank, `[k, len]`.
    pub weights: Var,
    /// Generation logits over the fixed vocabulary, `[k, |V|]`.
    pub logits: Var,
}

/// One decoder step for `k` rows sharing one memory bank.
///
/// `h_t = GRU([e_{t-1}; h~_{t-1}], h_{t-1})`, `c^_t = attn(h_t, bank)`,
/// `h~_t = tanh([c^_t; h_t] W)`, `logits = h~_t W_v + b_v`.
pub fn decode_step<T: Real>(
    tape: &mut Tape<'_, T>,
    vars: &ModelVars,
    prev: DecoderStep,
    prev_tokens: &[usize],
    bank: Var,
    bank_mask: &[bool],
    dropout: &mut DropoutCtx<'_>,
) -> Result<StepOutput> {
    let d = vars.hidden_dim;
    for (what, v) in [
        ("memory bank", bank),
        ("decoder state", prev.state),
        ("attentional state", prev.attentional),
    ] {
        let actual = tape.value(v).cols();
        if actual != d {
            return Err(ModelError::Width {
                what,
                expected: d,
                actual,
            });
        }
    }
    let rows = tape.value(prev.state).rows();
    if prev_tokens.len() != rows {
        return Err(ModelError::Width {
            what: "previous tokens",
            expected: rows,
            actual: prev_tokens.len(),
        });
    }

    let ids: Vec<usize> = prev_tokens
        .iter()
        .map(|&id| if id < vars.vocab_size { id } else { UNK })
        .collect();
    let e = tape.gather(vars.embedding, &ids)?;
    let e = dropout.apply(tape, e)?;
    let input = tape.concat(&[e, prev.attentional], 1)?;
    let state = gru_cell_step(tape, &vars.decoder, input, prev.state)?;
    let (context, weights) =
        bilinear_attention(tape, state, bank, vars.decoder_attention, bank_mask)?;
    let joined = tape.concat(&[context, state], 1)?;
    let projected = tape.matmul(joined, vars.attentional)?;
    let attentional = tape.tanh(projected)?;
    let attentional = dropout.apply(tape, attentional)?;
    let out = tape.matmul(attentional, vars.output_weight)?;
    let logits = tape.add(out, vars.output_bias)?;
    Ok(StepOutput {
        next: DecoderStep { state, attentional },
        weights,
        logits,
    })
}

/// Copy switch `g_t = sigmoid(h~_t w_g + b_g)`, `[k, 1]`; `None` without a
/// copy mechanism.
pub fn copy_switch<T: Real>(
    tape: &mut Tape<'_, T>,
    vars: &ModelVars,
    attentional: Var,
) -> Result<Option<Var>> {
    let Some((w, b)) = vars.copy else {
        return Ok(None);
    };
    let logit = tape.matmul(attentional, w)?;
    let logit = tape.add(logit, b)?;
    Ok(Some(tape.sigmoid(logit)?))
}

/// `P(y) = (1 - g) P_v(y) + g * sum_{i: x_i = y} a_i` over the dynamic
/// vocabulary of size `|V| + oov_count`. `P_v` is zero on OOV slots and the
/// copy share is zero for words absent from the context.
pub fn mix_distribution<T: Real>(
    p_vocab: &[T],
    weights: &[T],
    gate: T,
    context_ext_ids: &[usize],
    oov_count: usize,
) -> Result<Vec<T>> {
    let limit = p_vocab.len() + oov_count;
    if weights.len() != context_ext_ids.len() {
        return Err(ModelError::Width {
            what: "attention weights",
            expected: context_ext_ids.len(),
            actual: weights.len(),
        });
    }
    let mut out = vec![T::zero(); limit];
    let generate = T::one() - gate;
    for (o, &p) in out.iter_mut().zip(p_vocab) {
        *o = generate * p;
    }
    for (&id, &a) in context_ext_ids.iter().zip(weights) {
        if id >= limit {
            return Err(ModelError::ExtendedIdOutOfRange { id, limit });
        }
        out[id] = out[id] + gate * a;
    }
    Ok(out)
}

/// Final distribution from raw generation logits, attention weights and the
/// attentional vector `h~_t`. Without a copy switch the gate is zero.
pub fn final_distribution<T: Real>(
    gen_logits: &[T],
    weights: &[T],
    attentional: &[T],
    copy: Option<&CopySwitch<T>>,
    context_ext_ids: &[usize],
    oov_count: usize,
) -> Result<Vec<T>> {
    let max = gen_logits.iter().copied().fold(T::neg_infinity(), T::max);
    let mut p_vocab: Vec<T> = gen_logits.iter().map(|&l| (l - max).exp()).collect();
    let total: T = p_vocab.iter().copied().sum();
    for p in &mut p_vocab {
        *p = *p / total;
    }
    let gate = match copy {
        Some(c) => {
            if c.weight.len() != attentional.len() {
                return Err(ModelError::Width {
                    what: "copy switch",
                    expected: c.weight.len(),
                    actual: attentional.len(),
                });
            }
            let z = attentional
                .iter()
                .zip(c.weight.data())
                .map(|(&h, &w)| h * w)
                .sum::<T>()
                + c.bias.item();
            T::one() / (T::one() + (-z).exp())
        }
        None => T::zero(),
    };
    mix_distribution(&p_vocab, weights, gate, context_ext_ids, oov_count)
}
