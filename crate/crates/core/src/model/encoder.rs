use super::params::ModelVars;
use super::{ModelError, ModelParams, Result};
use crate::data::UNK;
use crate::layers::{bigru_encode, bilinear_attention, DropoutCtx};
use crate::tensor::{Real, Tape, Tensor, Var};

/// Encoder result on the tape.
#[derive(Debug, Clone, Copy)]
pub struct EncoderOutput {
    /// Title-guided context states, `[len, d]`.
    pub bank: Var,
    /// Decoder initial state `[m->_{last}; m<-_1]`, `[1, d]`.
    pub init_state: Var,
}

/// Encoder result as plain values, read-only once built.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBank<T> {
    pub states: Tensor<T>,
    pub init_state: Tensor<T>,
    pub mask: Vec<bool>,
}

impl<T: Real> MemoryBank<T> {
    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }
}

fn embed<T: Real>(tape: &mut Tape<'_, T>, vars: &ModelVars, ids: &[usize]) -> Result<Var> {
    let ids: Vec<usize> = ids
        .iter()
        .map(|&id| if id < vars.vocab_size { id } else { UNK })
        .collect();
    Ok(tape.gather(vars.embedding, &ids)?)
}

/// Title-guided encoding of one context.
///
/// `context_ids` may carry a padded tail (`context_mask[i] == false`);
/// `title_ids` must equal the leading `title_ids.len()` context ids.
/// Ids at or beyond the vocabulary size are embedded as UNK.
pub fn encode_context<T: Real>(
    tape: &mut Tape<'_, T>,
    vars: &ModelVars,
    context_ids: &[usize],
    context_mask: &[bool],
    title_ids: &[usize],
    dropout: &mut DropoutCtx<'_>,
) -> Result<EncoderOutput> {
    if context_ids.is_empty() || !context_mask.first().copied().unwrap_or(false) {
        return Err(ModelError::EmptyContext);
    }
    if title_ids.is_empty() {
        return Err(ModelError::EmptyTitle);
    }
    if title_ids.len() > context_ids.len()
        || title_ids != &context_ids[..title_ids.len()]
        || !context_mask[..title_ids.len()].iter().all(|&m| m)
    {
        return Err(ModelError::TitleNotPrefix);
    }

    let x = embed(tape, vars, context_ids)?;
    let x = dropout.apply(tape, x)?;
    let ctx = bigru_encode(tape, &vars.context_fwd, &vars.context_bwd, x, context_mask)?;

    let Some(title) = vars.title else {
        let init_state = tape.concat(&[ctx.last_forward, ctx.first_backward], 1)?;
        return Ok(EncoderOutput {
            bank: ctx.states,
            init_state,
        });
    };

    let t = embed(tape, vars, title_ids)?;
    let t = dropout.apply(tape, t)?;
    let title_mask = vec![true; title_ids.len()];
    let v = bigru_encode(tape, &title.title_fwd, &title.title_bwd, t, &title_mask)?;
    let (c, _) = bilinear_attention(tape, ctx.states, v.states, title.matching, &title_mask)?;
    let merge_in = tape.concat(&[ctx.states, c], 1)?;
    let m = bigru_encode(
        tape,
        &title.merge_fwd,
        &title.merge_bwd,
        merge_in,
        context_mask,
    )?;

    let residual = tape.scale(ctx.states, T::lit(vars.lambda))?;
    let merged = tape.scale(m.states, T::lit(1.0 - vars.lambda))?;
    let bank = tape.add(residual, merged)?;
    let init_state = tape.concat(&[m.last_forward, m.first_backward], 1)?;
    Ok(EncoderOutput { bank, init_state })
}

/// Inference-mode encoding of an unpadded context into a [`MemoryBank`].
pub fn encode_memory_bank<T: Real>(
    params: &ModelParams<T>,
    context_ids: &[usize],
    title_len: usize,
) -> Result<MemoryBank<T>> {
    if title_len > context_ids.len() {
        return Err(ModelError::TitleNotPrefix);
    }
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape, false);
    let mask = vec![true; context_ids.len()];
    let out = encode_context(
        &mut tape,
        &vars,
        context_ids,
        &mask,
        &context_ids[..title_len],
        &mut DropoutCtx::inference(),
    )?;
    Ok(MemoryBank {
        states: tape.value(out.bank).clone(),
        init_state: tape.value(out.init_state).clone(),
        mask,
    })
}
