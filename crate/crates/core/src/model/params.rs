use rand::Rng;

use super::{Ablation, Hyperparams, Result};
use crate::layers::{fill_uniform, GruParams, GruVars, GRU_TENSOR_NAMES};
use crate::tensor::{Real, Tape, Tensor, Var};

/// Title encoder plus the matching and merging layers. Absent in the
/// `NoTitle` ablation.
#[derive(Debug, Clone, PartialEq)]
pub struct TitleGuidance<T> {
    pub title_fwd: GruParams<T>,
    pub title_bwd: GruParams<T>,
    /// Bilinear form scoring context states against title states, `[d, d]`.
    pub matching: Tensor<T>,
    /// Merging bi-GRU over `[u_i; c_i]`, input width `2d`.
    pub merge_fwd: GruParams<T>,
    pub merge_bwd: GruParams<T>,
}

/// Soft switch between generating and copying. Absent in the `NoCopy` ablation.
#[derive(Debug, Clone, PartialEq)]
pub struct CopySwitch<T> {
    /// `[d, 1]`
    pub weight: Tensor<T>,
    /// `[1, 1]`
    pub bias: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub ablation: Ablation,
    pub lambda: f64,
    /// Shared by context, title and decoder inputs, `[|V|, d_e]`.
    pub embedding: Tensor<T>,
    pub context_fwd: GruParams<T>,
    pub context_bwd: GruParams<T>,
    pub title: Option<TitleGuidance<T>>,
    /// Decoder GRU over `[e_{t-1}; h~_{t-1}]`, hidden width `d`.
    pub decoder: GruParams<T>,
    /// Decoder attention bilinear form, `[d, d]`.
    pub decoder_attention: Tensor<T>,
    /// Maps `[c^_t; h_t]` to the attentional vector, `[2d, d]`.
    pub attentional: Tensor<T>,
    /// `[d, |V|]`
    pub output_weight: Tensor<T>,
    /// `[1, |V|]`
    pub output_bias: Tensor<T>,
    pub copy: Option<CopySwitch<T>>,
}

/// Samples a fresh model. Matrices and non-recurrent biases are uniform in
/// `[-init_range, init_range]`; GRU gate biases start at zero.
pub fn build_model<T: Real, R: Rng>(
    hp: &Hyperparams,
    ablation: Ablation,
    rng: &mut R,
) -> Result<ModelParams<T>> {
    hp.validate()?;
    let (de, d, v, range) = (hp.emb_dim, hp.hidden_dim, hp.vocab_size, hp.init_range);
    let half = d / 2;
    let uniform = |shape: &[usize], rng: &mut R| {
        let mut t = Tensor::zeros(shape);
        fill_uniform(&mut t, range, rng);
        t
    };

    let embedding = uniform(&[v, de], rng);
    let context_fwd = GruParams::uniform(de, half, range, rng);
    let context_bwd = GruParams::uniform(de, half, range, rng);
    let title = if ablation.has_title() {
        Some(TitleGuidance {
            title_fwd: GruParams::uniform(de, half, range, rng),
            title_bwd: GruParams::uniform(de, half, range, rng),
            matching: uniform(&[d, d], rng),
            merge_fwd: GruParams::uniform(2 * d, half, range, rng),
            merge_bwd: GruParams::uniform(2 * d, half, range, rng),
        })
    } else {
        None
    };
    let decoder = GruParams::uniform(de + d, d, range, rng);
    let decoder_attention = uniform(&[d, d], rng);
    let attentional = uniform(&[2 * d, d], rng);
    let output_weight = uniform(&[d, v], rng);
    let output_bias = uniform(&[1, v], rng);
    let copy = if ablation.has_copy() {
        Some(CopySwitch {
            weight: uniform(&[d, 1], rng),
            bias: uniform(&[1, 1], rng),
        })
    } else {
        None
    };

    Ok(ModelParams {
        ablation,
        lambda: hp.lambda,
        embedding,
        context_fwd,
        context_bwd,
        title,
        decoder,
        decoder_attention,
        attentional,
        output_weight,
        output_bias,
        copy,
    })
}

fn push_gru<'a, T>(out: &mut Vec<(String, &'a Tensor<T>)>, prefix: &str, g: &'a GruParams<T>)
where
    T: Real,
{
    for (name, t) in GRU_TENSOR_NAMES.iter().zip(g.tensors()) {
        out.push((format!("{prefix}.{name}"), t));
    }
}

impl<T: Real> ModelParams<T> {
    pub fn emb_dim(&self) -> usize {
        self.embedding.shape()[1]
    }

    pub fn hidden_dim(&self) -> usize {
        self.decoder.hidden_width()
    }

    pub fn vocab_size(&self) -> usize {
        self.embedding.shape()[0]
    }

    /// Every parameter tensor with a stable dotted name, in a fixed order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = vec![("embedding".to_string(), &self.embedding)];
        push_gru(&mut out, "context_fwd", &self.context_fwd);
        push_gru(&mut out, "context_bwd", &self.context_bwd);
        if let Some(t) = &self.title {
            push_gru(&mut out, "title_fwd", &t.title_fwd);
            push_gru(&mut out, "title_bwd", &t.title_bwd);
            out.push(("matching".to_string(), &t.matching));
            push_gru(&mut out, "merge_fwd", &t.merge_fwd);
            push_gru(&mut out, "merge_bwd", &t.merge_bwd);
        }
        push_gru(&mut out, "decoder", &self.decoder);
        out.push(("decoder_attention".to_string(), &self.decoder_attention));
        out.push(("attentional".to_string(), &self.attentional));
        out.push(("output_weight".to_string(), &self.output_weight));
        out.push(("output_bias".to_string(), &self.output_bias));
        if let Some(c) = &self.copy {
            out.push(("copy_weight".to_string(), &c.weight));
            out.push(("copy_bias".to_string(), &c.bias));
        }
        out
    }

    /// Mutable view in the same order as [`Self::named_tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out: Vec<&mut Tensor<T>> = vec![&mut self.embedding];
        out.extend(self.context_fwd.tensors_mut());
        out.extend(self.context_bwd.tensors_mut());
        if let Some(t) = &mut self.title {
            out.extend(t.title_fwd.tensors_mut());
            out.extend(t.title_bwd.tensors_mut());
            out.push(&mut t.matching);
            out.extend(t.merge_fwd.tensors_mut());
            out.extend(t.merge_bwd.tensors_mut());
        }
        out.extend(self.decoder.tensors_mut());
        out.push(&mut self.decoder_attention);
        out.push(&mut self.attentional);
        out.push(&mut self.output_weight);
        out.push(&mut self.output_bias);
        if let Some(c) = &mut self.copy {
            out.push(&mut c.weight);
            out.push(&mut c.bias);
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            ablation: self.ablation,
            lambda: self.lambda,
            embedding: self.embedding.cast(),
            context_fwd: self.context_fwd.cast(),
            context_bwd: self.context_bwd.cast(),
            title: self.title.as_ref().map(|t| TitleGuidance {
                title_fwd: t.title_fwd.cast(),
                title_bwd: t.title_bwd.cast(),
                matching: t.matching.cast(),
                merge_fwd: t.merge_fwd.cast(),
                merge_bwd: t.merge_bwd.cast(),
            }),
            decoder: self.decoder.cast(),
            decoder_attention: self.decoder_attention.cast(),
            attentional: self.attentional.cast(),
            output_weight: self.output_weight.cast(),
            output_bias: self.output_bias.cast(),
            copy: self.copy.as_ref().map(|c| CopySwitch {
                weight: c.weight.cast(),
                bias: c.bias.cast(),
            }),
        }
    }

    /// Places every parameter on `tape`, tracked for gradients when `track`.
    pub fn bind<'p>(&'p self, tape: &mut Tape<'p, T>, track: bool) -> ModelVars {
        let leaf = |tape: &mut Tape<'p, T>, t: &'p Tensor<T>| {
            if track {
                tape.param(t)
            } else {
                tape.constant_ref(t)
            }
        };
        let embedding = leaf(tape, &self.embedding);
        let context_fwd = self.context_fwd.bind(tape, track);
        let context_bwd = self.context_bwd.bind(tape, track);
        let title = self.title.as_ref().map(|t| {
            let title_fwd = t.title_fwd.bind(tape, track);
            let title_bwd = t.title_bwd.bind(tape, track);
            let matching = leaf(tape, &t.matching);
            let merge_fwd = t.merge_fwd.bind(tape, track);
            let merge_bwd = t.merge_bwd.bind(tape, track);
            TitleVars {
                title_fwd,
                title_bwd,
                matching,
                merge_fwd,
                merge_bwd,
            }
        });
        let decoder = self.decoder.bind(tape, track);
        let decoder_attention = leaf(tape, &self.decoder_attention);
        let attentional = leaf(tape, &self.attentional);
        let output_weight = leaf(tape, &self.output_weight);
        let output_bias = leaf(tape, &self.output_bias);
        let copy = self
            .copy
            .as_ref()
            .map(|c| (leaf(tape, &c.weight), leaf(tape, &c.bias)));
        ModelVars {
            ablation: self.ablation,
            lambda: self.lambda,
            vocab_size: self.vocab_size(),
            hidden_dim: self.hidden_dim(),
            embedding,
            context_fwd,
            context_bwd,
            title,
            decoder,
            decoder_attention,
            attentional,
            output_weight,
            output_bias,
            copy,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct TitleVars {
    pub title_fwd: GruVars,
    pub title_bwd: GruVars,
    pub matching: Var,
    pub merge_fwd: GruVars,
    pub merge_bwd: GruVars,
}

/// A [`ModelParams`] placed on a tape.
#[derive(Debug, Clone)]
pub struct ModelVars {
    pub ablation: Ablation,
    pub lambda: f64,
    pub vocab_size: usize,
    pub hidden_dim: usize,
    pub embedding: Var,
    pub context_fwd: GruVars,
    pub context_bwd: GruVars,
    pub(crate) title: Option<TitleVars>,
    pub decoder: GruVars,
    pub decoder_attention: Var,
    pub attentional: Var,
    pub output_weight: Var,
    pub output_bias: Var,
    /// `(weight, bias)` of the copy switch.
    pub copy: Option<(Var, Var)>,
}

impl ModelVars {
    /// All leaves in [`ModelParams::named_tensors`] order.
    pub fn vars(&self) -> Vec<Var> {
        let mut out = vec![self.embedding];
        out.extend(self.context_fwd.vars());
        out.extend(self.context_bwd.vars());
        if let Some(t) = &self.title {
            out.extend(t.title_fwd.vars());
            out.extend(t.title_bwd.vars());
            out.push(t.matching);
            out.extend(t.merge_fwd.vars());
            out.extend(t.merge_bwd.vars());
        }
        out.extend(self.decoder.vars());
        out.push(self.decoder_attention);
        out.push(self.attentional);
        out.push(self.output_weight);
        out.push(self.output_bias);
        if let Some((w, b)) = self.copy {
            out.push(w);
            out.push(b);
        }
        out
    }
}
