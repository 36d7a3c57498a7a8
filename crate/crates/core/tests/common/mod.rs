//! Plain-`f64` reference implementations used as independent oracles. They
//! share no code with the tape: every formula is written out with loops.
#![allow(dead_code)]

use tgnet::layers::GruParams;
use tgnet::model::ModelParams;
use tgnet::tensor::Tensor;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `x W` for `W` stored `[in, out]` row-major.
pub fn vec_mat(x: &[f64], w: &Tensor<f64>) -> Vec<f64> {
    let (rows, cols) = (w.shape()[0], w.shape()[1]);
    assert_eq!(x.len(), rows);
    (0..cols)
        .map(|j| (0..rows).map(|i| x[i] * w.data()[i * cols + j]).sum())
        .collect()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn gru(g: &GruParams<f64>, x: &[f64], h: &[f64]) -> Vec<f64> {
    let gate =
        |w, u, b: &Tensor<f64>, h: &[f64]| add(&add(&vec_mat(x, w), &vec_mat(h, u)), b.data());
    let z: Vec<f64> = gate(&g.w_z, &g.u_z, &g.b_z, h)
        .into_iter()
        .map(sigmoid)
        .collect();
    let r: Vec<f64> = gate(&g.w_r, &g.u_r, &g.b_r, h)
        .into_iter()
        .map(sigmoid)
        .collect();
    let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
    let cand: Vec<f64> = gate(&g.w_h, &g.u_h, &g.b_h, &rh)
        .into_iter()
        .map(f64::tanh)
        .collect();
    (0..h.len())
        .map(|k| (1.0 - z[k]) * h[k] + z[k] * cand[k])
        .collect()
}

pub struct BiGru {
    pub states: Vec<Vec<f64>>,
    pub last_forward: Vec<f64>,
    pub first_backward: Vec<f64>,
}

pub fn bigru(fwd: &GruParams<f64>, bwd: &GruParams<f64>, xs: &[Vec<f64>]) -> BiGru {
    let hf = fwd.hidden_width();
    let hb = bwd.hidden_width();
    let mut f = Vec::new();
    let mut h = vec![0.0; hf];
    for x in xs {
        h = gru(fwd, x, &h);
        f.push(h.clone());
    }
    let mut b = vec![Vec::new(); xs.len()];
    let mut h = vec![0.0; hb];
    for (i, x) in xs.iter().enumerate().rev() {
        h = gru(bwd, x, &h);
        b[i] = h.clone();
    }
    BiGru {
        states: f
            .iter()
            .zip(&b)
            .map(|(a, c)| [a.clone(), c.clone()].concat())
            .collect(),
        last_forward: f.last().unwrap().clone(),
        first_backward: b[0].clone(),
    }
}

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

/// `(context, weights)` of one query against all keys.
pub fn attention(q: &[f64], keys: &[Vec<f64>], w: &Tensor<f64>) -> (Vec<f64>, Vec<f64>) {
    let qw = vec_mat(q, w);
    let scores: Vec<f64> = keys
        .iter()
        .map(|k| qw.iter().zip(k).map(|(a, b)| a * b).sum())
        .collect();
    let a = softmax(&scores);
    let mut ctx = vec![0.0; keys[0].len()];
    for (k, &wt) in keys.iter().zip(&a) {
        for (c, v) in ctx.iter_mut().zip(k) {
            *c += wt * v;
        }
    }
    (ctx, a)
}

pub fn embed(p: &ModelParams<f64>, ids: &[usize]) -> Vec<Vec<f64>> {
    let v = p.vocab_size();
    ids.iter()
        .map(|&id| {
            p.embedding
                .row_slice(if id < v { id } else { tgnet::data::UNK })
                .to_vec()
        })
        .collect()
}

/// `(memory bank rows, decoder initial state)`.
pub fn encode(
    p: &ModelParams<f64>,
    context: &[usize],
    title_len: usize,
) -> (Vec<Vec<f64>>, Vec<f64>) {
    let x = embed(p, context);
    let u = bigru(&p.context_fwd, &p.context_bwd, &x);
    let Some(t) = &p.title else {
        return (u.states, [u.last_forward, u.first_backward].concat());
    };
    let tv = bigru(&t.title_fwd, &t.title_bwd, &x[..title_len]);
    let merge_in: Vec<Vec<f64>> = u
        .states
        .iter()
        .map(|ui| [ui.clone(), attention(ui, &tv.states, &t.matching).0].concat())
        .collect();
    let m = bigru(&t.merge_fwd, &t.merge_bwd, &merge_in);
    let lambda = p.lambda;
    let bank = u
        .states
        .iter()
        .zip(&m.states)
        .map(|(a, b)| {
            a.iter()
                .zip(b)
                .map(|(x, y)| lambda * x + (1.0 - lambda) * y)
                .collect()
        })
        .collect();
    (bank, [m.last_forward, m.first_backward].concat())
}

pub struct Step {
    pub state: Vec<f64>,
    pub attentional: Vec<f64>,
    pub weights: Vec<f64>,
    pub logits: Vec<f64>,
}

pub fn decode(
    p: &ModelParams<f64>,
    state: &[f64],
    attentional: &[f64],
    prev: usize,
    bank: &[Vec<f64>],
) -> Step {
    let e = embed(p, &[prev]).remove(0);
    let h = gru(&p.decoder, &[e, attentional.to_vec()].concat(), state);
    let (ctx, weights) = attention(&h, bank, &p.decoder_attention);
    let att: Vec<f64> = vec_mat(&[ctx, h.clone()].concat(), &p.attentional)
        .into_iter()
        .map(f64::tanh)
        .collect();
    let logits = add(&vec_mat(&att, &p.output_weight), p.output_bias.data());
    Step {
        state: h,
        attentional: att,
        weights,
        logits,
    }
}

/// Final distribution over `|V| + oov` from a decoded step.
pub fn distribution(p: &ModelParams<f64>, step: &Step, ext_ids: &[usize], oov: usize) -> Vec<f64> {
    let pv = softmax(&step.logits);
    let g = match &p.copy {
        Some(c) => sigmoid(vec_mat(&step.attentional, &c.weight)[0] + c.bias.item()),
        None => 0.0,
    };
    let mut out = vec![0.0; pv.len() + oov];
    for (o, x) in out.iter_mut().zip(&pv) {
        *o = (1.0 - g) * x;
    }
    for (&id, &a) in ext_ids.iter().zip(&step.weights) {
        out[id] += g * a;
    }
    out
}

pub fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Log-probability of emitting `tokens` in order, starting from BOS.
pub fn sequence_log_prob(
    p: &ModelParams<f64>,
    context: &[usize],
    title_len: usize,
    ext_ids: &[usize],
    oov: usize,
    tokens: &[usize],
) -> f64 {
    let (bank, init) = encode(p, context, title_len);
    let mut state = init;
    let mut att = vec![0.0; p.hidden_dim()];
    let mut prev = tgnet::data::BOS;
    let mut total = 0.0;
    for &y in tokens {
        let step = decode(p, &state, &att, prev, &bank);
        total += distribution(p, &step, ext_ids, oov)[y].ln();
        state = step.state;
        att = step.attentional;
        prev = y;
    }
    total
}

/// Every sequence of at most `depth` tokens over `0..size` that either ends
/// at its first EOS or has exactly `depth` non-EOS tokens.
pub fn enumerate_sequences(size: usize, depth: usize) -> Vec<Vec<usize>> {
    let eos = tgnet::data::EOS;
    let mut out = Vec::new();
    let mut frontier = vec![Vec::new()];
    for _ in 0..depth {
        let mut next = Vec::new();
        for s in &frontier {
            for y in 0..size {
                let mut t: Vec<usize> = s.clone();
                t.push(y);
                if y == eos {
                    out.push(t);
                } else {
                    next.push(t);
                }
            }
        }
        frontier = next;
    }
    out.extend(frontier);
    out
}

pub mod synth;
