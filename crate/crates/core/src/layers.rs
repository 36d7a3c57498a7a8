//! GRU cells, bidirectional GRU runner, bilinear attention and dropout,
//! all expressed as tape operations.
//!
//! Row convention: vectors are `[1, n]` rows and batches are `[b, n]`
//! matrices, so a weight mapping width `in` to width `out` is stored as
//! `[in, out]` and applied as `x * W`.

use rand::{Rng, RngCore};
use thiserror::Error;

use crate::tensor::{Real, Tape, Tensor, TensorError, Var};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LayerError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("cannot encode an empty sequence")]
    EmptySequence,
    #[error("mask has {mask} entries for a sequence of length {len}")]
    MaskLength { mask: usize, len: usize },
    #[error("attention needs at least one unmasked key")]
    AllKeysMasked,
    #[error("dropout rate must lie in [0, 1), got {0}")]
    DropoutRate(f64),
    #[error("{what}: expected width {expected}, got {actual}")]
    Width {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
}

pub type Result<T, E = LayerError> = std::result::Result<T, E>;

/// Score added to masked attention positions before normalization.
pub const MASK_SCORE: f64 = -1e9;

/// Weights of one GRU cell: `z` update gate, `r` reset gate, `h` candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct GruParams<T> {
    pub w_z: Tensor<T>,
    pub u_z: Tensor<T>,
    pub b_z: Tensor<T>,
    pub w_r: Tensor<T>,
    pub u_r: Tensor<T>,
    pub b_r: Tensor<T>,
    pub w_h: Tensor<T>,
    pub u_h: Tensor<T>,
    pub b_h: Tensor<T>,
}

pub const GRU_TENSOR_NAMES: [&str; 9] = [
    "w_z", "u_z", "b_z", "w_r", "u_r", "b_r", "w_h", "u_h", "b_h",
];

impl<T: Real> GruParams<T> {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_z: Tensor::zeros(&[input, hidden]),
            u_z: Tensor::zeros(&[hidden, hidden]),
            b_z: Tensor::zeros(&[1, hidden]),
            w_r: Tensor::zeros(&[input, hidden]),
            u_r: Tensor::zeros(&[hidden, hidden]),
            b_r: Tensor::zeros(&[1, hidden]),
            w_h: Tensor::zeros(&[input, hidden]),
            u_h: Tensor::zeros(&[hidden, hidden]),
            b_h: Tensor::zeros(&[1, hidden]),
        }
    }

    /// Matrices uniform in `[-range, range]`, biases zero.
    pub fn uniform<R: Rng>(input: usize, hidden: usize, range: f64, rng: &mut R) -> Self {
        let mut p = Self::zeros(input, hidden);
        for m in [
            &mut p.w_z, &mut p.u_z, &mut p.w_r, &mut p.u_r, &mut p.w_h, &mut p.u_h,
        ] {
            fill_uniform(m, range, rng);
        }
        p
    }

    pub fn input_width(&self) -> usize {
        self.w_z.shape()[0]
    }

    pub fn hidden_width(&self) -> usize {
        self.u_z.shape()[0]
    }

    pub fn tensors(&self) -> [&Tensor<T>; 9] {
        [
            &self.w_z, &self.u_z, &self.b_z, &self.w_r, &self.u_r, &self.b_r, &self.w_h, &self.u_h,
            &self.b_h,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor<T>; 9] {
        [
            &mut self.w_z,
            &mut self.u_z,
            &mut self.b_z,
            &mut self.w_r,
            &mut self.u_r,
            &mut self.b_r,
            &mut self.w_h,
            &mut self.u_h,
            &mut self.b_h,
        ]
    }

    pub fn cast<U: Real>(&self) -> GruParams<U> {
        GruParams {
            w_z: self.w_z.cast(),
            u_z: self.u_z.cast(),
            b_z: self.b_z.cast(),
            w_r: self.w_r.cast(),
            u_r: self.u_r.cast(),
            b_r: self.b_r.cast(),
            w_h: self.w_h.cast(),
            u_h: self.u_h.cast(),
            b_h: self.b_h.cast(),
        }
    }

    pub fn bind<'p>(&'p self, tape: &mut Tape<'p, T>, track: bool) -> GruVars {
        let mut bind = |t: &'p Tensor<T>| {
            if track {
                tape.param(t)
            } else {
                tape.constant_ref(t)
            }
        };
        GruVars {
            w_z: bind(&self.w_z),
            u_z: bind(&self.u_z),
            b_z: bind(&self.b_z),
            w_r: bind(&self.w_r),
            u_r: bind(&self.u_r),
            b_r: bind(&self.b_r),
            w_h: bind(&self.w_h),
            u_h: bind(&self.u_h),
            b_h: bind(&self.b_h),
            input: self.input_width(),
            hidden: self.hidden_width(),
        }
    }
}

/// A [`GruParams`] placed on a tape.
#[derive(Debug, Clone, Copy)]
pub struct GruVars {
    pub w_z: Var,
    pub u_z: Var,
    pub b_z: Var,
    pub w_r: Var,
    pub u_r: Var,
    pub b_r: Var,
    pub w_h: Var,
    pub u_h: Var,
    pub b_h: Var,
    pub input: usize,
    pub hidden: usize,
}

impl GruVars {
    pub fn vars(&self) -> [Var; 9] {
        [
            self.w_z, self.u_z, self.b_z, self.w_r, self.u_r, self.b_r, self.w_h, self.u_h,
            self.b_h,
        ]
    }
}

pub(crate) fn fill_uniform<T: Real, R: Rng>(t: &mut Tensor<T>, range: f64, rng: &mut R) {
    for v in t.data_mut() {
        *v = T::lit(rng.gen_range(-range..=range));
    }
}

/// Input-side gate pre-activations `x*W + b` for each of z, r, h.
struct Projected {
    z: Var,
    r: Var,
    h: Var,
}

fn project<T: Real>(tape: &mut Tape<'_, T>, g: &GruVars, x: Var) -> Result<Projected> {
    let mut proj = |w: Var, b: Var| -> Result<Var> {
        let xw = tape.matmul(x, w)?;
        Ok(tape.add(xw, b)?)
    };
    Ok(Projected {
        z: proj(g.w_z, g.b_z)?,
        r: proj(g.w_r, g.b_r)?,
        h: proj(g.w_h, g.b_h)?,
    })
}

fn recur<T: Real>(tape: &mut Tape<'_, T>, g: &GruVars, p: Projected, h_prev: Var) -> Result<Var> {
    let hz = tape.matmul(h_prev, g.u_z)?;
    let z_in = tape.add(p.z, hz)?;
    let z = tape.sigmoid(z_in)?;
    let hr = tape.matmul(h_prev, g.u_r)?;
    let r_in = tape.add(p.r, hr)?;
    let r = tape.sigmoid(r_in)?;
    let rh = tape.mul(r, h_prev)?;
    let hh = tape.matmul(rh, g.u_h)?;
    let cand_in = tape.add(p.h, hh)?;
    let cand = tape.tanh(cand_in)?;
    // h' = (1 - z) * h + z * cand = h + z * (cand - h)
    let delta = tape.sub(cand, h_prev)?;
    let step = tape.mul(z, delta)?;
    Ok(tape.add(h_prev, step)?)
}

fn check_width<T: Real>(
    tape: &Tape<'_, T>,
    v: Var,
    what: &'static str,
    expected: usize,
) -> Result<()> {
    let actual = tape.value(v).cols();
    if actual != expected {
        return Err(LayerError::Width {
            what,
            expected,
            actual,
        });
    }
    Ok(())
}

/// One GRU step on a batch of rows: `x` is `[b, input]`, `h_prev` is `[b, hidden]`.
///
/// `z = sig(xW_z + hU_z + b_z)`, `r = sig(xW_r + hU_r + b_r)`,
/// `c = tanh(xW_h + (r*h)U_h + b_h)`, `h' = (1 - z)*h + z*c`.
pub fn gru_cell_step<T: Real>(
    tape: &mut Tape<'_, T>,
    g: &GruVars,
    x: Var,
    h_prev: Var,
) -> Result<Var> {
    check_width(tape, x, "gru input", g.input)?;
    check_width(tape, h_prev, "gru state", g.hidden)?;
    let p = project(tape, g, x)?;
    recur(tape, g, p, h_prev)
}

/// Output of [`bigru_encode`].
#[derive(Debug, Clone, Copy)]
pub struct BiGruOutput {
    /// `[len, 2*hidden]`, forward half first.
    pub states: Var,
    /// Forward state after the last unmasked position.
    pub last_forward: Var,
    /// Backward state at position 0.
    pub first_backward: Var,
}

/// Runs `fwd` left to right and `bwd` right to left over the rows of
/// `inputs` (`[len, input]`), starting both from zero. Positions whose mask
/// entry is `false` pass the running state through unchanged.
pub fn bigru_encode<T: Real>(
    tape: &mut Tape<'_, T>,
    fwd: &GruVars,
    bwd: &GruVars,
    inputs: Var,
    mask: &[bool],
) -> Result<BiGruOutput> {
    let shape = tape.value(inputs).shape().to_vec();
    if shape.len() != 2 {
        return Err(TensorError::Invalid {
            op: "bigru_encode",
            reason: format!("inputs must be [len, width], got {shape:?}"),
        }
        .into());
    }
    let len = shape[0];
    if len == 0 {
        return Err(LayerError::EmptySequence);
    }
    if mask.len() != len {
        return Err(LayerError::MaskLength {
            mask: mask.len(),
            len,
        });
    }
    check_width(tape, inputs, "bigru input", fwd.input)?;
    check_width(tape, inputs, "bigru input", bwd.input)?;

    let forward = run_direction(tape, fwd, inputs, mask, false)?;
    let backward = run_direction(tape, bwd, inputs, mask, true)?;
    let last_forward = *forward.last().unwrap();
    let first_backward = backward[0];
    let f = tape.concat(&forward, 0)?;
    let b = tape.concat(&backward, 0)?;
    let states = tape.concat(&[f, b], 1)?;
    Ok(BiGruOutput {
        states,
        last_forward,
        first_backward,
    })
}

/// Per-position states of one direction, in sequence order.
fn run_direction<T: Real>(
    tape: &mut Tape<'_, T>,
    g: &GruVars,
    inputs: Var,
    mask: &[bool],
    reverse: bool,
) -> Result<Vec<Var>> {
    let len = mask.len();
    let all = project(tape, g, inputs)?;
    let mut h = tape.constant(Tensor::zeros(&[1, g.hidden]));
    let mut states = vec![h; len];
    let order: Vec<usize> = if reverse {
        (0..len).rev().collect()
    } else {
        (0..len).collect()
    };
    for i in order {
        if mask[i] {
            let p = Projected {
                z: tape.slice(all.z, 0, i, i + 1)?,
                r: tape.slice(all.r, 0, i, i + 1)?,
                h: tape.slice(all.h, 0, i, i + 1)?,
            };
            h = recur(tape, g, p, h)?;
        }
        states[i] = h;
    }
    Ok(states)
}

/// Bilinear attention of `query` rows (`[q, d]`) over `keys` (`[n, d]`):
/// `s_j = query W key_j`, weights are the masked softmax of `s`, and the
/// context is the weighted sum of keys. Returns `(context [q, d], weights [q, n])`.
pub fn bilinear_attention<T: Real>(
    tape: &mut Tape<'_, T>,
    query: Var,
    keys: Var,
    w: Var,
    mask: &[bool],
) -> Result<(Var, Var)> {
    let n = tape.value(keys).shape()[0];
    if mask.len() != n {
        return Err(LayerError::MaskLength {
            mask: mask.len(),
            len: n,
        });
    }
    if !mask.iter().any(|&m| m) {
        return Err(LayerError::AllKeysMasked);
    }
    let projected = tape.matmul(query, w)?;
    let mut scores = tape.matmul_nt(projected, keys)?;
    if mask.iter().any(|&m| !m) {
        let bias: Vec<T> = mask
            .iter()
            .map(|&m| if m { T::zero() } else { T::lit(MASK_SCORE) })
            .collect();
        let bias = tape.constant(Tensor::row(bias));
        scores = tape.add(scores, bias)?;
    }
    let weights = tape.softmax(scores)?;
    let context = tape.matmul(weights, keys)?;
    Ok((context, weights))
}

/// Inverted dropout: in training mode each entry is zeroed with probability
/// `rate` and survivors are scaled by `1 / (1 - rate)`; otherwise identity.
pub fn dropout<T: Real, R: Rng + ?Sized>(
    tape: &mut Tape<'_, T>,
    x: Var,
    rate: f64,
    training: bool,
    rng: &mut R,
) -> Result<Var> {
    if !(0.0..1.0).contains(&rate) {
        return Err(LayerError::DropoutRate(rate));
    }
    if !training || rate == 0.0 {
        return Ok(x);
    }
    let keep = T::lit(1.0 / (1.0 - rate));
    let shape = tape.value(x).shape().to_vec();
    let n: usize = shape.iter().product();
    let mask: Vec<T> = (0..n)
        .map(|_| {
            if rng.gen::<f64>() < rate {
                T::zero()
            } else {
                keep
            }
        })
        .collect();
    let mask = tape.constant(Tensor::new(shape, mask)?);
    Ok(tape.mul(x, mask)?)
}

/// Dropout settings threaded through a forward pass. Training mode when an
/// RNG is present.
pub struct DropoutCtx<'a> {
    rate: f64,
    rng: Option<&'a mut dyn RngCore>,
}

impl<'a> DropoutCtx<'a> {
    pub fn inference() -> Self {
        Self {
            rate: 0.0,
            rng: None,
        }
    }

    pub fn training(rate: f64, rng: &'a mut dyn RngCore) -> Self {
        Self {
            rate,
            rng: Some(rng),
        }
    }

    pub fn is_training(&self) -> bool {
        self.rng.is_some()
    }

    pub fn apply<T: Real>(&mut self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        match self.rng.as_deref_mut() {
            Some(rng) => dropout(tape, x, self.rate, true, rng),
            None => Ok(x),
        }
    }
}
