//! Adam, gradient clipping, plateau-driven learning-rate decay and the
//! training loop.

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{make_batches, BatchDoc, EncodedDocument};
use crate::layers::DropoutCtx;
use crate::model::{sequence_loss, Hyperparams, ModelError, ModelParams, SourceView};
use crate::tensor::{Real, Tape, Tensor};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{0} corpus is empty")]
    EmptyCorpus(&'static str),
    #[error("validation perplexity is {value} at step {step} (total nll {nll}, {tokens} tokens)")]
    NonFinitePerplexity {
        step: u64,
        value: f64,
        nll: f64,
        tokens: usize,
    },
    #[error("parameter {index}: gradient shape {grad:?} does not match {param:?}")]
    GradientShape {
        index: usize,
        grad: Vec<usize>,
        param: Vec<usize>,
    },
    #[error("invalid schedule: {0}")]
    Schedule(String),
    #[error("writing training log: {0}")]
    Log(#[from] std::io::Error),
}

pub type Result<T, E = TrainError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    /// First moments, one per parameter tensor.
    pub m: Vec<Tensor<T>>,
    /// Second moments.
    pub v: Vec<Tensor<T>>,
    /// Updates applied so far.
    pub step: u64,
    pub lr: f64,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(shapes: &[&[usize]], lr: f64) -> Self {
        let zeros: Vec<Tensor<T>> = shapes.iter().map(|s| Tensor::zeros(s)).collect();
        OptimizerState {
            m: zeros.clone(),
            v: zeros,
            step: 0,
            lr,
        }
    }

    pub fn for_model(params: &ModelParams<T>, lr: f64) -> Self {
        let named = params.named_tensors();
        let shapes: Vec<&[usize]> = named.iter().map(|(_, t)| t.shape()).collect();
        Self::new(&shapes, lr)
    }
}

fn all_finite<T: Real>(grads: &[Tensor<T>]) -> bool {
    grads.iter().all(Tensor::is_finite)
}

/// One bias-corrected Adam update at `opt.lr`. A gradient holding NaN or
/// infinity leaves parameters and state untouched and returns `false`.
pub fn adam_step<T: Real>(
    params: &mut [&mut Tensor<T>],
    grads: &[Tensor<T>],
    opt: &mut OptimizerState<T>,
    cfg: &AdamConfig,
) -> Result<bool> {
    for (index, ((p, g), m)) in params.iter().zip(grads).zip(&opt.m).enumerate() {
        if p.shape() != g.shape() || p.shape() != m.shape() {
            return Err(TrainError::GradientShape {
                index,
                grad: g.shape().to_vec(),
                param: p.shape().to_vec(),
            });
        }
    }
    if params.len() != grads.len() || params.len() != opt.m.len() {
        return Err(TrainError::GradientShape {
            index: params.len().min(grads.len()),
            grad: vec![grads.len()],
            param: vec![params.len()],
        });
    }
    if !all_finite(grads) {
        log::warn!(
            "non-finite gradient at step {}, batch skipped",
            opt.step + 1
        );
        return Ok(false);
    }
    opt.step += 1;
    let t = opt.step as i32;
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let c1 = T::one() - T::lit(cfg.beta1.powi(t));
    let c2 = T::one() - T::lit(cfg.beta2.powi(t));
    let (lr, eps) = (T::lit(opt.lr), T::lit(cfg.eps));
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut opt.m).zip(&mut opt.v) {
        let (p, m, v) = (p.data_mut(), m.data_mut(), v.data_mut());
        for i in 0..p.len() {
            let gi = g.data()[i];
            m[i] = b1 * m[i] + (T::one() - b1) * gi;
            v[i] = b2 * v[i] + (T::one() - b2) * gi * gi;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] = p[i] - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(true)
}

/// Global L2 norm over every gradient tensor.
pub fn global_norm<T: Real>(grads: &[Tensor<T>]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.data())
        .map(|x| {
            let x = x.to_f64().unwrap_or(f64::NAN);
            x * x
        })
        .sum::<f64>()
        .sqrt()
}

/// Rescales all gradients by `max_norm / norm` when their global norm exceeds
/// `max_norm`. Returns the norm before clipping.
pub fn clip_gradients<T: Real>(grads: &mut [Tensor<T>], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm.is_finite() && norm > max_norm {
        let s = T::lit(max_norm / norm);
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|x| *x = *x * s);
        }
    }
    norm
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSchedule {
    /// Batches between validations; `None` validates once per epoch.
    pub eval_every: Option<usize>,
    pub decay: f64,
    pub patience: usize,
    /// An evaluation counts as an improvement only if it beats the best
    /// perplexity by more than this.
    pub tolerance: f64,
    pub max_epochs: usize,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            eval_every: None,
            decay: 0.5,
            patience: 3,
            tolerance: 1e-4,
            max_epochs: 20,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(TrainError::Schedule(m.to_string()));
        if self.patience == 0 {
            return fail("patience must be at least 1");
        }
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return fail("decay must lie in (0, 1)");
        }
        if self.eval_every == Some(0) {
            return fail("eval_every must be positive");
        }
        if !(self.tolerance >= 0.0) {
            return fail("tolerance must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlateauEvent {
    Improved,
    /// No improvement; the learning rate should be multiplied by the decay.
    Decay,
    /// `patience` evaluations in a row without improvement.
    Stop,
}

/// Tracks validation perplexity across evaluations.
#[derive(Debug, Clone, PartialEq)]
pub struct Plateau {
    pub best: f64,
    pub stale: usize,
    patience: usize,
    tolerance: f64,
}

impl Plateau {
    pub fn new(schedule: &TrainSchedule) -> Self {
        Plateau {
            best: f64::INFINITY,
            stale: 0,
            patience: schedule.patience,
            tolerance: schedule.tolerance,
        }
    }

    pub fn observe(&mut self, perplexity: f64) -> PlateauEvent {
        if perplexity < self.best - self.tolerance {
            self.best = perplexity;
            self.stale = 0;
            return PlateauEvent::Improved;
        }
        self.stale += 1;
        if self.stale >= self.patience {
            PlateauEvent::Stop
        } else {
            PlateauEvent::Decay
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: u64,
    pub epoch: usize,
    /// Mean negative log-likelihood per triplet of the batch.
    pub loss: f64,
    /// Learning rate the batch was trained with.
    pub lr: f64,
    pub val_ppl: Option<f64>,
    /// Set when a non-finite gradient made the update be skipped.
    pub skipped: bool,
    pub grad_norm: f64,
    /// Target probabilities floored to avoid `log 0`.
    pub clamped: usize,
    /// Seconds since the loop started.
    pub wall_time: f64,
}

pub struct BatchGradients<T> {
    /// Gradients of the mean per-triplet loss, in `named_tensors` order.
    pub grads: Vec<Tensor<T>>,
    /// Mean per-triplet loss.
    pub loss: f64,
    pub tokens: usize,
    pub clamped: usize,
}

fn doc_view(d: &BatchDoc) -> SourceView<'_> {
    SourceView {
        context_ids: &d.context_ids,
        context_ext_ids: &d.context_ext_ids,
        mask: &d.mask,
        title_len: d.title_len,
    }
}

/// Loss and gradients of a batch. Each document is differentiated on its own
/// tape, in parallel, and the results are summed in document order, so the
/// result does not depend on the thread count. `dropout_seeds` gives one
/// seed per document; `None` disables dropout.
pub fn batch_gradients<T: Real>(
    params: &ModelParams<T>,
    docs: &[BatchDoc],
    dropout: f64,
    dropout_seeds: Option<&[u64]>,
) -> Result<BatchGradients<T>> {
    let triplets: usize = docs.iter().map(|d| d.targets.len()).sum();
    let scale = T::lit(1.0 / triplets.max(1) as f64);
    let per_doc: Vec<Result<(Vec<Tensor<T>>, f64, usize, usize), ModelError>> = docs
        .par_iter()
        .enumerate()
        .map(|(i, d)| {
            let mut tape = Tape::new();
            let vars = params.bind(&mut tape, true);
            let mut rng = dropout_seeds.map(|s| ChaCha8Rng::seed_from_u64(s[i]));
            let mut ctx = match rng.as_mut() {
                Some(r) => DropoutCtx::training(dropout, r),
                None => DropoutCtx::inference(),
            };
            let targets: Vec<&[usize]> = d.targets.iter().map(Vec::as_slice).collect();
            let out = sequence_loss(&mut tape, &vars, doc_view(d), &targets, &mut ctx)?;
            let loss = tape.value(out.loss).item().to_f64().unwrap_or(f64::NAN);
            let scaled = tape.scale(out.loss, scale)?;
            let mut g = tape.backward(scaled)?;
            let grads = vars
                .vars()
                .iter()
                .zip(params.named_tensors())
                .map(|(v, (_, p))| g.take(*v).unwrap_or_else(|| Tensor::zeros(p.shape())))
                .collect();
            Ok((grads, loss, out.tokens, out.clamped))
        })
        .collect();
    let mut total: Vec<Tensor<T>> = params
        .named_tensors()
        .iter()
        .map(|(_, p)| Tensor::zeros(p.shape()))
        .collect();
    let (mut loss, mut tokens, mut clamped) = (0.0, 0, 0);
    for r in per_doc {
        let (grads, l, n, c) = r?;
        for (acc, g) in total.iter_mut().zip(&grads) {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a = *a + *b;
            }
        }
        loss += l;
        tokens += n;
        clamped += c;
    }
    Ok(BatchGradients {
        grads: total,
        loss: loss / triplets.max(1) as f64,
        tokens,
        clamped,
    })
}

/// Total teacher-forced negative log-likelihood of every keyphrase of every
/// document, and the number of target tokens scored.
pub fn corpus_nll<T: Real>(
    params: &ModelParams<T>,
    docs: &[EncodedDocument],
) -> Result<(f64, usize)> {
    let per_doc: Vec<Result<(f64, usize), ModelError>> = docs
        .par_iter()
        .filter(|d| !d.targets.is_empty())
        .map(|d| {
            let mut tape = Tape::new();
            let vars = params.bind(&mut tape, false);
            let mask = vec![true; d.context_ids.len()];
            let view = SourceView {
                context_ids: &d.context_ids,
                context_ext_ids: &d.context_ext_ids,
                mask: &mask,
                title_len: d.title_len,
            };
            let targets: Vec<&[usize]> = d.targets.iter().map(Vec::as_slice).collect();
            let out = sequence_loss(
                &mut tape,
                &vars,
                view,
                &targets,
                &mut DropoutCtx::inference(),
            )?;
            Ok((
                tape.value(out.loss).item().to_f64().unwrap_or(f64::NAN),
                out.tokens,
            ))
        })
        .collect();
    let mut nll = 0.0;
    let mut tokens = 0;
    for r in per_doc {
        let (l, n) = r?;
        nll += l;
        tokens += n;
    }
    Ok((nll, tokens))
}

/// `exp(total nll / total tokens)`.
pub fn perplexity<T: Real>(params: &ModelParams<T>, docs: &[EncodedDocument]) -> Result<f64> {
    let (nll, tokens) = corpus_nll(params, docs)?;
    Ok((nll / tokens.max(1) as f64).exp())
}

pub struct TrainOutcome<T> {
    /// Parameters at the evaluation with the lowest validation perplexity.
    pub best: ModelParams<T>,
    pub best_perplexity: f64,
    /// Parameters and optimizer state after the last update.
    pub last: ModelParams<T>,
    pub optimizer: OptimizerState<T>,
    pub log: Vec<LogRecord>,
    pub epochs: usize,
    pub stopped_early: bool,
}

/// Trains until early stopping or `schedule.max_epochs`. Batches, their
/// order and every dropout mask come from `rng`, so a fixed seed reproduces
/// the run bit for bit. Each log record is also written as a JSON line to
/// `log_sink` when given.
pub fn train_loop<T: Real, R: Rng>(
    params: ModelParams<T>,
    optimizer: Option<OptimizerState<T>>,
    train: &[EncodedDocument],
    valid: &[EncodedDocument],
    hp: &Hyperparams,
    schedule: &TrainSchedule,
    rng: &mut R,
    mut log_sink: Option<&mut dyn Write>,
) -> Result<TrainOutcome<T>> {
    schedule.validate()?;
    hp.validate()?;
    if train.iter().all(|d| d.targets.is_empty()) {
        return Err(TrainError::EmptyCorpus("training"));
    }
    if valid.iter().all(|d| d.targets.is_empty()) {
        return Err(TrainError::EmptyCorpus("validation"));
    }
    let start = Instant::now();
    let adam = AdamConfig::default();
    let mut opt = optimizer.unwrap_or_else(|| OptimizerState::for_model(&params, hp.learning_rate));
    let mut params = params;
    let mut best = params.clone();
    let mut plateau = Plateau::new(schedule);
    let mut log = Vec::new();
    let mut batches_seen = 0usize;
    let mut epochs = 0;
    let mut stopped_early = false;

    'epochs: for epoch in 0..schedule.max_epochs {
        epochs = epoch + 1;
        let batches = make_batches(train, hp.batch_size, rng);
        let n_batches = batches.len();
        for (bi, batch) in batches.iter().enumerate() {
            let seeds: Vec<u64> = batch.docs.iter().map(|_| rng.gen()).collect();
            let mut bg = batch_gradients(&params, &batch.docs, hp.dropout, Some(&seeds))?;
            let grad_norm = clip_gradients(&mut bg.grads, hp.clip_norm);
            let lr = opt.lr;
            let applied = adam_step(&mut params.tensors_mut(), &bg.grads, &mut opt, &adam)?;
            if bg.clamped > 0 {
                log::debug!(
                    "{} target probabilities floored in batch {}",
                    bg.clamped,
                    batches_seen + 1
                );
            }
            batches_seen += 1;

            let due = match schedule.eval_every {
                Some(k) => batches_seen % k == 0,
                None => bi + 1 == n_batches,
            };
            let mut record = LogRecord {
                step: opt.step,
                epoch,
                loss: bg.loss,
                lr,
                val_ppl: None,
                skipped: !applied,
                grad_norm,
                clamped: bg.clamped,
                wall_time: 0.0,
            };
            let mut stop = false;
            if due {
                let (nll, tokens) = corpus_nll(&params, valid)?;
                let ppl = (nll / tokens.max(1) as f64).exp();
                if !ppl.is_finite() {
                    return Err(TrainError::NonFinitePerplexity {
                        step: opt.step,
                        value: ppl,
                        nll,
                        tokens,
                    });
                }
                record.val_ppl = Some(ppl);
                match plateau.observe(ppl) {
                    PlateauEvent::Improved => best = params.clone(),
                    PlateauEvent::Decay => {
                        opt.lr *= schedule.decay;
                        log::info!(
                            "validation perplexity {ppl:.4} did not improve; lr now {}",
                            opt.lr
                        );
                    }
                    PlateauEvent::Stop => {
                        log::info!(
                            "early stop after {} evaluations without improvement",
                            plateau.stale
                        );
                        stop = true;
                    }
                }
            }
            record.wall_time = start.elapsed().as_secs_f64();
            if let Some(w) = log_sink.as_deref_mut() {
                serde_json::to_writer(&mut *w, &record).map_err(std::io::Error::from)?;
                w.write_all(b"\n")?;
            }
            log.push(record);
            if stop {
                stopped_early = true;
                break 'epochs;
            }
        }
    }

    Ok(TrainOutcome {
        best,
        best_perplexity: plateau.best,
        last: params,
        optimizer: opt,
        log,
        epochs,
        stopped_early,
    })
}
