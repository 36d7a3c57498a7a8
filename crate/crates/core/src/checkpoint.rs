//! Binary checkpoint format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "TGN1"  u32 version
//! u32 len, hyperparameters as JSON
//! u8 ablation code
//! u32 count, then per word: u32 len, UTF-8 bytes      (vocabulary, specials first)
//! u32 count, then per tensor: u32 len, name, u32 rank, rank x u32 dims, f32 payload
//! u8 flag; if 1: u64 step, f64 lr, moment tensors (m then v, same encoding)
//! u8 flag; if 1: f64 best validation perplexity
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::data::{Vocabulary, SPECIALS};
use crate::model::{build_model, Ablation, Hyperparams, ModelParams};
use crate::tensor::Tensor;
use crate::train::OptimizerState;

pub const MAGIC: &[u8; 4] = b"TGN1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("not a checkpoint (bad magic bytes)")]
    BadMagic,
    #[error("unsupported checkpoint version {0} (this build reads version {FORMAT_VERSION})")]
    UnsupportedVersion(u32),
    #[error("checkpoint truncated while reading {0}")]
    Truncated(&'static str),
    #[error("{0} unexpected bytes after the end of the checkpoint")]
    TrailingBytes(usize),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint holds a {stored} model but {requested} was requested")]
    AblationMismatch {
        stored: Ablation,
        requested: Ablation,
    },
    #[error("hyperparameters disagree with the parameters: {0}")]
    Inconsistent(String),
}

pub type Result<T, E = CheckpointError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub hyperparams: Hyperparams,
    pub params: ModelParams<f32>,
    pub vocab: Vocabulary,
    pub optimizer: Option<OptimizerState<f32>>,
    pub best_perplexity: Option<f64>,
}

impl Checkpoint {
    pub fn ablation(&self) -> Ablation {
        self.params.ablation
    }

    /// Refuses to serve a model of another architecture than `requested`.
    pub fn require_ablation(&self, requested: Ablation) -> Result<()> {
        if self.ablation() != requested {
            return Err(CheckpointError::AblationMismatch {
                stored: self.ablation(),
                requested,
            });
        }
        Ok(())
    }

    fn check(&self) -> Result<()> {
        let hp = &self.hyperparams;
        let p = &self.params;
        let bad = |m: String| Err(CheckpointError::Inconsistent(m));
        if hp.vocab_size != p.vocab_size() || hp.vocab_size != self.vocab.len() {
            return bad(format!(
                "vocab_size {} vs embedding rows {} vs vocabulary {}",
                hp.vocab_size,
                p.vocab_size(),
                self.vocab.len()
            ));
        }
        if hp.emb_dim != p.emb_dim() || hp.hidden_dim != p.hidden_dim() {
            return bad(format!(
                "dims {}x{} vs {}x{}",
                hp.emb_dim,
                hp.hidden_dim,
                p.emb_dim(),
                p.hidden_dim()
            ));
        }
        if hp.lambda != p.lambda {
            return bad(format!("lambda {} vs {}", hp.lambda, p.lambda));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.check()?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, FORMAT_VERSION);
        let hp = serde_json::to_vec(&self.hyperparams)
            .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        put_bytes(&mut out, &hp);
        out.push(self.params.ablation.code());
        put_u32(&mut out, self.vocab.len() as u32);
        for w in self.vocab.words() {
            put_bytes(&mut out, w.as_bytes());
        }
        let named = self.params.named_tensors();
        put_u32(&mut out, named.len() as u32);
        for (name, t) in &named {
            put_tensor(&mut out, name, t);
        }
        match &self.optimizer {
            Some(opt) => {
                if opt.m.len() != named.len() || opt.v.len() != named.len() {
                    return Err(CheckpointError::Inconsistent("optimizer moments".into()));
                }
                out.push(1);
                out.extend_from_slice(&opt.step.to_le_bytes());
                out.extend_from_slice(&opt.lr.to_le_bytes());
                for (prefix, moments) in [("m", &opt.m), ("v", &opt.v)] {
                    for ((name, _), t) in named.iter().zip(moments) {
                        put_tensor(&mut out, &format!("{prefix}.{name}"), t);
                    }
                }
            }
            None => out.push(0),
        }
        match self.best_perplexity {
            Some(p) => {
                out.push(1);
                out.extend_from_slice(&p.to_le_bytes());
            }
            None => out.push(0),
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let hp_bytes = r.bytes("hyperparameters")?;
        let hyperparams: Hyperparams = serde_json::from_slice(hp_bytes)
            .map_err(|e| CheckpointError::Corrupt(format!("hyperparameters: {e}")))?;
        let code = r.u8("ablation")?;
        let ablation = Ablation::from_code(code)
            .ok_or_else(|| CheckpointError::Corrupt(format!("ablation code {code}")))?;

        let n_words = r.u32("vocabulary size")? as usize;
        let mut words = Vec::with_capacity(n_words.min(bytes.len()));
        for _ in 0..n_words {
            let w = r.bytes("vocabulary word")?;
            words.push(
                String::from_utf8(w.to_vec())
                    .map_err(|_| CheckpointError::Corrupt("word is not UTF-8".into()))?,
            );
        }
        if words.len() < SPECIALS.len() || words[..SPECIALS.len()] != SPECIALS {
            return Err(CheckpointError::Corrupt(
                "vocabulary does not start with the special symbols".into(),
            ));
        }
        let vocab = Vocabulary::from_words(words[SPECIALS.len()..].iter().cloned());
        if vocab.len() != words.len() {
            return Err(CheckpointError::Corrupt(
                "vocabulary has duplicate words".into(),
            ));
        }

        let mut params: ModelParams<f32> =
            build_model(&hyperparams, ablation, &mut ChaCha8Rng::seed_from_u64(0))
                .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        let names: Vec<(String, Vec<usize>)> = params
            .named_tensors()
            .iter()
            .map(|(n, t)| (n.clone(), t.shape().to_vec()))
            .collect();
        let count = r.u32("tensor count")? as usize;
        if count != names.len() {
            return Err(CheckpointError::Corrupt(format!(
                "{count} tensors stored, a {ablation} model has {}",
                names.len()
            )));
        }
        for ((name, shape), slot) in names.iter().zip(params.tensors_mut()) {
            *slot = r.tensor(name, shape)?;
        }

        let optimizer = match r.u8("optimizer flag")? {
            0 => None,
            1 => {
                let step = u64::from_le_bytes(r.array("optimizer step")?);
                let lr = f64::from_le_bytes(r.array("learning rate")?);
                let mut moments = [Vec::new(), Vec::new()];
                for (prefix, out) in ["m", "v"].iter().zip(moments.iter_mut()) {
                    for (name, shape) in &names {
                        out.push(r.tensor(&format!("{prefix}.{name}"), shape)?);
                    }
                }
                let [m, v] = moments;
                Some(OptimizerState { m, v, step, lr })
            }
            f => return Err(CheckpointError::Corrupt(format!("optimizer flag {f}"))),
        };
        let best_perplexity = match r.u8("perplexity flag")? {
            0 => None,
            1 => Some(f64::from_le_bytes(r.array("best perplexity")?)),
            f => return Err(CheckpointError::Corrupt(format!("perplexity flag {f}"))),
        };
        if r.pos != bytes.len() {
            return Err(CheckpointError::TrailingBytes(bytes.len() - r.pos));
        }
        let ckpt = Checkpoint {
            hyperparams,
            params,
            vocab,
            optimizer,
            best_perplexity,
        };
        ckpt.check()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        fs::write(path, bytes).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

fn put_u32(out: &mut Vec<u8>, x: u32) {
    out.extend_from_slice(&x.to_le_bytes());
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    put_u32(out, b.len() as u32);
    out.extend_from_slice(b);
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor<f32>) {
    put_bytes(out, name.as_bytes());
    put_u32(out, t.rank() as u32);
    for &d in t.shape() {
        put_u32(out, d as u32);
    }
    for x in t.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(CheckpointError::Truncated(what))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self, what: &'static str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().expect("length checked"))
    }

    fn u8(&mut self, what: &'static str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array(what)?))
    }

    fn bytes(&mut self, what: &'static str) -> Result<&'a [u8]> {
        let n = self.u32(what)? as usize;
        self.take(n, what)
    }

    fn tensor(&mut self, name: &str, shape: &[usize]) -> Result<Tensor<f32>> {
        let stored = self.bytes("tensor name")?;
        if stored != name.as_bytes() {
            return Err(CheckpointError::Corrupt(format!(
                "expected tensor {name}, found {}",
                String::from_utf8_lossy(stored)
            )));
        }
        let rank = self.u32("tensor rank")? as usize;
        let mut dims = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            dims.push(self.u32("tensor shape")? as usize);
        }
        if dims != shape {
            return Err(CheckpointError::Corrupt(format!(
                "{name}: shape {dims:?}, expected {shape:?}"
            )));
        }
        let n: usize = shape.iter().product();
        let payload = self.take(
            n.checked_mul(4)
                .ok_or(CheckpointError::Truncated("tensor data"))?,
            "tensor data",
        )?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
            .collect();
        Tensor::new(dims, data).map_err(|e| CheckpointError::Corrupt(e.to_string()))
    }
}
