//! The title-guided encoder-decoder: hyperparameters, parameter layout,
//! encoder, copy-equipped decoder and the training objective.

mod decoder;
mod encoder;
mod loss;
mod params;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::layers::LayerError;
use crate::tensor::TensorError;

pub use decoder::{
    copy_switch, decode_step, final_distribution, mix_distribution, DecoderStep, StepOutput,
};
pub use encoder::{encode_context, encode_memory_bank, EncoderOutput, MemoryBank};
pub use loss::{nll_loss, sequence_loss, LossOutput, SourceView, PROB_FLOOR};
pub use params::{build_model, CopySwitch, ModelParams, ModelVars, TitleGuidance};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error(transparent)]
    Layer(#[from] LayerError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("title is empty")]
    EmptyTitle,
    #[error("context is empty")]
    EmptyContext,
    #[error("title ids are not a prefix of the context ids")]
    TitleNotPrefix,
    #[error("extended id {id} out of range for dynamic vocabulary of size {limit}")]
    ExtendedIdOutOfRange { id: usize, limit: usize },
    #[error("invalid hyperparameters: {0}")]
    Hyperparams(String),
    #[error("{what}: expected width {expected}, got {actual}")]
    Width {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

/// Which parts of the model are present.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    Full,
    /// Context encoder only: no title encoder, matching or merging layers.
    NoTitle,
    /// Generation only: the copy switch is pinned at zero.
    NoCopy,
}

impl Ablation {
    pub fn has_title(self) -> bool {
        self != Ablation::NoTitle
    }

    pub fn has_copy(self) -> bool {
        self != Ablation::NoCopy
    }

    pub fn code(self) -> u8 {
        match self {
            Ablation::Full => 0,
            Ablation::NoTitle => 1,
            Ablation::NoCopy => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Ablation::Full),
            1 => Some(Ablation::NoTitle),
            2 => Some(Ablation::NoCopy),
            _ => None,
        }
    }
}

impl std::str::FromStr for Ablation {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "full" => Ok(Ablation::Full),
            "no_title" | "no-title" | "-title" => Ok(Ablation::NoTitle),
            "no_copy" | "no-copy" | "-copy" => Ok(Ablation::NoCopy),
            other => Err(format!(
                "unknown ablation `{other}` (full, no_title, no_copy)"
            )),
        }
    }
}

impl std::fmt::Display for Ablation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Ablation::Full => "full",
            Ablation::NoTitle => "no_title",
            Ablation::NoCopy => "no_copy",
        })
    }
}

/// Model and optimization settings. Defaults are the published ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    pub emb_dim: usize,
    pub hidden_dim: usize,
    /// Residual weight of the merging layer.
    pub lambda: f64,
    /// Size of the generation vocabulary, special tokens included.
    pub vocab_size: usize,
    pub dropout: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub beam_size: usize,
    pub max_depth: usize,
    pub init_range: f64,
    /// Contexts longer than this are cut at the tail; the title is kept whole.
    pub max_context_len: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            emb_dim: 100,
            hidden_dim: 256,
            lambda: 0.5,
            vocab_size: 50_000,
            dropout: 0.1,
            batch_size: 64,
            learning_rate: 0.001,
            clip_norm: 1.0,
            beam_size: 200,
            max_depth: 6,
            init_range: 0.1,
            max_context_len: 400,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(ModelError::Hyperparams(m));
        if self.hidden_dim == 0 || self.hidden_dim % 2 != 0 {
            return fail(format!(
                "hidden_dim must be even and positive, got {}",
                self.hidden_dim
            ));
        }
        if self.emb_dim == 0 {
            return fail("emb_dim must be positive".into());
        }
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return fail(format!("lambda must lie in (0, 1), got {}", self.lambda));
        }
        if self.vocab_size <= crate::data::EOS {
            return fail(format!(
                "vocab_size must exceed the special tokens, got {}",
                self.vocab_size
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if self.batch_size == 0 || self.beam_size == 0 || self.max_depth == 0 {
            return fail("batch_size, beam_size and max_depth must be positive".into());
        }
        if !(self.learning_rate > 0.0) || !(self.clip_norm > 0.0) || !(self.init_range > 0.0) {
            return fail("learning_rate, clip_norm and init_range must be positive".into());
        }
        if self.max_context_len == 0 {
            return fail("max_context_len must be positive".into());
        }
        Ok(())
    }
}
