//! Token-level encoder abstraction.
//!
//! A backend turns text into token ids and token ids into per-token hidden
//! states; the pooled sentence representation is the mean over unmasked
//! token positions (special tokens included by default). Backends are
//! addressed by opaque name strings through [`BackendRegistry`]; the crate
//! ships [`reference::ReferenceEncoder`], a small deterministic transformer
//! used by tests and synthetic experiments. Pretrained model names pass
//! through untouched so an external backend can be registered under them.

pub mod reference;

use std::collections::HashMap;
use std::sync::Arc;

use ndarray::Array2;

use crate::nn::{NodeId, ParamLeaves, ParamSet, Tape};

/// Padding token id.
pub const PAD_ID: usize = 0;
/// Classification marker, always first.
pub const CLS_ID: usize = 1;
/// Separator, always after the last real token.
pub const SEP_ID: usize = 2;
/// First id available to regular vocabulary tokens.
pub const FIRST_WORD_ID: usize = 3;

#[derive(Debug, thiserror::Error)]
pub enum EncoderError {
    #[error("backend {name:?} is not available; known backends: {known:?}")]
    BackendNotAvailable { name: String, known: Vec<String> },
    #[error("backend {0:?} does not support fine-tuning")]
    NotTrainable(String),
    #[error("batch inputs must be padded to equal length (found {0} and {1})")]
    UnequalLengths(usize, usize),
    #[error("attention mask has no unmasked position")]
    EmptyMask,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("max_length must be at least 3, got {0}")]
    MaxLengthTooSmall(usize),
}

/// Ids plus attention mask for one sequence: `[CLS] tokens… [SEP] pad…`,
/// mask 1 on real positions and 0 on padding (1s always form a prefix).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedInput {
    pub token_ids: Vec<usize>,
    pub attention_mask: Vec<u8>,
}

impl TokenizedInput {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    /// Number of real (unpadded) positions.
    pub fn real_len(&self) -> usize {
        self.attention_mask.iter().filter(|&&m| m == 1).count()
    }

    /// Extends with padding up to `len`.
    pub fn pad_to(&mut self, len: usize) {
        while self.token_ids.len() < len {
            self.token_ids.push(PAD_ID);
            self.attention_mask.push(0);
        }
    }

    pub fn mask_bools(&self) -> Vec<bool> {
        self.attention_mask.iter().map(|&m| m == 1).collect()
    }

    /// Pooling mask: all real tokens, or real tokens minus [CLS]/[SEP]
    /// when `include_special` is false.
    pub fn pooling_mask(&self, include_special: bool) -> Vec<bool> {
        let mut mask = self.mask_bools();
        if !include_special {
            for (i, &id) in self.token_ids.iter().enumerate() {
                if mask[i] && (id == CLS_ID || id == SEP_ID) {
                    mask[i] = false;
                }
            }
        }
        mask
    }
}

/// Hidden states for one sequence plus its pooled representation.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    /// `[sequence_length × hidden_dim]`, padded rows included.
    pub hidden_states: Array2<f64>,
    pub pooled: Vec<f64>,
}

/// Mean over the rows of `hidden_states` where `mask == 1`.
pub fn mean_pool(hidden_states: &Array2<f64>, mask: &[u8]) -> Result<Vec<f64>, EncoderError> {
    if hidden_states.nrows() != mask.len() {
        return Err(EncoderError::DimensionMismatch {
            expected: hidden_states.nrows(),
            got: mask.len(),
        });
    }
    let n = mask.iter().filter(|&&m| m == 1).count();
    if n == 0 {
        return Err(EncoderError::EmptyMask);
    }
    let mut acc = vec![0.0; hidden_states.ncols()];
    for (r, &m) in mask.iter().enumerate() {
        if m == 1 {
            for (c, a) in acc.iter_mut().enumerate() {
                *a += hidden_states[(r, c)];
            }
        }
    }
    for a in &mut acc {
        *a /= n as f64;
    }
    Ok(acc)
}

/// Pads every input to the longest length in the batch.
pub fn pad_batch(inputs: &mut [TokenizedInput]) {
    let max = inputs.iter().map(|i| i.len()).max().unwrap_or(0);
    for input in inputs {
        input.pad_to(max);
    }
}

/// A text encoder backend.
pub trait EncoderBackend: Send + Sync {
    fn name(&self) -> &str;
    fn hidden_dim(&self) -> usize;

    /// Adds special tokens and truncates from the tail; padding is the
    /// batcher's job.
    fn tokenize(&self, text: &str, max_length: usize) -> Result<TokenizedInput, EncoderError>;

    /// Encodes a batch of equal-length inputs with the backend's own
    /// weights. Pooled vectors include special tokens.
    fn encode(&self, batch: &[TokenizedInput]) -> Result<Vec<EncoderOutput>, EncoderError>;

    /// Snapshot of the fine-tunable weights (names prefixed `enc.`).
    fn trainable_parameters(&self) -> ParamSet;

    /// Access to graph building for fine-tuning, when supported.
    fn as_trainable(&self) -> Option<&dyn TrainableBackend>;
}

/// Graph-building interface for backends that support full fine-tuning.
pub trait TrainableBackend: EncoderBackend {
    /// Builds the forward pass for one sequence on the tape, returning the
    /// pooled 1×hidden node.
    fn build_pooled(
        &self,
        tape: &mut Tape,
        leaves: &ParamLeaves,
        params: &ParamSet,
        input: &TokenizedInput,
        include_special: bool,
    ) -> NodeId;

    /// Forward pass with explicit weights (used when restoring checkpoints).
    fn encode_with(
        &self,
        params: &ParamSet,
        batch: &[TokenizedInput],
        include_special: bool,
    ) -> Result<Vec<EncoderOutput>, EncoderError>;
}

/// Name-addressed backend lookup.
///
/// Manifests carry backend names verbatim (including pretrained-model
/// identifiers); only names registered here resolve, everything else
/// reports what is available.
#[derive(Clone)]
pub struct BackendRegistry {
    backends: HashMap<String, Arc<dyn EncoderBackend>>,
}

impl BackendRegistry {
    pub fn empty() -> Self {
        Self { backends: HashMap::new() }
    }

    /// Registry with the built-in reference encoder under
    /// `"reference-v1"`.
    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register(Arc::new(reference::ReferenceEncoder::v1()));
        r
    }

    pub fn register(&mut self, backend: Arc<dyn EncoderBackend>) {
        self.backends.insert(backend.name().to_string(), backend);
    }

    pub fn load(&self, name: &str) -> Result<Arc<dyn EncoderBackend>, EncoderError> {
        self.backends.get(name).cloned().ok_or_else(|| {
            let mut known: Vec<String> = self.backends.keys().cloned().collect();
            known.sort();
            EncoderError::BackendNotAvailable { name: name.to_string(), known }
        })
    }
}

impl Default for BackendRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}
