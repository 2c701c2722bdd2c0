//! A small deterministic transformer encoder.
//!
//! Two self-attention layers (single head), hidden width 32, feed-forward
//! width 64, vocabulary 512, learned position embeddings up to 128. Weights
//! are generated from the fixed seed [`REFERENCE_WEIGHTS_SEED`], each
//! tensor from its own named ChaCha8 substream with Box–Muller normals, so
//! the "pretrained" starting point reproduces everywhere.
//!
//! The tokenizer splits on whitespace and hashes each token into the
//! vocabulary with 64-bit FNV-1a: `id = 3 + fnv1a64(token) % 509`. The
//! mapping is documented so synthetic languages can be constructed with
//! disjoint id ranges (see [`crate::synth`]).

use ndarray::Array2;

use crate::nn::{NodeId, ParamLeaves, ParamSet, Tape};
use crate::rng::{fnv1a64, DetRng};

use super::{
    mean_pool, EncoderBackend, EncoderError, EncoderOutput, TokenizedInput, TrainableBackend,
    CLS_ID, FIRST_WORD_ID, SEP_ID,
};

/// Seed all reference-encoder weights derive from.
pub const REFERENCE_WEIGHTS_SEED: u64 = 0x5245_4631; // "REF1"

/// Architecture constants of `reference-v1`.
pub const HIDDEN_DIM: usize = 32;
pub const FFN_DIM: usize = 64;
pub const N_LAYERS: usize = 2;
pub const VOCAB_SIZE: usize = 512;
pub const MAX_POSITIONS: usize = 128;

/// Vocabulary bucket for a word under the reference tokenizer.
pub fn hash_token(word: &str) -> usize {
    FIRST_WORD_ID + (fnv1a64(word.as_bytes()) % (VOCAB_SIZE - FIRST_WORD_ID) as u64) as usize
}

pub struct ReferenceEncoder {
    name: String,
    weights: ParamSet,
}

impl ReferenceEncoder {
    /// The standard instance with seed-derived weights.
    pub fn v1() -> Self {
        Self { name: "reference-v1".into(), weights: Self::init_weights() }
    }

    fn init_weights() -> ParamSet {
        let mut params = ParamSet::new();
        let normal = |name: &str, rows: usize, cols: usize, std: f64| -> Array2<f64> {
            let mut rng = DetRng::with_domain(REFERENCE_WEIGHTS_SEED, name);
            Array2::from_shape_fn((rows, cols), |_| rng.normal() * std)
        };
        let xavier = |name: &str, rows: usize, cols: usize| -> Array2<f64> {
            let std = (2.0 / (rows + cols) as f64).sqrt();
            normal(name, rows, cols, std)
        };

        params.register("enc.tok_emb", normal("enc.tok_emb", VOCAB_SIZE, HIDDEN_DIM, 0.1), true);
        params.register("enc.pos_emb", normal("enc.pos_emb", MAX_POSITIONS, HIDDEN_DIM, 0.1), true);
        for l in 0..N_LAYERS {
            for w in ["wq", "wk", "wv", "wo"] {
                let name = format!("enc.l{l}.attn.{w}");
                let value = xavier(&name, HIDDEN_DIM, HIDDEN_DIM);
                params.register(&name, value, true);
            }
            for b in ["bq", "bk", "bv", "bo"] {
                params.register(&format!("enc.l{l}.attn.{b}"), Array2::zeros((1, HIDDEN_DIM)), false);
            }
            params.register(&format!("enc.l{l}.ln1.g"), Array2::ones((1, HIDDEN_DIM)), false);
            params.register(&format!("enc.l{l}.ln1.b"), Array2::zeros((1, HIDDEN_DIM)), false);
            let w1 = format!("enc.l{l}.ffn.w1");
            let w1v = xavier(&w1, HIDDEN_DIM, FFN_DIM);
            params.register(&w1, w1v, true);
            params.register(&format!("enc.l{l}.ffn.b1"), Array2::zeros((1, FFN_DIM)), false);
            let w2 = format!("enc.l{l}.ffn.w2");
            let w2v = xavier(&w2, FFN_DIM, HIDDEN_DIM);
            params.register(&w2, w2v, true);
            params.register(&format!("enc.l{l}.ffn.b2"), Array2::zeros((1, HIDDEN_DIM)), false);
            params.register(&format!("enc.l{l}.ln2.g"), Array2::ones((1, HIDDEN_DIM)), false);
            params.register(&format!("enc.l{l}.ln2.b"), Array2::zeros((1, HIDDEN_DIM)), false);
        }
        params
    }

    /// Forward pass for one sequence, returning the final hidden states
    /// node (`[T × hidden]`).
    fn build_hidden(
        &self,
        tape: &mut Tape,
        leaves: &ParamLeaves,
        params: &ParamSet,
        input: &TokenizedInput,
    ) -> NodeId {
        let node = |name: &str| leaves.node(params.id_of(name).unwrap_or_else(|| {
            panic!("missing parameter {name}")
        }));
        let t = input.len();
        assert!(t <= MAX_POSITIONS, "sequence length {t} exceeds {MAX_POSITIONS}");
        let mask = input.mask_bools();

        let tok = tape.embed_gather(node("enc.tok_emb"), &input.token_ids);
        let positions: Vec<usize> = (0..t).collect();
        let pos = tape.embed_gather(node("enc.pos_emb"), &positions);
        let mut x = tape.add(tok, pos);

        let scale = 1.0 / (HIDDEN_DIM as f64).sqrt();
        for l in 0..N_LAYERS {
            let p = |suffix: &str| node(&format!("enc.l{l}.{suffix}"));
            let q = tape.matmul(x, p("attn.wq"));
            let q = tape.add_row_broadcast(q, p("attn.bq"));
            let k = tape.matmul(x, p("attn.wk"));
            let k = tape.add_row_broadcast(k, p("attn.bk"));
            let v = tape.matmul(x, p("attn.wv"));
            let v = tape.add_row_broadcast(v, p("attn.bv"));
            let scores = tape.matmul_transb(q, k);
            let scores = tape.scale(scores, scale);
            let attn = tape.masked_softmax_rows(scores, &mask);
            let ctx = tape.matmul(attn, v);
            let proj = tape.matmul(ctx, p("attn.wo"));
            let proj = tape.add_row_broadcast(proj, p("attn.bo"));
            let res = tape.add(x, proj);
            let normed = tape.layer_norm_rows(res, p("ln1.g"), p("ln1.b"));

            let h1 = tape.matmul(normed, p("ffn.w1"));
            let h1 = tape.add_row_broadcast(h1, p("ffn.b1"));
            let h1 = tape.relu(h1);
            let h2 = tape.matmul(h1, p("ffn.w2"));
            let h2 = tape.add_row_broadcast(h2, p("ffn.b2"));
            let res2 = tape.add(normed, h2);
            x = tape.layer_norm_rows(res2, p("ln2.g"), p("ln2.b"));
        }
        x
    }
}

impl EncoderBackend for ReferenceEncoder {
    fn name(&self) -> &str {
        &self.name
    }

    fn hidden_dim(&self) -> usize {
        HIDDEN_DIM
    }

    fn tokenize(&self, text: &str, max_length: usize) -> Result<TokenizedInput, EncoderError> {
        if max_length < 3 {
            return Err(EncoderError::MaxLengthTooSmall(max_length));
        }
        let capacity = max_length.min(MAX_POSITIONS);
        let mut ids = Vec::with_capacity(capacity);
        ids.push(CLS_ID);
        // Head-truncate: keep the first words, always retain the trailing
        // separator.
        for word in text.split_whitespace().take(capacity - 2) {
            ids.push(hash_token(word));
        }
        ids.push(SEP_ID);
        let mask = vec![1u8; ids.len()];
        Ok(TokenizedInput { token_ids: ids, attention_mask: mask })
    }

    fn encode(&self, batch: &[TokenizedInput]) -> Result<Vec<EncoderOutput>, EncoderError> {
        self.encode_with(&self.weights, batch, true)
    }

    fn trainable_parameters(&self) -> ParamSet {
        self.weights.clone()
    }

    fn as_trainable(&self) -> Option<&dyn TrainableBackend> {
        Some(self)
    }
}

impl TrainableBackend for ReferenceEncoder {
    fn build_pooled(
        &self,
        tape: &mut Tape,
        leaves: &ParamLeaves,
        params: &ParamSet,
        input: &TokenizedInput,
        include_special: bool,
    ) -> NodeId {
        let hidden = self.build_hidden(tape, leaves, params, input);
        let pool_mask = input.pooling_mask(include_special);
        tape.mean_pool_rows(hidden, &pool_mask)
    }

    fn encode_with(
        &self,
        params: &ParamSet,
        batch: &[TokenizedInput],
        include_special: bool,
    ) -> Result<Vec<EncoderOutput>, EncoderError> {
        if let Some(first) = batch.first() {
            for input in batch {
                if input.len() != first.len() {
                    return Err(EncoderError::UnequalLengths(first.len(), input.len()));
                }
            }
        }
        let mut outputs = Vec::with_capacity(batch.len());
        for input in batch {
            let mut tape = Tape::new();
            let leaves = params.insert_leaves(&mut tape);
            let hidden = self.build_hidden(&mut tape, &leaves, params, input);
            let hidden_states = tape.value(hidden).clone();
            let pool_mask: Vec<u8> = input
                .pooling_mask(include_special)
                .iter()
                .map(|&b| u8::from(b))
                .collect();
            let pooled = mean_pool(&hidden_states, &pool_mask)?;
            outputs.push(EncoderOutput { hidden_states, pooled });
        }
        Ok(outputs)
    }
}
