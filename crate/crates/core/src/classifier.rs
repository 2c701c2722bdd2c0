//! Classification head, supervised fine-tuning, and prediction.
//!
//! The model is the encoder followed by a feed-forward head: one hidden
//! linear layer with ReLU and a 2-way output layer under softmax. Training
//! minimizes cross-entropy over the full architecture (encoder included)
//! with AdamW, decoupled weight decay 0.01 and a linear learning-rate
//! decay to zero, no warmup. At inference the positive-class probability
//! is thresholded strictly: ties go to the negative class.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Example, Origin, Split, LABEL_UNLABELED};
use crate::encoder::{
    pad_batch, BackendRegistry, EncoderBackend, EncoderError, TokenizedInput, TrainableBackend,
};
use crate::nn::{AdamW, Gradients, NodeId, ParamLeaves, ParamSet, Tape, WeightBlob};
use crate::rng::DetRng;

/// Training and inference hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_sequence_length: usize,
    pub epochs: usize,
    /// Width of the head's hidden layer.
    pub hidden_units: usize,
    /// Positive-class decision threshold, strictly inside (0, 1).
    pub threshold: f64,
    pub seed: u64,
    /// Whether mean pooling covers the [CLS]/[SEP] positions.
    pub pool_special_tokens: bool,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            batch_size: 32,
            learning_rate: 3e-5,
            max_sequence_length: 128,
            epochs: 3,
            hidden_units: 256,
            threshold: 0.5,
            seed: 0,
            pool_special_tokens: true,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<(), ClassifierError> {
        if self.batch_size == 0 || self.max_sequence_length < 3 || self.hidden_units == 0 {
            return Err(ClassifierError::InvalidHyperparams(
                "batch_size, hidden_units must be positive and max_sequence_length >= 3".into(),
            ));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(ClassifierError::InvalidHyperparams("learning_rate must be finite and >= 0".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(ClassifierError::InvalidHyperparams(
                "threshold must lie strictly inside (0, 1)".into(),
            ));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ClassifierError {
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),
    #[error("training split is empty")]
    EmptyTrainingSplit,
    #[error("few-shot stage needs at least one example")]
    EmptyShots,
    #[error("example {0} is unlabeled; supervised training needs labels")]
    UnlabeledExample(String),
    #[error("non-finite loss at epoch {epoch}, step {step} (loss {loss})")]
    NonFiniteLoss { epoch: usize, step: usize, loss: f64 },
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

/// One training stage in a checkpoint's history.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineageEntry {
    pub stage: String,
    pub manifest_id: String,
    pub seed: u64,
}

/// One training example as seen by a training stage; the basis of the
/// leakage audit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub id: String,
    pub language: String,
    pub origin: Origin,
    /// False for adversarial unlabeled examples.
    pub labeled: bool,
    pub stage: String,
}

/// One optimizer step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRecord {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
}

/// Serialized encoder + head weights with training history.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub backend_name: String,
    pub encoder_weights: WeightBlob,
    pub head_weights: WeightBlob,
    pub lineage: Vec<LineageEntry>,
    pub hyperparams: Hyperparams,
    pub audit: Vec<AuditRecord>,
    pub training_log: Vec<TrainLogRecord>,
}

impl Checkpoint {
    pub fn validate(&self) -> Result<(), ClassifierError> {
        if self.lineage.is_empty() {
            return Err(ClassifierError::Checkpoint("lineage must be non-empty".into()));
        }
        let mut stages: Vec<&str> = self.lineage.iter().map(|l| l.stage.as_str()).collect();
        stages.sort_unstable();
        stages.dedup();
        if stages.len() != self.lineage.len() {
            return Err(ClassifierError::Checkpoint("lineage stage names must be unique".into()));
        }
        Ok(())
    }

    pub fn encoder_params(&self) -> Result<ParamSet, ClassifierError> {
        ParamSet::from_blob(&self.encoder_weights).map_err(ClassifierError::Checkpoint)
    }

    pub fn head_params(&self) -> Result<ParamSet, ClassifierError> {
        ParamSet::from_blob(&self.head_weights).map_err(ClassifierError::Checkpoint)
    }

    /// Combined encoder + head parameter set, names preserved.
    pub fn combined_params(&self) -> Result<ParamSet, ClassifierError> {
        let mut params = self.encoder_params()?;
        params.extend_from(&self.head_params()?);
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<(), ClassifierError> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ClassifierError> {
        let file = std::fs::File::open(path)?;
        let ckpt: Checkpoint = serde_json::from_reader(std::io::BufReader::new(file))?;
        ckpt.validate()?;
        Ok(ckpt)
    }

    /// Writes the training log as JSONL, one `{epoch, step, loss}` record
    /// per optimizer step.
    pub fn write_training_log<W: std::io::Write>(&self, mut w: W) -> Result<(), ClassifierError> {
        for rec in &self.training_log {
            let line = serde_json::to_string(rec)?;
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    /// Mean training loss per epoch, in epoch order.
    pub fn epoch_mean_losses(&self) -> Vec<f64> {
        let mut sums: Vec<(f64, usize)> = Vec::new();
        for rec in &self.training_log {
            if rec.epoch >= sums.len() {
                sums.resize(rec.epoch + 1, (0.0, 0));
            }
            sums[rec.epoch].0 += rec.loss;
            sums[rec.epoch].1 += 1;
        }
        sums.into_iter().map(|(s, n)| if n == 0 { 0.0 } else { s / n as f64 }).collect()
    }
}

/// A thresholded prediction for one example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub label: u8,
    pub p_positive: f64,
}

/// Initializes head parameters (`head.w1`, `head.b1`, `head.w2`,
/// `head.b2`) with Xavier-normal weights and zero biases.
pub fn init_head_params(hidden_dim: usize, hidden_units: usize, rng: &mut DetRng) -> ParamSet {
    use ndarray::Array2;
    let mut params = ParamSet::new();
    let xavier = |rows: usize, cols: usize, rng: &mut DetRng| {
        let std = (2.0 / (rows + cols) as f64).sqrt();
        Array2::from_shape_fn((rows, cols), |_| rng.normal() * std)
    };
    let w1 = xavier(hidden_dim, hidden_units, rng);
    params.register("head.w1", w1, true);
    params.register("head.b1", Array2::zeros((1, hidden_units)), false);
    let w2 = xavier(hidden_units, 2, rng);
    params.register("head.w2", w2, true);
    params.register("head.b2", Array2::zeros((1, 2)), false);
    params
}

/// Head forward pass on a pooled vector: softmax(W2·relu(W1·x + b1) + b2),
/// returned as (p_negative, p_positive). The two always sum to 1.
pub fn head_forward(pooled: &[f64], head: &ParamSet) -> Result<(f64, f64), ClassifierError> {
    let w1 = head.value(head.id_of("head.w1").ok_or_else(|| {
        ClassifierError::Checkpoint("missing head.w1".into())
    })?);
    if w1.nrows() != pooled.len() {
        return Err(ClassifierError::Encoder(EncoderError::DimensionMismatch {
            expected: w1.nrows(),
            got: pooled.len(),
        }));
    }
    let b1 = head.value(head.id_of("head.b1").unwrap());
    let w2 = head.value(head.id_of("head.w2").unwrap());
    let b2 = head.value(head.id_of("head.b2").unwrap());
    let hidden: Vec<f64> = (0..w1.ncols())
        .map(|j| {
            let z: f64 =
                pooled.iter().enumerate().map(|(i, x)| x * w1[(i, j)]).sum::<f64>() + b1[(0, j)];
            z.max(0.0)
        })
        .collect();
    let logit = |c: usize| -> f64 {
        hidden.iter().enumerate().map(|(j, h)| h * w2[(j, c)]).sum::<f64>() + b2[(0, c)]
    };
    let (z0, z1) = (logit(0), logit(1));
    let max = z0.max(z1);
    let e0 = (z0 - max).exp();
    let e1 = (z1 - max).exp();
    let denom = e0 + e1;
    Ok((e0 / denom, e1 / denom))
}

/// Builds the head on the tape from a pooled 1×hidden node; returns the
/// 1×2 logits node.
pub fn build_head_logits(
    tape: &mut Tape,
    leaves: &ParamLeaves,
    params: &ParamSet,
    pooled: NodeId,
) -> NodeId {
    let node = |name: &str| leaves.node(params.id_of(name).unwrap());
    let h = tape.matmul(pooled, node("head.w1"));
    let h = tape.add_row_broadcast(h, node("head.b1"));
    let h = tape.relu(h);
    let logits = tape.matmul(h, node("head.w2"));
    tape.add_row_broadcast(logits, node("head.b2"))
}

/// Mean cross-entropy of a batch under the current parameters (forward
/// only). The batch pairs tokenized inputs with labels.
pub fn task_loss(
    backend: &dyn TrainableBackend,
    params: &ParamSet,
    batch: &[(TokenizedInput, u8)],
    pool_special: bool,
) -> f64 {
    let mut tape = Tape::new();
    let leaves = params.insert_leaves(&mut tape);
    let loss = build_task_loss(&mut tape, &leaves, params, backend, batch, pool_special);
    tape.scalar(loss)
}

/// Analytic gradients of [`task_loss`] for every parameter.
pub fn task_loss_gradients(
    backend: &dyn TrainableBackend,
    params: &ParamSet,
    batch: &[(TokenizedInput, u8)],
    pool_special: bool,
) -> Gradients {
    let mut tape = Tape::new();
    let leaves = params.insert_leaves(&mut tape);
    let loss = build_task_loss(&mut tape, &leaves, params, backend, batch, pool_special);
    tape.backward(loss)
}

pub(crate) fn build_task_loss(
    tape: &mut Tape,
    leaves: &ParamLeaves,
    params: &ParamSet,
    backend: &dyn TrainableBackend,
    batch: &[(TokenizedInput, u8)],
    pool_special: bool,
) -> NodeId {
    let weight = 1.0 / batch.len() as f64;
    let mut terms = Vec::with_capacity(batch.len());
    for (input, label) in batch {
        let pooled = backend.build_pooled(tape, leaves, params, input, pool_special);
        let logits = build_head_logits(tape, leaves, params, pooled);
        let ce = tape.softmax_cross_entropy(logits, *label as usize);
        terms.push((ce, weight));
    }
    tape.lincomb(&terms)
}

/// Epoch-wise shuffled batch index order.
pub(crate) fn shuffled_batches(n: usize, batch_size: usize, rng: &mut DetRng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

pub(crate) fn tokenize_labeled(
    backend: &dyn EncoderBackend,
    examples: &[Example],
    max_length: usize,
    require_labels: bool,
) -> Result<Vec<(TokenizedInput, u8)>, ClassifierError> {
    examples
        .iter()
        .map(|ex| {
            if require_labels && ex.label == LABEL_UNLABELED {
                return Err(ClassifierError::UnlabeledExample(ex.id.clone()));
            }
            let input = backend.tokenize(&ex.text, max_length)?;
            Ok((input, ex.label))
        })
        .collect()
}

pub(crate) fn audit_records(examples: &[Example], stage: &str) -> Vec<AuditRecord> {
    examples
        .iter()
        .map(|ex| AuditRecord {
            id: ex.id.clone(),
            language: ex.language.clone(),
            origin: ex.origin,
            labeled: ex.label != LABEL_UNLABELED,
            stage: stage.to_string(),
        })
        .collect()
}

fn assemble_checkpoint(
    backend_name: &str,
    params: &ParamSet,
    lineage: Vec<LineageEntry>,
    hp: &Hyperparams,
    audit: Vec<AuditRecord>,
    training_log: Vec<TrainLogRecord>,
) -> Checkpoint {
    Checkpoint {
        backend_name: backend_name.to_string(),
        encoder_weights: params.subset("enc.").to_blob(),
        head_weights: params.subset("head.").to_blob(),
        lineage,
        hyperparams: hp.clone(),
        audit,
        training_log,
    }
}

/// Core supervised loop shared by initial and continued fine-tuning.
fn fit_supervised(
    backend: &dyn TrainableBackend,
    params: &mut ParamSet,
    data: &[(TokenizedInput, u8)],
    hp: &Hyperparams,
) -> Result<Vec<TrainLogRecord>, ClassifierError> {
    let n_batches = data.len().div_ceil(hp.batch_size);
    let total_steps = hp.epochs * n_batches;
    let ids: Vec<_> = params.ids().collect();
    let mut opt = AdamW::new(params, ids, hp.learning_rate, total_steps);
    let mut rng_batches = DetRng::with_domain(hp.seed, "train/batches");
    let mut log = Vec::with_capacity(total_steps);
    let mut step = 0;
    for epoch in 0..hp.epochs {
        for batch_idx in shuffled_batches(data.len(), hp.batch_size, &mut rng_batches) {
            let mut batch: Vec<(TokenizedInput, u8)> =
                batch_idx.iter().map(|&i| data[i].clone()).collect();
            let mut inputs: Vec<TokenizedInput> =
                batch.iter().map(|(input, _)| input.clone()).collect();
            pad_batch(&mut inputs);
            for (slot, input) in batch.iter_mut().zip(inputs) {
                slot.0 = input;
            }
            let mut tape = Tape::new();
            let leaves = params.insert_leaves(&mut tape);
            let loss_node =
                build_task_loss(&mut tape, &leaves, params, backend, &batch, hp.pool_special_tokens);
            let loss = tape.scalar(loss_node);
            if !loss.is_finite() {
                return Err(ClassifierError::NonFiniteLoss { epoch, step, loss });
            }
            let grads = tape.backward(loss_node);
            opt.step(params, &grads);
            log.push(TrainLogRecord { epoch, step, loss });
            step += 1;
        }
    }
    Ok(log)
}

/// Fine-tunes the full architecture (encoder and head) on a labeled split.
///
/// Deterministic for a given (seed, backend weights, data order): the head
/// is initialized from the seed's `train/head-init` stream and batches are
/// reshuffled per epoch from `train/batches`.
pub fn train_supervised(
    train: &Split,
    backend: &dyn EncoderBackend,
    hp: &Hyperparams,
    run_label: &str,
) -> Result<Checkpoint, ClassifierError> {
    hp.validate()?;
    if train.is_empty() {
        return Err(ClassifierError::EmptyTrainingSplit);
    }
    if train.positives() == 0 || train.negatives() == 0 {
        log::warn!(
            "training split {} has a single class (pos={}, neg={})",
            train.language,
            train.positives(),
            train.negatives()
        );
    }
    let trainable = backend
        .as_trainable()
        .ok_or_else(|| EncoderError::NotTrainable(backend.name().to_string()))?;
    let data = tokenize_labeled(backend, &train.examples, hp.max_sequence_length, true)?;

    let mut params = backend.trainable_parameters();
    let mut rng_head = DetRng::with_domain(hp.seed, "train/head-init");
    let head = init_head_params(backend.hidden_dim(), hp.hidden_units, &mut rng_head);
    params.extend_from(&head);

    let log = fit_supervised(trainable, &mut params, &data, hp)?;
    Ok(assemble_checkpoint(
        backend.name(),
        &params,
        vec![LineageEntry { stage: "supervised".into(), manifest_id: run_label.into(), seed: hp.seed }],
        hp,
        audit_records(&train.examples, "supervised"),
        log,
    ))
}

/// Continues fine-tuning from a checkpoint on a handful of examples.
///
/// The starting weights are exactly the checkpoint's; with zero epochs the
/// output weights are bitwise identical to the input. The new lineage
/// appends a `few_shot` stage.
pub fn continue_training(
    start: &Checkpoint,
    shots: &[Example],
    hp: &Hyperparams,
    registry: &BackendRegistry,
    run_label: &str,
) -> Result<Checkpoint, ClassifierError> {
    hp.validate()?;
    if shots.is_empty() {
        return Err(ClassifierError::EmptyShots);
    }
    let backend = registry.load(&start.backend_name)?;
    let trainable = backend
        .as_trainable()
        .ok_or_else(|| EncoderError::NotTrainable(backend.name().to_string()))?;
    let mut params = start.combined_params()?;
    let data = tokenize_labeled(backend.as_ref(), shots, hp.max_sequence_length, true)?;
    let log = fit_supervised(trainable, &mut params, &data, hp)?;

    let mut lineage = start.lineage.clone();
    let mut stage = "few_shot".to_string();
    let mut counter = 2;
    while lineage.iter().any(|l| l.stage == stage) {
        stage = format!("few_shot-{counter}");
        counter += 1;
    }
    lineage.push(LineageEntry { stage: stage.clone(), manifest_id: run_label.into(), seed: hp.seed });
    let mut audit = start.audit.clone();
    audit.extend(audit_records(shots, &stage));
    Ok(assemble_checkpoint(&start.backend_name, &params, lineage, hp, audit, log))
}

/// Applies a checkpoint to examples, preserving order.
///
/// The predicted label is 1 exactly when `p_positive > threshold`; a
/// probability equal to the threshold goes to the negative class.
pub fn predict(
    ckpt: &Checkpoint,
    examples: &[Example],
    registry: &BackendRegistry,
) -> Result<Vec<Prediction>, ClassifierError> {
    let backend = registry.load(&ckpt.backend_name)?;
    let trainable = backend
        .as_trainable()
        .ok_or_else(|| EncoderError::NotTrainable(backend.name().to_string()))?;
    let enc_params = ckpt.encoder_params()?;
    let head = ckpt.head_params()?;
    let hp = &ckpt.hyperparams;
    let mut out = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(hp.batch_size.max(1)) {
        let mut inputs: Vec<TokenizedInput> = chunk
            .iter()
            .map(|ex| backend.tokenize(&ex.text, hp.max_sequence_length))
            .collect::<Result<_, _>>()?;
        pad_batch(&mut inputs);
        let encoded = trainable.encode_with(&enc_params, &inputs, hp.pool_special_tokens)?;
        for (ex, enc) in chunk.iter().zip(encoded) {
            let (_, p_pos) = head_forward(&enc.pooled, &head)?;
            let label = u8::from(p_pos > hp.threshold);
            out.push(Prediction { id: ex.id.clone(), label, p_positive: p_pos });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Role;
    use crate::encoder::reference::ReferenceEncoder;
    use ndarray::Array2;

    fn zero_head(hidden_dim: usize, hidden_units: usize) -> ParamSet {
        let mut params = ParamSet::new();
        params.register("head.w1", Array2::zeros((hidden_dim, hidden_units)), true);
        params.register("head.b1", Array2::zeros((1, hidden_units)), false);
        params.register("head.w2", Array2::zeros((hidden_units, 2)), true);
        params.register("head.b2", Array2::zeros((1, 2)), false);
        params
    }

    /// Positive sentences contain the word "alarm"; negatives never do.
    /// Words come from tiny disjoint pools so the task is linearly
    /// separable in bag-of-words space.
    pub(crate) fn separable_split(lang: &str, n_pos: usize, n_neg: usize, seed: u64) -> Split {
        let filler = ["stone", "river", "cloud", "lamp", "window", "garden", "paper", "street"];
        let mut rng = DetRng::with_domain(seed, "separable");
        let mut examples = Vec::new();
        for i in 0..n_pos {
            let mut words: Vec<&str> =
                (0..6).map(|_| filler[rng.index(filler.len())]).collect();
            let at = rng.index(words.len() + 1);
            words.insert(at, "alarm");
            examples.push(
                Example::new(format!("{lang}-p{i}"), words.join(" "), lang, 1).unwrap(),
            );
        }
        for i in 0..n_neg {
            let words: Vec<&str> =
                (0..7).map(|_| filler[rng.index(filler.len())]).collect();
            examples.push(
                Example::new(format!("{lang}-n{i}"), words.join(" "), lang, 0).unwrap(),
            );
        }
        Split::new(lang, Role::Train, examples).unwrap()
    }

    fn fast_hp(seed: u64) -> Hyperparams {
        Hyperparams {
            batch_size: 16,
            learning_rate: 5e-3,
            max_sequence_length: 16,
            epochs: 6,
            hidden_units: 32,
            threshold: 0.5,
            seed,
            pool_special_tokens: true,
        }
    }

    #[test]
    fn zero_head_outputs_half_half_and_negative_labels() {
        let head = zero_head(4, 3);
        let (p_neg, p_pos) = head_forward(&[0.3, -0.2, 0.9, 0.1], &head).unwrap();
        assert_eq!((p_neg, p_pos), (0.5, 0.5));
        // Tie rule: p == threshold → negative.
        assert_eq!(u8::from(p_pos > 0.5), 0);
    }

    #[test]
    fn head_forward_matches_softmax_closed_form() {
        // Rig weights so logits are exactly (0, ln 3).
        let mut head = ParamSet::new();
        head.register("head.w1", Array2::ones((1, 1)), true);
        head.register("head.b1", Array2::zeros((1, 1)), false);
        let mut w2 = Array2::zeros((1, 2));
        w2[(0, 1)] = 3.0f64.ln();
        head.register("head.w2", w2, true);
        head.register("head.b2", Array2::zeros((1, 2)), false);
        let (p_neg, p_pos) = head_forward(&[1.0], &head).unwrap();
        assert!((p_neg - 0.25).abs() < 1e-12);
        assert!((p_pos - 0.75).abs() < 1e-12);
    }

    #[test]
    fn head_probabilities_sum_to_one() {
        let mut rng = DetRng::new(4);
        let head = init_head_params(8, 5, &mut rng);
        for trial in 0..20 {
            let pooled: Vec<f64> = (0..8).map(|i| ((trial * 8 + i) as f64).sin() * 3.0).collect();
            let (p_neg, p_pos) = head_forward(&pooled, &head).unwrap();
            assert!((p_neg + p_pos - 1.0).abs() < 1e-6);
            assert!(p_neg > 0.0 && p_pos > 0.0);
        }
    }

    #[test]
    fn head_rejects_dimension_mismatch() {
        let head = zero_head(4, 3);
        assert!(head_forward(&[1.0, 2.0], &head).is_err());
    }

    #[test]
    fn training_learns_a_separable_task() {
        let split = separable_split("aa", 32, 32, 7);
        let backend = ReferenceEncoder::v1();
        let ckpt = train_supervised(&split, &backend, &fast_hp(1), "test").unwrap();
        let registry = BackendRegistry::with_builtins();
        let preds = predict(&ckpt, &split.examples, &registry).unwrap();
        let labels: Vec<u8> = preds.iter().map(|p| p.label).collect();
        let gold: Vec<u8> = split.examples.iter().map(|e| e.label).collect();
        let f1 = crate::metrics::f1_positive(&labels, &gold).unwrap();
        assert!(f1 >= 0.95, "training F1 {f1}");
        // Final-epoch mean loss must beat the first epoch on separable data.
        let losses = ckpt.epoch_mean_losses();
        assert!(losses.last().unwrap() < losses.first().unwrap(), "{losses:?}");
    }

    #[test]
    fn same_seed_gives_identical_loss_trajectory() {
        let split = separable_split("aa", 12, 12, 3);
        let backend = ReferenceEncoder::v1();
        let mut hp = fast_hp(9);
        hp.epochs = 2;
        let a = train_supervised(&split, &backend, &hp, "x").unwrap();
        let b = train_supervised(&split, &backend, &hp, "x").unwrap();
        assert_eq!(a.training_log, b.training_log);
        assert!(a.combined_params().unwrap().bitwise_eq(&b.combined_params().unwrap()));
    }

    #[test]
    fn empty_split_is_rejected() {
        let split = Split::new("aa", Role::Train, vec![]).unwrap();
        let backend = ReferenceEncoder::v1();
        assert!(matches!(
            train_supervised(&split, &backend, &fast_hp(1), "x"),
            Err(ClassifierError::EmptyTrainingSplit)
        ));
    }

    #[test]
    fn continue_training_appends_lineage_and_starts_from_parent_weights() {
        let split = separable_split("aa", 8, 8, 5);
        let backend = ReferenceEncoder::v1();
        let mut hp = fast_hp(2);
        hp.epochs = 1;
        let stage1 = train_supervised(&split, &backend, &hp, "m1").unwrap();
        let registry = BackendRegistry::with_builtins();

        // Zero epochs: bitwise identical weights, lineage length 2.
        let shots: Vec<Example> = split.examples[..4].to_vec();
        let mut hp2 = hp.clone();
        hp2.epochs = 0;
        let stage2 = continue_training(&stage1, &shots, &hp2, &registry, "m1-fs").unwrap();
        assert_eq!(stage2.lineage.len(), 2);
        assert_eq!(stage2.lineage[1].stage, "few_shot");
        assert!(stage2
            .combined_params()
            .unwrap()
            .bitwise_eq(&stage1.combined_params().unwrap()));
        stage2.validate().unwrap();

        // Empty shots rejected.
        assert!(matches!(
            continue_training(&stage1, &[], &hp, &registry, "x"),
            Err(ClassifierError::EmptyShots)
        ));
    }

    #[test]
    fn zero_learning_rate_continuation_is_bitwise_noop() {
        let split = separable_split("aa", 8, 8, 6);
        let backend = ReferenceEncoder::v1();
        let mut hp = fast_hp(2);
        hp.epochs = 1;
        let stage1 = train_supervised(&split, &backend, &hp, "m").unwrap();
        let registry = BackendRegistry::with_builtins();
        let mut hp2 = hp.clone();
        hp2.learning_rate = 0.0;
        hp2.epochs = 2;
        let stage2 =
            continue_training(&stage1, &split.examples[..6], &hp2, &registry, "m-fs").unwrap();
        assert!(stage2
            .combined_params()
            .unwrap()
            .bitwise_eq(&stage1.combined_params().unwrap()));
    }

    #[test]
    fn predict_is_pure_and_order_preserving() {
        let split = separable_split("aa", 6, 6, 8);
        let backend = ReferenceEncoder::v1();
        let mut hp = fast_hp(3);
        hp.epochs = 1;
        let ckpt = train_supervised(&split, &backend, &hp, "m").unwrap();
        let registry = BackendRegistry::with_builtins();
        let a = predict(&ckpt, &split.examples, &registry).unwrap();
        let b = predict(&ckpt, &split.examples, &registry).unwrap();
        assert_eq!(a, b);
        let ids: Vec<&str> = a.iter().map(|p| p.id.as_str()).collect();
        let expected: Vec<&str> = split.examples.iter().map(|e| e.id.as_str()).collect();
        assert_eq!(ids, expected);
    }

    #[test]
    fn checkpoint_save_load_round_trip() {
        let split = separable_split("aa", 6, 6, 8);
        let backend = ReferenceEncoder::v1();
        let mut hp = fast_hp(3);
        hp.epochs = 1;
        let ckpt = train_supervised(&split, &backend, &hp, "m").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        ckpt.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert!(back.combined_params().unwrap().bitwise_eq(&ckpt.combined_params().unwrap()));
        assert_eq!(back.lineage, ckpt.lineage);
        assert_eq!(back.audit, ckpt.audit);
    }

    #[test]
    fn head_gradients_match_finite_differences() {
        let backend = ReferenceEncoder::v1();
        let mut params = backend.trainable_parameters();
        let mut rng = DetRng::new(11);
        let head = init_head_params(backend.hidden_dim(), 8, &mut rng);
        params.extend_from(&head);
        let batch: Vec<(TokenizedInput, u8)> = vec![
            (backend.tokenize("alarm stone river", 12).unwrap(), 1),
            (backend.tokenize("cloud lamp", 12).unwrap(), 0),
        ];
        let grads = task_loss_gradients(&backend, &params, &batch, true);
        for id in params.ids_with_prefix("head.") {
            let g = grads.get(id).unwrap();
            for r in 0..g.nrows() {
                for c in 0..g.ncols() {
                    let mut plus = params.clone();
                    let mut minus = params.clone();
                    let h = 1e-6 * (1.0 + params.value(id)[(r, c)].abs());
                    plus.value_mut(id)[(r, c)] += h;
                    minus.value_mut(id)[(r, c)] -= h;
                    let fd = (task_loss(&backend, &plus, &batch, true)
                        - task_loss(&backend, &minus, &batch, true))
                        / (2.0 * h);
                    let a = g[(r, c)];
                    let denom = a.abs().max(fd.abs()).max(1e-6);
                    assert!(
                        ((a - fd) / denom).abs() < 1e-4,
                        "{} ({r},{c}): analytic {a} vs fd {fd}",
                        params.name(id)
                    );
                }
            }
        }
    }
}
