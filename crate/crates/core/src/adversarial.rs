//! Adversarial zero-shot training with a language discriminator.
//!
//! Alongside the check-worthiness task, a discriminator reads the same
//! pooled sentence embedding and predicts whether the sentence came from
//! the source language; the encoder is trained to make that prediction
//! hard, pushing it toward language-invariant representations. Two
//! schedules are provided: `alternating` (one discriminator-only step,
//! then one generator+task step per batch) and `gradient_reversal`
//! (a single combined step where the encoder receives the discriminator
//! gradient negated and scaled by λ).

use serde::{Deserialize, Serialize};

use crate::classifier::{
    audit_records, build_task_loss, init_head_params, shuffled_batches, tokenize_labeled,
    AuditRecord, Checkpoint, ClassifierError, Hyperparams, LineageEntry, TrainLogRecord,
};
use crate::corpus::{CorpusError, Example, Split, LABEL_UNLABELED};
use crate::encoder::{pad_batch, EncoderBackend, EncoderError, TokenizedInput, TrainableBackend};
use crate::nn::{AdamW, Gradients, NodeId, ParamLeaves, ParamSet, Tape};
use crate::rng::DetRng;

/// Update schedule for the adversarial objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdvSchedule {
    Alternating,
    GradientReversal,
}

/// Adversarial training configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdvConfig {
    /// Unlabeled target examples to draw; defaults to the source training
    /// set size when unset.
    pub unlabeled_target_size: Option<usize>,
    /// Weight λ of the adversarial term in the combined objective.
    pub adversarial_weight: f64,
    pub discriminator_hidden: usize,
    pub schedule: AdvSchedule,
}

impl Default for AdvConfig {
    fn default() -> Self {
        Self {
            unlabeled_target_size: None,
            adversarial_weight: 1.0,
            discriminator_hidden: 256,
            schedule: AdvSchedule::Alternating,
        }
    }
}

impl AdvConfig {
    pub fn validate(&self) -> Result<(), ClassifierError> {
        if self.adversarial_weight < 0.0 || !self.adversarial_weight.is_finite() {
            return Err(ClassifierError::InvalidHyperparams("adversarial_weight must be >= 0".into()));
        }
        if self.discriminator_hidden == 0 {
            return Err(ClassifierError::InvalidHyperparams("discriminator_hidden must be positive".into()));
        }
        if self.unlabeled_target_size == Some(0) {
            return Err(ClassifierError::InvalidHyperparams("unlabeled_target_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Initializes discriminator parameters: one hidden layer plus a single
/// sigmoid output (`disc.w1`, `disc.b1`, `disc.w2`, `disc.b2`).
pub fn init_discriminator_params(
    hidden_dim: usize,
    discriminator_hidden: usize,
    rng: &mut DetRng,
) -> ParamSet {
    use ndarray::Array2;
    let mut params = ParamSet::new();
    let xavier = |rows: usize, cols: usize, rng: &mut DetRng| {
        let std = (2.0 / (rows + cols) as f64).sqrt();
        Array2::from_shape_fn((rows, cols), |_| rng.normal() * std)
    };
    let w1 = xavier(hidden_dim, discriminator_hidden, rng);
    params.register("disc.w1", w1, true);
    params.register("disc.b1", Array2::zeros((1, discriminator_hidden)), false);
    let w2 = xavier(discriminator_hidden, 1, rng);
    params.register("disc.w2", w2, true);
    params.register("disc.b2", Array2::zeros((1, 1)), false);
    params
}

/// Discriminator forward pass: probability that the pooled embedding came
/// from the source language. Always strictly inside (0, 1).
pub fn discriminator_forward(pooled: &[f64], disc: &ParamSet) -> Result<f64, ClassifierError> {
    let w1 = disc.value(disc.id_of("disc.w1").ok_or_else(|| {
        ClassifierError::Checkpoint("missing disc.w1".into())
    })?);
    if w1.nrows() != pooled.len() {
        return Err(ClassifierError::Encoder(EncoderError::DimensionMismatch {
            expected: w1.nrows(),
            got: pooled.len(),
        }));
    }
    let b1 = disc.value(disc.id_of("disc.b1").unwrap());
    let w2 = disc.value(disc.id_of("disc.w2").unwrap());
    let b2 = disc.value(disc.id_of("disc.b2").unwrap());
    let hidden: Vec<f64> = (0..w1.ncols())
        .map(|j| {
            let z: f64 =
                pooled.iter().enumerate().map(|(i, x)| x * w1[(i, j)]).sum::<f64>() + b1[(0, j)];
            z.max(0.0)
        })
        .collect();
    let logit: f64 =
        hidden.iter().enumerate().map(|(j, h)| h * w2[(j, 0)]).sum::<f64>() + b2[(0, 0)];
    Ok(1.0 / (1.0 + (-logit).exp()))
}

fn build_disc_logit(
    tape: &mut Tape,
    leaves: &ParamLeaves,
    params: &ParamSet,
    pooled: NodeId,
) -> NodeId {
    let node = |name: &str| leaves.node(params.id_of(name).unwrap());
    let h = tape.matmul(pooled, node("disc.w1"));
    let h = tape.add_row_broadcast(h, node("disc.b1"));
    let h = tape.relu(h);
    let logit = tape.matmul(h, node("disc.w2"));
    tape.add_row_broadcast(logit, node("disc.b2"))
}

/// How the discriminator loss graph treats the encoder side.
#[derive(Debug, Clone, Copy, PartialEq)]
enum PooledMode {
    /// Stop-gradient on the pooled embedding (discriminator-only step).
    Detached,
    /// Gradient flows through unchanged (generator step).
    Flowing,
    /// Gradient-reversal layer with the given λ.
    Reversed(f64),
}

/// Mean discriminator BCE over source (label 1) and target (label 0)
/// sequences, with the encoder side handled per `mode`.
#[allow(clippy::too_many_arguments)]
fn build_disc_loss(
    tape: &mut Tape,
    leaves: &ParamLeaves,
    params: &ParamSet,
    backend: &dyn TrainableBackend,
    source: &[TokenizedInput],
    target: &[TokenizedInput],
    pool_special: bool,
    mode: PooledMode,
) -> NodeId {
    let weight = 1.0 / (source.len() + target.len()) as f64;
    let mut terms = Vec::with_capacity(source.len() + target.len());
    for (inputs, label) in [(source, 1.0), (target, 0.0)] {
        for input in inputs {
            let pooled = backend.build_pooled(tape, leaves, params, input, pool_special);
            let pooled = match mode {
                PooledMode::Detached => tape.detach(pooled),
                PooledMode::Flowing => pooled,
                PooledMode::Reversed(lambda) => tape.grad_reverse(pooled, lambda),
            };
            let logit = build_disc_logit(tape, leaves, params, pooled);
            let bce = tape.sigmoid_bce(logit, label);
            terms.push((bce, weight));
        }
    }
    tape.lincomb(&terms)
}

/// Forward value of the mean discriminator loss (no gradient tricks).
pub fn discriminator_loss(
    backend: &dyn TrainableBackend,
    params: &ParamSet,
    source: &[TokenizedInput],
    target: &[TokenizedInput],
    pool_special: bool,
) -> f64 {
    let mut tape = Tape::new();
    let leaves = params.insert_leaves(&mut tape);
    let loss = build_disc_loss(
        &mut tape, &leaves, params, backend, source, target, pool_special, PooledMode::Flowing,
    );
    tape.scalar(loss)
}

/// Gradients of the adversarial term alone, as the encoder sees them under
/// gradient reversal: −λ times the plain discriminator-loss gradient.
pub fn adversarial_term_gradients(
    backend: &dyn TrainableBackend,
    params: &ParamSet,
    source: &[TokenizedInput],
    target: &[TokenizedInput],
    pool_special: bool,
    lambda: f64,
) -> Gradients {
    let mut tape = Tape::new();
    let leaves = params.insert_leaves(&mut tape);
    let loss = build_disc_loss(
        &mut tape,
        &leaves,
        params,
        backend,
        source,
        target,
        pool_special,
        PooledMode::Reversed(lambda),
    );
    tape.backward(loss)
}

/// Combined generator objective `L_task − λ·L_disc` (discriminator frozen),
/// as used by the alternating schedule's generator step.
pub fn generator_loss(
    backend: &dyn TrainableBackend,
    params: &ParamSet,
    labeled: &[(TokenizedInput, u8)],
    source: &[TokenizedInput],
    target: &[TokenizedInput],
    pool_special: bool,
    lambda: f64,
) -> f64 {
    let mut tape = Tape::new();
    let leaves = params.insert_leaves(&mut tape);
    let task = build_task_loss(&mut tape, &leaves, params, backend, labeled, pool_special);
    let disc = build_disc_loss(
        &mut tape, &leaves, params, backend, source, target, pool_special, PooledMode::Flowing,
    );
    let combined = tape.lincomb(&[(task, 1.0), (disc, -lambda)]);
    tape.scalar(combined)
}

/// Gradients of [`generator_loss`].
pub fn generator_loss_gradients(
    backend: &dyn TrainableBackend,
    params: &ParamSet,
    labeled: &[(TokenizedInput, u8)],
    source: &[TokenizedInput],
    target: &[TokenizedInput],
    pool_special: bool,
    lambda: f64,
) -> Gradients {
    let mut tape = Tape::new();
    let leaves = params.insert_leaves(&mut tape);
    let task = build_task_loss(&mut tape, &leaves, params, backend, labeled, pool_special);
    let disc = build_disc_loss(
        &mut tape, &leaves, params, backend, source, target, pool_special, PooledMode::Flowing,
    );
    let combined = tape.lincomb(&[(task, 1.0), (disc, -lambda)]);
    tape.backward(combined)
}

/// Gradients of the discriminator-only step (encoder detached), exactly as
/// the alternating schedule computes them.
pub fn discriminator_step_gradients(
    backend: &dyn TrainableBackend,
    params: &ParamSet,
    source: &[TokenizedInput],
    target: &[TokenizedInput],
    pool_special: bool,
) -> Gradients {
    let mut tape = Tape::new();
    let leaves = params.insert_leaves(&mut tape);
    let loss = build_disc_loss(
        &mut tape, &leaves, params, backend, source, target, pool_special, PooledMode::Detached,
    );
    tape.backward(loss)
}

/// Combined objective value under gradient reversal: `L_task + L_disc`
/// with the reversal layer (scale λ) between the pooled embedding and the
/// discriminator. This is the forward value the single GRL step sees.
pub fn grl_combined_loss(
    backend: &dyn TrainableBackend,
    params: &ParamSet,
    labeled: &[(TokenizedInput, u8)],
    source: &[TokenizedInput],
    target: &[TokenizedInput],
    pool_special: bool,
    lambda: f64,
) -> f64 {
    let mut tape = Tape::new();
    let leaves = params.insert_leaves(&mut tape);
    let task = build_task_loss(&mut tape, &leaves, params, backend, labeled, pool_special);
    let disc = build_disc_loss(
        &mut tape,
        &leaves,
        params,
        backend,
        source,
        target,
        pool_special,
        PooledMode::Reversed(lambda),
    );
    let combined = tape.lincomb(&[(task, 1.0), (disc, 1.0)]);
    tape.scalar(combined)
}

/// Gradients of [`grl_combined_loss`] on a single tape, exactly as the
/// gradient-reversal step computes them.
pub fn grl_combined_gradients(
    backend: &dyn TrainableBackend,
    params: &ParamSet,
    labeled: &[(TokenizedInput, u8)],
    source: &[TokenizedInput],
    target: &[TokenizedInput],
    pool_special: bool,
    lambda: f64,
) -> Gradients {
    let mut tape = Tape::new();
    let leaves = params.insert_leaves(&mut tape);
    let task = build_task_loss(&mut tape, &leaves, params, backend, labeled, pool_special);
    let disc = build_disc_loss(
        &mut tape,
        &leaves,
        params,
        backend,
        source,
        target,
        pool_special,
        PooledMode::Reversed(lambda),
    );
    let combined = tape.lincomb(&[(task, 1.0), (disc, 1.0)]);
    tape.backward(combined)
}

/// Uniformly samples `n` examples without replacement and strips their
/// labels to the unlabeled sentinel.
pub fn sample_unlabeled_target(
    split: &Split,
    n: usize,
    seed: u64,
) -> Result<Vec<Example>, CorpusError> {
    if n == 0 {
        return Err(CorpusError::Invalid("unlabeled sample size must be >= 1".into()));
    }
    if n > split.len() {
        return Err(CorpusError::Capacity {
            language: split.language.clone(),
            class: "any".into(),
            requested: n,
            available: split.len(),
        });
    }
    let mut pool: Vec<&Example> = split.examples.iter().collect();
    let mut rng = DetRng::with_domain(seed, "adv/unlabeled");
    rng.shuffle(&mut pool);
    Ok(pool
        .into_iter()
        .take(n)
        .map(|ex| {
            let mut ex = ex.clone();
            ex.label = LABEL_UNLABELED;
            ex
        })
        .collect())
}

/// Per-batch target-side iterator: cycles through a shuffled pool,
/// reshuffling between passes.
struct TargetStream<'a> {
    pool: &'a [TokenizedInput],
    order: Vec<usize>,
    cursor: usize,
    rng: DetRng,
}

impl<'a> TargetStream<'a> {
    fn new(pool: &'a [TokenizedInput], seed: u64) -> Self {
        let mut rng = DetRng::with_domain(seed, "train/adv-target");
        let mut order: Vec<usize> = (0..pool.len()).collect();
        rng.shuffle(&mut order);
        Self { pool, order, cursor: 0, rng }
    }

    fn next_batch(&mut self, n: usize) -> Vec<TokenizedInput> {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            if self.cursor == self.order.len() {
                self.rng.shuffle(&mut self.order);
                self.cursor = 0;
            }
            out.push(self.pool[self.order[self.cursor]].clone());
            self.cursor += 1;
        }
        out
    }
}

/// Trains under the combined objective `L = L_task + λ·L_adv`.
///
/// Each step pairs one labeled source batch with an equal number of
/// unlabeled target sequences (half source, half target). Under
/// `alternating`, a discriminator-only step (encoder detached) precedes
/// each generator+task step (discriminator frozen); under
/// `gradient_reversal` a single step updates everything, the encoder
/// receiving the reversed, λ-scaled discriminator gradient. The task-side
/// batch schedule and head initialization match [`train_supervised`]
/// stream for stream, so λ = 0 reproduces the plain zero-shot run.
///
/// [`train_supervised`]: crate::classifier::train_supervised
pub fn train_adversarial(
    source_train: &Split,
    target_unlabeled: &[Example],
    backend: &dyn EncoderBackend,
    hp: &Hyperparams,
    adv: &AdvConfig,
    run_label: &str,
) -> Result<Checkpoint, ClassifierError> {
    hp.validate()?;
    adv.validate()?;
    if source_train.is_empty() {
        return Err(ClassifierError::EmptyTrainingSplit);
    }
    if target_unlabeled.is_empty() {
        return Err(ClassifierError::InvalidHyperparams("unlabeled target pool is empty".into()));
    }
    let trainable = backend
        .as_trainable()
        .ok_or_else(|| EncoderError::NotTrainable(backend.name().to_string()))?;

    let data = tokenize_labeled(backend, &source_train.examples, hp.max_sequence_length, true)?;
    // Labels on target examples, if any, are ignored by construction.
    let target_inputs: Vec<TokenizedInput> = target_unlabeled
        .iter()
        .map(|ex| backend.tokenize(&ex.text, hp.max_sequence_length))
        .collect::<Result<_, _>>()?;

    let mut params = backend.trainable_parameters();
    let mut rng_head = DetRng::with_domain(hp.seed, "train/head-init");
    let head = init_head_params(backend.hidden_dim(), hp.hidden_units, &mut rng_head);
    params.extend_from(&head);
    let mut rng_disc = DetRng::with_domain(hp.seed, "train/disc-init");
    let disc = init_discriminator_params(backend.hidden_dim(), adv.discriminator_hidden, &mut rng_disc);
    params.extend_from(&disc);

    let model_ids: Vec<_> = params
        .ids()
        .filter(|&id| !params.name(id).starts_with("disc."))
        .collect();
    let disc_ids = params.ids_with_prefix("disc.");

    let n_batches = data.len().div_ceil(hp.batch_size);
    let total_steps = hp.epochs * n_batches;
    let mut opt_model = AdamW::new(&params, model_ids, hp.learning_rate, total_steps);
    let mut opt_disc = AdamW::new(&params, disc_ids, hp.learning_rate, total_steps);

    let mut rng_batches = DetRng::with_domain(hp.seed, "train/batches");
    let mut targets = TargetStream::new(&target_inputs, hp.seed);
    let lambda = adv.adversarial_weight;
    let mut log = Vec::with_capacity(total_steps);
    let mut step = 0;

    for epoch in 0..hp.epochs {
        for batch_idx in shuffled_batches(data.len(), hp.batch_size, &mut rng_batches) {
            let mut labeled: Vec<(TokenizedInput, u8)> =
                batch_idx.iter().map(|&i| data[i].clone()).collect();
            let mut inputs: Vec<TokenizedInput> =
                labeled.iter().map(|(input, _)| input.clone()).collect();
            pad_batch(&mut inputs);
            for (slot, input) in labeled.iter_mut().zip(inputs.iter().cloned()) {
                slot.0 = input;
            }
            let mut target_batch = targets.next_batch(labeled.len());
            pad_batch(&mut target_batch);
            let source_inputs: Vec<TokenizedInput> =
                labeled.iter().map(|(input, _)| input.clone()).collect();

            let loss = match adv.schedule {
                AdvSchedule::Alternating => {
                    // Discriminator step: encoder detached.
                    let mut tape = Tape::new();
                    let leaves = params.insert_leaves(&mut tape);
                    let d_loss = build_disc_loss(
                        &mut tape,
                        &leaves,
                        &params,
                        trainable,
                        &source_inputs,
                        &target_batch,
                        hp.pool_special_tokens,
                        PooledMode::Detached,
                    );
                    let d_value = tape.scalar(d_loss);
                    if !d_value.is_finite() {
                        return Err(ClassifierError::NonFiniteLoss { epoch, step, loss: d_value });
                    }
                    let d_grads = tape.backward(d_loss);
                    opt_disc.step(&mut params, &d_grads);

                    // Generator + task step: discriminator frozen.
                    let mut tape = Tape::new();
                    let leaves = params.insert_leaves(&mut tape);
                    let task = build_task_loss(
                        &mut tape, &leaves, &params, trainable, &labeled, hp.pool_special_tokens,
                    );
                    let adv_term = build_disc_loss(
                        &mut tape,
                        &leaves,
                        &params,
                        trainable,
                        &source_inputs,
                        &target_batch,
                        hp.pool_special_tokens,
                        PooledMode::Flowing,
                    );
                    let combined = tape.lincomb(&[(task, 1.0), (adv_term, -lambda)]);
                    let value = tape.scalar(combined);
                    if !value.is_finite() {
                        return Err(ClassifierError::NonFiniteLoss { epoch, step, loss: value });
                    }
                    let grads = tape.backward(combined);
                    opt_model.step(&mut params, &grads);
                    value
                }
                AdvSchedule::GradientReversal => {
                    let mut tape = Tape::new();
                    let leaves = params.insert_leaves(&mut tape);
                    let task = build_task_loss(
                        &mut tape, &leaves, &params, trainable, &labeled, hp.pool_special_tokens,
                    );
                    let adv_term = build_disc_loss(
                        &mut tape,
                        &leaves,
                        &params,
                        trainable,
                        &source_inputs,
                        &target_batch,
                        hp.pool_special_tokens,
                        PooledMode::Reversed(lambda),
                    );
                    let combined = tape.lincomb(&[(task, 1.0), (adv_term, 1.0)]);
                    let value = tape.scalar(combined);
                    if !value.is_finite() {
                        return Err(ClassifierError::NonFiniteLoss { epoch, step, loss: value });
                    }
                    let grads = tape.backward(combined);
                    opt_model.step(&mut params, &grads);
                    opt_disc.step(&mut params, &grads);
                    value
                }
            };
            log.push(TrainLogRecord { epoch, step, loss });
            step += 1;
        }
    }

    let mut audit: Vec<AuditRecord> = audit_records(&source_train.examples, "adversarial");
    audit.extend(audit_records(target_unlabeled, "adversarial-unlabeled"));
    Ok(Checkpoint {
        backend_name: backend.name().to_string(),
        encoder_weights: params.subset("enc.").to_blob(),
        head_weights: params.subset("head.").to_blob(),
        lineage: vec![LineageEntry {
            stage: "adversarial".into(),
            manifest_id: run_label.into(),
            seed: hp.seed,
        }],
        hyperparams: hp.clone(),
        audit,
        training_log: log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{predict, train_supervised};
    use crate::corpus::Role;
    use crate::encoder::reference::ReferenceEncoder;
    use crate::encoder::BackendRegistry;
    use ndarray::Array2;

    fn source_split() -> Split {
        let filler = ["stone", "river", "cloud", "lamp"];
        let mut rng = DetRng::new(21);
        let mut examples = Vec::new();
        for i in 0..12 {
            let mut words: Vec<&str> = (0..5).map(|_| filler[rng.index(filler.len())]).collect();
            let positive = i % 2 == 0;
            if positive {
                words.insert(rng.index(words.len() + 1), "alarm");
            }
            examples.push(
                Example::new(format!("s{i}"), words.join(" "), "aa", u8::from(positive)).unwrap(),
            );
        }
        Split::new("aa", Role::Train, examples).unwrap()
    }

    fn target_split() -> Split {
        let filler = ["tashi", "vendo", "kilpar", "moren"];
        let mut rng = DetRng::new(22);
        let mut examples = Vec::new();
        for i in 0..10 {
            let words: Vec<&str> = (0..5).map(|_| filler[rng.index(filler.len())]).collect();
            examples.push(Example::new(format!("t{i}"), words.join(" "), "bb", 0).unwrap());
        }
        Split::new("bb", Role::Train, examples).unwrap()
    }

    fn tiny_hp(seed: u64) -> Hyperparams {
        Hyperparams {
            batch_size: 4,
            learning_rate: 1e-3,
            max_sequence_length: 12,
            epochs: 2,
            hidden_units: 8,
            threshold: 0.5,
            seed,
            pool_special_tokens: true,
        }
    }

    #[test]
    fn zero_weight_discriminator_outputs_half() {
        let mut disc = ParamSet::new();
        disc.register("disc.w1", Array2::zeros((4, 3)), true);
        disc.register("disc.b1", Array2::zeros((1, 3)), false);
        disc.register("disc.w2", Array2::zeros((3, 1)), true);
        disc.register("disc.b2", Array2::zeros((1, 1)), false);
        let p = discriminator_forward(&[0.1, -0.2, 0.7, 0.4], &disc).unwrap();
        assert_eq!(p, 0.5);
    }

    #[test]
    fn discriminator_matches_sigmoid_closed_form() {
        // Rig weights so the logit is exactly ln 3 → p = 0.75.
        let mut disc = ParamSet::new();
        disc.register("disc.w1", Array2::ones((1, 1)), true);
        disc.register("disc.b1", Array2::zeros((1, 1)), false);
        disc.register("disc.w2", Array2::from_elem((1, 1), 3.0f64.ln()), true);
        disc.register("disc.b2", Array2::zeros((1, 1)), false);
        let p = discriminator_forward(&[1.0], &disc).unwrap();
        assert!((p - 0.75).abs() < 1e-12);
    }

    #[test]
    fn discriminator_output_stays_in_unit_interval() {
        let mut rng = DetRng::new(5);
        let disc = init_discriminator_params(6, 4, &mut rng);
        for trial in 0..25 {
            let pooled: Vec<f64> = (0..6).map(|i| ((trial * 6 + i) as f64).cos() * 5.0).collect();
            let p = discriminator_forward(&pooled, &disc).unwrap();
            assert!(p > 0.0 && p < 1.0);
        }
    }

    #[test]
    fn sample_unlabeled_strips_labels_and_is_deterministic() {
        let split = source_split();
        let all = sample_unlabeled_target(&split, split.len(), 9).unwrap();
        assert_eq!(all.len(), split.len());
        assert!(all.iter().all(|e| e.label == LABEL_UNLABELED));
        let again = sample_unlabeled_target(&split, split.len(), 9).unwrap();
        assert_eq!(all, again);
        assert!(sample_unlabeled_target(&split, 0, 9).is_err());
        assert!(sample_unlabeled_target(&split, split.len() + 1, 9).is_err());
    }

    #[test]
    fn lambda_zero_alternating_matches_plain_supervised() {
        let source = source_split();
        let target = sample_unlabeled_target(&target_split(), 8, 3).unwrap();
        let backend = ReferenceEncoder::v1();
        let hp = tiny_hp(17);
        let adv = AdvConfig { adversarial_weight: 0.0, discriminator_hidden: 8, ..Default::default() };

        let plain = train_supervised(&source, &backend, &hp, "zs").unwrap();
        let advd = train_adversarial(&source, &target, &backend, &hp, &adv, "zs-adv").unwrap();

        // Encoder and head end up identical, so predictions match.
        assert!(plain
            .encoder_params()
            .unwrap()
            .bitwise_eq(&advd.encoder_params().unwrap()));
        assert!(plain.head_params().unwrap().bitwise_eq(&advd.head_params().unwrap()));
        let registry = BackendRegistry::with_builtins();
        let test = target_split();
        let a = predict(&plain, &test.examples, &registry).unwrap();
        let b = predict(&advd, &test.examples, &registry).unwrap();
        assert_eq!(a, b);
        // Loss trajectories agree too (task term only).
        let plain_losses: Vec<f64> = plain.training_log.iter().map(|r| r.loss).collect();
        let adv_losses: Vec<f64> = advd.training_log.iter().map(|r| r.loss).collect();
        assert_eq!(plain_losses, adv_losses);
    }

    #[test]
    fn alternating_discriminator_step_leaves_encoder_untouched() {
        // One batch, one epoch: snapshot encoder params, run training with
        // lambda set so generator step has zero task effect? Instead verify
        // the isolation property directly on the graphs: a detached
        // discriminator loss yields no encoder gradients, and the generator
        // combined loss yields no discriminator-parameter updates because
        // the optimizer never touches them.
        let backend = ReferenceEncoder::v1();
        let mut params = backend.trainable_parameters();
        let mut rng = DetRng::new(3);
        params.extend_from(&init_head_params(backend.hidden_dim(), 8, &mut rng));
        params.extend_from(&init_discriminator_params(backend.hidden_dim(), 8, &mut rng));
        let src = vec![backend.tokenize("alarm stone", 8).unwrap()];
        let tgt = vec![backend.tokenize("tashi vendo", 8).unwrap()];

        let mut tape = Tape::new();
        let leaves = params.insert_leaves(&mut tape);
        let loss = build_disc_loss(
            &mut tape, &leaves, &params, &backend, &src, &tgt, true, PooledMode::Detached,
        );
        let grads = tape.backward(loss);
        for id in params.ids() {
            let name = params.name(id);
            if name.starts_with("enc.") || name.starts_with("head.") {
                assert!(grads.get(id).is_none(), "unexpected gradient for {name}");
            }
        }
        for id in params.ids_with_prefix("disc.") {
            assert!(grads.get(id).is_some(), "missing gradient for {}", params.name(id));
        }
    }

    #[test]
    fn gradient_reversal_negates_adversarial_encoder_gradients() {
        let backend = ReferenceEncoder::v1();
        let mut params = backend.trainable_parameters();
        let mut rng = DetRng::new(7);
        params.extend_from(&init_head_params(backend.hidden_dim(), 8, &mut rng));
        params.extend_from(&init_discriminator_params(backend.hidden_dim(), 8, &mut rng));
        let src = vec![backend.tokenize("alarm stone river", 8).unwrap()];
        let tgt = vec![backend.tokenize("tashi vendo kilpar", 8).unwrap()];
        let lambda = 0.6;

        let reversed = adversarial_term_gradients(&backend, &params, &src, &tgt, true, lambda);
        // Plain discriminator-loss gradients, no reversal.
        let plain = {
            let mut tape = Tape::new();
            let leaves = params.insert_leaves(&mut tape);
            let loss = build_disc_loss(
                &mut tape, &leaves, &params, &backend, &src, &tgt, true, PooledMode::Flowing,
            );
            tape.backward(loss)
        };
        for id in params.ids_with_prefix("enc.") {
            match (reversed.get(id), plain.get(id)) {
                (Some(r), Some(p)) => {
                    for (a, b) in r.iter().zip(p.iter()) {
                        assert!((a - (-lambda) * b).abs() < 1e-12);
                    }
                }
                (None, None) => {}
                _ => panic!("gradient presence mismatch for {}", params.name(id)),
            }
        }
        // Discriminator parameters are NOT reversed.
        for id in params.ids_with_prefix("disc.") {
            let (r, p) = (reversed.get(id).unwrap(), plain.get(id).unwrap());
            for (a, b) in r.iter().zip(p.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn discriminator_learns_on_frozen_encoder() {
        // Frozen random encoder embeddings of two synthetic vocabularies
        // are linearly separable; the discriminator loss must fall.
        let source = source_split();
        let target = sample_unlabeled_target(&target_split(), 10, 1).unwrap();
        let backend = ReferenceEncoder::v1();
        let hp = tiny_hp(5);
        let src_inputs: Vec<TokenizedInput> = source
            .examples
            .iter()
            .map(|e| backend.tokenize(&e.text, 12).unwrap())
            .collect();
        let tgt_inputs: Vec<TokenizedInput> = target
            .iter()
            .map(|e| backend.tokenize(&e.text, 12).unwrap())
            .collect();

        let mut params = backend.trainable_parameters();
        let mut rng = DetRng::new(2);
        params.extend_from(&init_discriminator_params(backend.hidden_dim(), 16, &mut rng));
        let disc_ids = params.ids_with_prefix("disc.");
        let mut opt = AdamW::new(&params, disc_ids, 5e-3, 60);
        let initial = discriminator_loss(&backend, &params, &src_inputs, &tgt_inputs, true);
        for _ in 0..60 {
            let mut tape = Tape::new();
            let leaves = params.insert_leaves(&mut tape);
            let loss = build_disc_loss(
                &mut tape,
                &leaves,
                &params,
                &backend,
                &src_inputs,
                &tgt_inputs,
                true,
                PooledMode::Detached,
            );
            let grads = tape.backward(loss);
            opt.step(&mut params, &grads);
        }
        let final_loss = discriminator_loss(&backend, &params, &src_inputs, &tgt_inputs, true);
        assert!(
            final_loss < initial,
            "discriminator loss did not decrease: {initial} -> {final_loss}"
        );
        let _ = hp;
    }

    #[test]
    fn adversarial_training_produces_valid_checkpoint() {
        let source = source_split();
        let target = sample_unlabeled_target(&target_split(), 6, 3).unwrap();
        let backend = ReferenceEncoder::v1();
        let hp = tiny_hp(1);
        for schedule in [AdvSchedule::Alternating, AdvSchedule::GradientReversal] {
            let adv = AdvConfig { discriminator_hidden: 8, schedule, ..Default::default() };
            let ckpt = train_adversarial(&source, &target, &backend, &hp, &adv, "adv").unwrap();
            ckpt.validate().unwrap();
            assert_eq!(ckpt.lineage[0].stage, "adversarial");
            let unlabeled: Vec<_> = ckpt.audit.iter().filter(|a| !a.labeled).collect();
            assert_eq!(unlabeled.len(), 6);
            assert!(unlabeled.iter().all(|a| a.language == "bb"));
        }
    }

    #[test]
    fn empty_unlabeled_pool_is_rejected() {
        let source = source_split();
        let backend = ReferenceEncoder::v1();
        let err = train_adversarial(
            &source,
            &[],
            &backend,
            &tiny_hp(1),
            &AdvConfig::default(),
            "adv",
        )
        .unwrap_err();
        assert!(matches!(err, ClassifierError::InvalidHyperparams(_)));
    }
}
