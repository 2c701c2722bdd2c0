//! Manifest-driven experiment orchestration.
//!
//! A study is a list of [`ExperimentManifest`]s. Each manifest names a
//! transfer setup, a language pair (or source set), a backend, shared
//! hyperparameters, and the five training seeds of the evaluation
//! protocol. Running a manifest trains one model per seed, evaluates it on
//! the target test split, and aggregates positive-class F1. Stage-1
//! checkpoints are reused across manifests whose training prefix coincides
//! (the few-shot sweep re-reads its zero-shot parents from the cache), and
//! every checkpoint carries an id/language audit trail that the leakage
//! checks run against.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adversarial::{sample_unlabeled_target, train_adversarial, AdvConfig};
use crate::classifier::{
    continue_training, predict, train_supervised, AuditRecord, Checkpoint, ClassifierError,
    Hyperparams, Prediction, TrainLogRecord,
};
use crate::corpus::{
    build_multilingual_pool, sample_few_shots, CorpusError, Origin, Role, SamplingSpec, Split,
};
use crate::encoder::BackendRegistry;
use crate::metrics::{aggregate_seeds, f1_positive, paired_t_test, MetricsError, ScorePair};
use crate::translation::{translate_corpus, verify_alignment, TranslationCache, TranslationError, TranslationProvider};

/// Default five-seed protocol shared by all manifests.
pub const DEFAULT_SEEDS: [u64; 5] = [13, 42, 71, 104, 229];
/// Default study-wide few-shot sampling seed.
pub const DEFAULT_SHOT_SEED: u64 = 1213;

/// The transfer setups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setup {
    /// Train on source, evaluate directly on target.
    Zs,
    /// Train on the source training set translated into the target language.
    ZsTrSrc,
    /// Train on source, evaluate on the target test set translated into the
    /// source language.
    ZsTrTrg,
    /// Zero-shot stage followed by continued fine-tuning on k target shots.
    Fs,
    /// Zero-shot with the adversarial language discriminator.
    ZsAdv,
    /// Pooled multilingual training excluding the target.
    MultiZs,
    /// Train and test on the target language (the grid diagonal).
    MonoBaseline,
}

impl std::fmt::Display for Setup {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Setup::Zs => "zs",
            Setup::ZsTrSrc => "zs_tr_src",
            Setup::ZsTrTrg => "zs_tr_trg",
            Setup::Fs => "fs",
            Setup::ZsAdv => "zs_adv",
            Setup::MultiZs => "multi_zs",
            Setup::MonoBaseline => "mono_baseline",
        };
        write!(f, "{s}")
    }
}

/// Sizing rule for multilingual pools.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolMode {
    /// The pool totals `sampling.total()` examples across all sources.
    #[default]
    FixedTotal,
    /// Every source contributes `sampling.total()` examples.
    PerLanguage,
}

/// Declarative description of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub id: String,
    pub setup: Setup,
    pub source_languages: Vec<String>,
    pub target_language: String,
    pub backend_name: String,
    #[serde(default)]
    pub hyperparams: Hyperparams,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Permits a seed list that is not exactly five entries long.
    #[serde(default)]
    pub allow_seed_override: bool,
    #[serde(default)]
    pub few_shot_k: Option<usize>,
    /// Study-wide few-shot sampling seed, fixed across languages.
    #[serde(default = "default_shot_seed")]
    pub shot_seed: u64,
    /// Odd k puts the extra shot in the positive class instead of the
    /// negative one.
    #[serde(default)]
    pub positive_majority_shots: bool,
    #[serde(default)]
    pub adv: Option<AdvConfig>,
    pub sampling: SamplingSpec,
    #[serde(default)]
    pub pool_mode: PoolMode,
    /// Permits a single-source multilingual manifest (incremental sweeps).
    #[serde(default)]
    pub allow_single_source: bool,
}

fn default_seeds() -> Vec<u64> {
    DEFAULT_SEEDS.to_vec()
}

fn default_shot_seed() -> u64 {
    DEFAULT_SHOT_SEED
}

impl ExperimentManifest {
    /// Whether this manifest is a baseline (train and test on the target).
    pub fn is_baseline(&self) -> bool {
        match self.setup {
            Setup::MonoBaseline => true,
            Setup::Zs | Setup::ZsTrSrc | Setup::ZsTrTrg => {
                self.source_languages.as_slice() == [self.target_language.clone()]
            }
            _ => false,
        }
    }

    /// Single source language of a non-multilingual manifest.
    pub fn single_source(&self) -> &str {
        &self.source_languages[0]
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let fail = |msg: String| Err(ExperimentError::InvalidManifest { id: self.id.clone(), message: msg });
        if self.id.trim().is_empty() {
            return fail("manifest id must be non-empty".into());
        }
        self.hyperparams.validate().map_err(|e| ExperimentError::InvalidManifest {
            id: self.id.clone(),
            message: e.to_string(),
        })?;
        if self.seeds.is_empty() {
            return fail("seeds must be non-empty".into());
        }
        if self.seeds.len() != 5 && !self.allow_seed_override {
            return fail(format!(
                "the protocol uses exactly 5 seeds, got {} (set allow_seed_override to bypass)",
                self.seeds.len()
            ));
        }
        match self.setup {
            Setup::MultiZs => {
                let min = if self.allow_single_source { 1 } else { 2 };
                if self.source_languages.len() < min {
                    return fail(format!(
                        "multi_zs needs at least {min} source languages, got {}",
                        self.source_languages.len()
                    ));
                }
                if self.source_languages.iter().any(|s| s == &self.target_language) {
                    return fail("multi_zs sources must exclude the target language".into());
                }
            }
            Setup::MonoBaseline => {
                if self.source_languages.as_slice() != [self.target_language.clone()] {
                    return fail("mono_baseline sources must equal [target_language]".into());
                }
            }
            _ => {
                if self.source_languages.len() != 1 {
                    return fail(format!(
                        "setup {} takes exactly one source language, got {}",
                        self.setup,
                        self.source_languages.len()
                    ));
                }
            }
        }
        if self.setup == Setup::Fs {
            match self.few_shot_k {
                None | Some(0) => return fail("fs requires few_shot_k >= 1".into()),
                Some(_) => {}
            }
        }
        if self.setup == Setup::ZsAdv {
            match &self.adv {
                None => return fail("zs_adv requires an adv configuration".into()),
                Some(adv) => adv.validate().map_err(|e| ExperimentError::InvalidManifest {
                    id: self.id.clone(),
                    message: e.to_string(),
                })?,
            }
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("manifest {id}: {message}")]
    InvalidManifest { id: String, message: String },
    #[error("missing {role} split for language {language}")]
    MissingSplit { language: String, role: Role },
    #[error("manifest {id} needs a translation provider and cache")]
    MissingProvider { id: String },
    #[error("translated test set is misaligned with the original: {0:?}")]
    Misaligned(Vec<String>),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Translation(#[from] TranslationError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

/// One seed's outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub predictions: Vec<Prediction>,
    pub f1_positive: f64,
    /// Copied from the seed's checkpoint; basis of the leakage audit.
    pub audit: Vec<AuditRecord>,
    /// Final-stage optimizer steps, copied from the seed's checkpoint.
    #[serde(default)]
    pub training_log: Vec<TrainLogRecord>,
}

/// Paired-t-test comparison against another manifest's result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub other_manifest_id: String,
    pub p_value: f64,
    pub significant: bool,
}

/// Aggregated result of one manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub manifest: ExperimentManifest,
    pub per_seed: Vec<SeedRun>,
    pub mean_f1: f64,
    pub comparisons: Vec<Comparison>,
    pub baseline: bool,
}

impl RunResult {
    pub fn manifest_id(&self) -> &str {
        &self.manifest.id
    }

    pub fn seed_f1s(&self) -> Vec<f64> {
        self.per_seed.iter().map(|s| s.f1_positive).collect()
    }

    pub fn save(&self, path: &Path) -> Result<(), ExperimentError> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let file = std::fs::File::open(path)?;
        Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
    }
}

/// Prepared splits keyed by (language, role).
#[derive(Debug, Default, Clone)]
pub struct SplitStore {
    map: HashMap<(String, Role), Split>,
}

impl SplitStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, split: Split) {
        self.map.insert((split.language.clone(), split.role), split);
    }

    pub fn get(&self, language: &str, role: Role) -> Result<&Split, ExperimentError> {
        self.map.get(&(language.to_string(), role)).ok_or_else(|| ExperimentError::MissingSplit {
            language: language.to_string(),
            role,
        })
    }

    pub fn train(&self, language: &str) -> Result<&Split, ExperimentError> {
        self.get(language, Role::Train)
    }

    pub fn test(&self, language: &str) -> Result<&Split, ExperimentError> {
        self.get(language, Role::Test)
    }

    pub fn languages(&self) -> Vec<String> {
        let mut langs: Vec<String> = self.map.keys().map(|(l, _)| l.clone()).collect();
        langs.sort();
        langs.dedup();
        langs
    }
}

/// Keyed single-computation checkpoint cache with reuse counters.
///
/// One writer per key: the first caller computes under the slot lock while
/// later callers block on it and then read the finished checkpoint.
type CacheSlot = Arc<Mutex<Option<Arc<Checkpoint>>>>;

#[derive(Default)]
pub struct CheckpointCache {
    slots: Mutex<HashMap<String, CacheSlot>>,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

impl CheckpointCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }

    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::SeqCst)
    }

    pub fn get_or_compute(
        &self,
        key: String,
        compute: impl FnOnce() -> Result<Checkpoint, ExperimentError>,
    ) -> Result<Arc<Checkpoint>, ExperimentError> {
        let slot = {
            let mut slots = self.slots.lock().expect("cache slots lock");
            slots.entry(key).or_default().clone()
        };
        let mut guard = slot.lock().expect("cache slot lock");
        if let Some(ckpt) = guard.as_ref() {
            self.hits.fetch_add(1, Ordering::SeqCst);
            return Ok(ckpt.clone());
        }
        self.misses.fetch_add(1, Ordering::SeqCst);
        let ckpt = Arc::new(compute()?);
        *guard = Some(ckpt.clone());
        Ok(ckpt)
    }
}

/// Everything a study needs at run time.
pub struct StudyEnv {
    pub splits: SplitStore,
    pub registry: BackendRegistry,
    pub provider: Option<Arc<dyn TranslationProvider>>,
    pub translation_cache: Option<Arc<TranslationCache>>,
    pub checkpoint_cache: CheckpointCache,
}

impl StudyEnv {
    pub fn new(splits: SplitStore, registry: BackendRegistry) -> Self {
        Self {
            splits,
            registry,
            provider: None,
            translation_cache: None,
            checkpoint_cache: CheckpointCache::new(),
        }
    }

    pub fn with_translation(
        mut self,
        provider: Arc<dyn TranslationProvider>,
        cache: Arc<TranslationCache>,
    ) -> Self {
        self.provider = Some(provider);
        self.translation_cache = Some(cache);
        self
    }

    fn translation(
        &self,
        manifest_id: &str,
    ) -> Result<(&dyn TranslationProvider, &TranslationCache), ExperimentError> {
        match (&self.provider, &self.translation_cache) {
            (Some(p), Some(c)) => Ok((p.as_ref(), c.as_ref())),
            _ => Err(ExperimentError::MissingProvider { id: manifest_id.to_string() }),
        }
    }
}

/// Cache key for a supervised training stage.
fn stage_key(prefix: &str, data_fingerprint: &str, backend: &str, hp: &Hyperparams) -> String {
    let hp_json = serde_json::to_string(hp).expect("hyperparams serialize");
    let mut h = Sha256::new();
    for part in [prefix, data_fingerprint, backend, &hp_json] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    format!("{:x}", h.finalize())
}

/// Trains one supervised checkpoint per seed over a fixed split, going
/// through the stage cache, then scores each on `test`.
fn per_seed_supervised(
    m: &ExperimentManifest,
    env: &StudyEnv,
    stage_prefix: &str,
    train: &Split,
    test: &Split,
) -> Result<Vec<SeedRun>, ExperimentError> {
    let backend = env.registry.load(&m.backend_name).map_err(ClassifierError::from)?;
    let fingerprint = train.fingerprint();
    let mut runs = Vec::with_capacity(m.seeds.len());
    for &seed in &m.seeds {
        let hp = m.hyperparams.with_seed(seed);
        let key = stage_key(stage_prefix, &fingerprint, &m.backend_name, &hp);
        let ckpt = env.checkpoint_cache.get_or_compute(key, || {
            Ok(train_supervised(train, backend.as_ref(), &hp, &m.id)?)
        })?;
        runs.push(score_checkpoint(&ckpt, seed, test, env)?);
    }
    Ok(runs)
}

fn score_checkpoint(
    ckpt: &Checkpoint,
    seed: u64,
    test: &Split,
    env: &StudyEnv,
) -> Result<SeedRun, ExperimentError> {
    score_checkpoint_against(ckpt, seed, test, test, env)
}

/// Predicts on `eval_split` but scores against `gold_split` labels
/// (identical id order is the caller's concern; ZS-TrTrg verifies it).
fn score_checkpoint_against(
    ckpt: &Checkpoint,
    seed: u64,
    eval_split: &Split,
    gold_split: &Split,
    env: &StudyEnv,
) -> Result<SeedRun, ExperimentError> {
    let predictions = predict(ckpt, &eval_split.examples, &env.registry)?;
    let predicted: Vec<u8> = predictions.iter().map(|p| p.label).collect();
    let gold: Vec<u8> = gold_split.examples.iter().map(|e| e.label).collect();
    let f1 = f1_positive(&predicted, &gold)?;
    Ok(SeedRun {
        seed,
        predictions,
        f1_positive: f1,
        audit: ckpt.audit.clone(),
        training_log: ckpt.training_log.clone(),
    })
}

fn assemble(m: &ExperimentManifest, per_seed: Vec<SeedRun>) -> Result<RunResult, ExperimentError> {
    let mean_f1 = aggregate_seeds(&per_seed.iter().map(|s| s.f1_positive).collect::<Vec<_>>())?;
    Ok(RunResult {
        manifest: m.clone(),
        per_seed,
        mean_f1,
        comparisons: Vec::new(),
        baseline: m.is_baseline(),
    })
}

/// Zero-shot transfer: train on the source training split, evaluate on the
/// target test split. With source == target this is the monolingual
/// baseline (the grid diagonal).
pub fn run_zero_shot(m: &ExperimentManifest, env: &StudyEnv) -> Result<RunResult, ExperimentError> {
    let train = env.splits.train(m.single_source())?;
    let test = env.splits.test(&m.target_language)?;
    let per_seed = per_seed_supervised(m, env, "supervised", train, test)?;
    assemble(m, per_seed)
}

/// Zero-shot with source translation: the source training split is
/// translated into the target language before fine-tuning. When source
/// equals target no translation happens and this is the baseline path.
pub fn run_zs_tr_src(m: &ExperimentManifest, env: &StudyEnv) -> Result<RunResult, ExperimentError> {
    let source = m.single_source();
    if source == m.target_language {
        return run_zero_shot(m, env);
    }
    let (provider, cache) = env.translation(&m.id)?;
    let train = env.splits.train(source)?;
    let translated = translate_corpus(train, &m.target_language, provider, cache)?;
    let test = env.splits.test(&m.target_language)?;
    let per_seed = per_seed_supervised(m, env, "supervised", &translated, test)?;
    assemble(m, per_seed)
}

/// Zero-shot with target translation: the model trains on the original
/// source split and is evaluated on the target test set translated into
/// the source language. Predictions are joined back to the original test
/// ids and labels after an alignment check.
pub fn run_zs_tr_trg(m: &ExperimentManifest, env: &StudyEnv) -> Result<RunResult, ExperimentError> {
    let source = m.single_source();
    if source == m.target_language {
        return run_zero_shot(m, env);
    }
    let (provider, cache) = env.translation(&m.id)?;
    let train = env.splits.train(source)?;
    let test = env.splits.test(&m.target_language)?;
    let translated_test = translate_corpus(test, source, provider, cache)?;
    let report = verify_alignment(test, &translated_test);
    if !report.aligned {
        return Err(ExperimentError::Misaligned(report.mismatches));
    }

    let backend = env.registry.load(&m.backend_name).map_err(ClassifierError::from)?;
    let fingerprint = train.fingerprint();
    let mut per_seed = Vec::with_capacity(m.seeds.len());
    for &seed in &m.seeds {
        let hp = m.hyperparams.with_seed(seed);
        let key = stage_key("supervised", &fingerprint, &m.backend_name, &hp);
        let ckpt = env.checkpoint_cache.get_or_compute(key, || {
            Ok(train_supervised(train, backend.as_ref(), &hp, &m.id)?)
        })?;
        per_seed.push(score_checkpoint_against(&ckpt, seed, &translated_test, test, env)?);
    }
    assemble(m, per_seed)
}

/// Few-shot transfer: the zero-shot stage per seed, then continued
/// fine-tuning on `few_shot_k` class-balanced target-language shots drawn
/// once per study with the fixed shot seed.
pub fn run_few_shot(m: &ExperimentManifest, env: &StudyEnv) -> Result<RunResult, ExperimentError> {
    let k = m.few_shot_k.expect("validated: fs has k");
    let source_train = env.splits.train(m.single_source())?;
    let target_train = env.splits.train(&m.target_language)?;
    let test = env.splits.test(&m.target_language)?;
    let shots = sample_few_shots(target_train, k, m.shot_seed, m.positive_majority_shots)?;

    let backend = env.registry.load(&m.backend_name).map_err(ClassifierError::from)?;
    let fingerprint = source_train.fingerprint();
    let mut per_seed = Vec::with_capacity(m.seeds.len());
    for &seed in &m.seeds {
        let hp = m.hyperparams.with_seed(seed);
        let key = stage_key("supervised", &fingerprint, &m.backend_name, &hp);
        let stage1 = env.checkpoint_cache.get_or_compute(key, || {
            Ok(train_supervised(source_train, backend.as_ref(), &hp, &m.id)?)
        })?;
        let stage2 = continue_training(&stage1, &shots, &hp, &env.registry, &m.id)?;
        per_seed.push(score_checkpoint(&stage2, seed, test, env)?);
    }
    assemble(m, per_seed)
}

/// Multilingual zero-shot: trains on an equally-represented pool of the
/// source languages. A single-source manifest degenerates to plain
/// zero-shot on that source.
pub fn run_multilingual(m: &ExperimentManifest, env: &StudyEnv) -> Result<RunResult, ExperimentError> {
    if m.source_languages.len() == 1 {
        return run_zero_shot(m, env);
    }
    let n = m.source_languages.len();
    let (total, total_positive) = match m.pool_mode {
        PoolMode::FixedTotal => (m.sampling.total(), m.sampling.n_positive),
        PoolMode::PerLanguage => (m.sampling.total() * n, m.sampling.n_positive * n),
    };
    let sources: Vec<&Split> = m
        .source_languages
        .iter()
        .map(|lang| env.splits.train(lang))
        .collect::<Result<_, _>>()?;
    let pool = build_multilingual_pool(&sources, total, total_positive, m.sampling.seed)?;
    let test = env.splits.test(&m.target_language)?;
    let per_seed = per_seed_supervised(m, env, "supervised-pool", &pool, test)?;
    assemble(m, per_seed)
}

/// Adversarial zero-shot: combined task + discriminator objective with
/// unlabeled target examples drawn from the target training split.
pub fn run_zs_adv(m: &ExperimentManifest, env: &StudyEnv) -> Result<RunResult, ExperimentError> {
    let adv = m.adv.clone().expect("validated: zs_adv has adv");
    let source_train = env.splits.train(m.single_source())?;
    let target_train = env.splits.train(&m.target_language)?;
    let test = env.splits.test(&m.target_language)?;
    // The default pool size tracks the source split but never exceeds the
    // target split; an explicit size is taken literally and a capacity
    // error surfaces if it does not fit.
    let n_unlabeled = match adv.unlabeled_target_size {
        Some(n) => n,
        None => source_train.len().min(target_train.len()).max(1),
    };
    let unlabeled = sample_unlabeled_target(target_train, n_unlabeled, m.sampling.seed)?;

    let backend = env.registry.load(&m.backend_name).map_err(ClassifierError::from)?;
    let mut per_seed = Vec::with_capacity(m.seeds.len());
    for &seed in &m.seeds {
        let hp = m.hyperparams.with_seed(seed);
        let ckpt =
            train_adversarial(source_train, &unlabeled, backend.as_ref(), &hp, &adv, &m.id)?;
        per_seed.push(score_checkpoint(&ckpt, seed, test, env)?);
    }
    assemble(m, per_seed)
}

/// Dispatches a validated manifest to its setup runner.
pub fn run_manifest(m: &ExperimentManifest, env: &StudyEnv) -> Result<RunResult, ExperimentError> {
    m.validate()?;
    match m.setup {
        Setup::Zs | Setup::MonoBaseline => run_zero_shot(m, env),
        Setup::ZsTrSrc => run_zs_tr_src(m, env),
        Setup::ZsTrTrg => run_zs_tr_trg(m, env),
        Setup::Fs => run_few_shot(m, env),
        Setup::ZsAdv => run_zs_adv(m, env),
        Setup::MultiZs => run_multilingual(m, env),
    }
}

/// A failed manifest within a study.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestFailure {
    pub manifest_id: String,
    pub error: String,
}

/// Outcome of a whole study.
#[derive(Debug, Default, Serialize, Deserialize)]
pub struct StudyReport {
    pub results: Vec<RunResult>,
    pub failures: Vec<ManifestFailure>,
}

/// Runs every manifest (dispatching to at most `workers` threads), then
/// fills in paired-t-test comparisons of every result against each
/// baseline result sharing its target language and backend. Child errors
/// are recorded per manifest; the study continues.
pub fn run_study(
    manifests: &[ExperimentManifest],
    env: &StudyEnv,
    workers: usize,
) -> StudyReport {
    let workers = workers.clamp(1, manifests.len().max(1));
    let outcomes: Vec<Option<Result<RunResult, ExperimentError>>> = {
        let slots: Vec<Mutex<Option<Result<RunResult, ExperimentError>>>> =
            manifests.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= manifests.len() {
                        break;
                    }
                    let outcome = run_manifest(&manifests[i], env);
                    *slots[i].lock().expect("result slot") = Some(outcome);
                });
            }
        });
        slots.into_iter().map(|s| s.into_inner().expect("slot")).collect()
    };

    let mut report = StudyReport::default();
    for (m, outcome) in manifests.iter().zip(outcomes) {
        match outcome.expect("every manifest ran") {
            Ok(result) => report.results.push(result),
            Err(e) => report.failures.push(ManifestFailure {
                manifest_id: m.id.clone(),
                error: e.to_string(),
            }),
        }
    }
    fill_comparisons(&mut report.results);
    report
}

/// Adds baseline comparisons (same target, same backend, equal seed count).
pub fn fill_comparisons(results: &mut [RunResult]) {
    let baselines: Vec<(String, String, String, Vec<f64>)> = results
        .iter()
        .filter(|r| r.baseline)
        .map(|r| {
            (
                r.manifest.id.clone(),
                r.manifest.target_language.clone(),
                r.manifest.backend_name.clone(),
                r.seed_f1s(),
            )
        })
        .collect();
    for result in results.iter_mut() {
        if result.baseline {
            continue;
        }
        let own = result.seed_f1s();
        for (id, target, backend, base_f1s) in &baselines {
            if target != &result.manifest.target_language
                || backend != &result.manifest.backend_name
                || base_f1s.len() != own.len()
            {
                continue;
            }
            if let Ok(pair) = ScorePair::new(own.clone(), base_f1s.clone()) {
                if let Ok(test) = paired_t_test(&pair) {
                    result.comparisons.push(Comparison {
                        other_manifest_id: id.clone(),
                        p_value: test.p_value,
                        significant: test.significant(),
                    });
                }
            }
        }
    }
}

/// Leakage findings for one run result.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct LeakageReport {
    pub violations: Vec<String>,
}

impl LeakageReport {
    pub fn clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Audits a result's training-id trail against the target test split.
///
/// For every setup, training ids must be disjoint from test ids. Setups
/// other than FS and ZS-Adv must see no original-target-language training
/// example at all; FS must see exactly k of them (the shots); ZS-Adv may
/// see them only as unlabeled examples.
pub fn audit_leakage(result: &RunResult, test: &Split) -> LeakageReport {
    let mut report = LeakageReport::default();
    let test_ids: std::collections::HashSet<&str> =
        test.examples.iter().map(|e| e.id.as_str()).collect();
    let target = &result.manifest.target_language;
    for seed_run in &result.per_seed {
        for rec in &seed_run.audit {
            if test_ids.contains(rec.id.as_str()) {
                report.violations.push(format!(
                    "seed {}: training example {} is in the target test set",
                    seed_run.seed, rec.id
                ));
            }
        }
        let target_originals: Vec<&AuditRecord> = seed_run
            .audit
            .iter()
            .filter(|r| &r.language == target && r.origin == Origin::Original)
            .collect();
        match result.manifest.setup {
            Setup::Fs => {
                let k = result.manifest.few_shot_k.unwrap_or(0);
                if target_originals.len() != k {
                    report.violations.push(format!(
                        "seed {}: expected exactly {k} original target-language shots, found {}",
                        seed_run.seed,
                        target_originals.len()
                    ));
                }
            }
            Setup::ZsAdv => {
                let labeled: Vec<_> = target_originals.iter().filter(|r| r.labeled).collect();
                if !labeled.is_empty() {
                    report.violations.push(format!(
                        "seed {}: {} labeled original target-language examples in adversarial training",
                        seed_run.seed,
                        labeled.len()
                    ));
                }
            }
            Setup::MonoBaseline => {}
            _ if result.baseline => {}
            _ => {
                if !target_originals.is_empty() {
                    report.violations.push(format!(
                        "seed {}: {} original target-language examples leaked into training",
                        seed_run.seed,
                        target_originals.len()
                    ));
                }
            }
        }
    }
    report
}

/// Expands a few-shot manifest into one manifest per k value, ids suffixed
/// `-k{k}`.
pub fn expand_k_grid(base: &ExperimentManifest, ks: &[usize]) -> Vec<ExperimentManifest> {
    ks.iter()
        .map(|&k| {
            let mut m = base.clone();
            m.id = format!("{}-k{k}", base.id);
            m.few_shot_k = Some(k);
            m
        })
        .collect()
}

/// Expands a multilingual manifest into one manifest per non-empty subset
/// of its sources, for the incremental source-language study. Ids are
/// suffixed `-n{size}-{languages}`.
pub fn expand_incremental_sources(base: &ExperimentManifest) -> Vec<ExperimentManifest> {
    let sources = &base.source_languages;
    let mut out = Vec::new();
    let n = sources.len();
    for bits in 1u32..(1 << n) {
        let subset: Vec<String> = (0..n)
            .filter(|i| bits & (1 << i) != 0)
            .map(|i| sources[i].clone())
            .collect();
        let mut m = base.clone();
        m.id = format!("{}-n{}-{}", base.id, subset.len(), subset.join("+"));
        m.source_languages = subset;
        m.allow_single_source = true;
        out.push(m);
    }
    out.sort_by(|a, b| {
        (a.source_languages.len(), a.id.clone()).cmp(&(b.source_languages.len(), b.id.clone()))
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    fn tiny_hp(epochs: usize) -> Hyperparams {
        Hyperparams {
            batch_size: 8,
            learning_rate: 2e-3,
            max_sequence_length: 20,
            epochs,
            hidden_units: 16,
            threshold: 0.5,
            seed: 0,
            pool_special_tokens: true,
        }
    }

    fn base_manifest(id: &str, setup: Setup, source: &str, target: &str) -> ExperimentManifest {
        ExperimentManifest {
            id: id.into(),
            setup,
            source_languages: vec![source.into()],
            target_language: target.into(),
            backend_name: "reference-v1".into(),
            hyperparams: tiny_hp(1),
            seeds: vec![1, 2],
            allow_seed_override: true,
            few_shot_k: None,
            shot_seed: DEFAULT_SHOT_SEED,
            positive_majority_shots: false,
            adv: None,
            sampling: SamplingSpec { n_positive: 20, n_negative: 20, seed: 3 },
            pool_mode: PoolMode::FixedTotal,
            allow_single_source: false,
        }
    }

    fn synthetic_env() -> StudyEnv {
        let pair = synth::build_pair(24, 4, 42);
        let mut splits = SplitStore::new();
        for lang in [&pair.lang_a, &pair.lang_b] {
            splits.insert(synth::generate_split(lang, Role::Train, 20, 20, 7).unwrap());
            splits.insert(synth::generate_split(lang, Role::Test, 10, 10, 8).unwrap());
        }
        let cache_dir = std::env::temp_dir().join(format!(
            "crosscheck-test-cache-{}-{:?}",
            std::process::id(),
            std::thread::current().id()
        ));
        std::fs::create_dir_all(&cache_dir).unwrap();
        let cache = TranslationCache::open(&cache_dir.join("cache.jsonl")).unwrap();
        StudyEnv::new(splits, BackendRegistry::with_builtins())
            .with_translation(Arc::new(pair.dictionary_provider()), Arc::new(cache))
    }

    #[test]
    fn manifest_validation_rules() {
        let mut m = base_manifest("a", Setup::Zs, "aa", "bb");
        m.allow_seed_override = false;
        assert!(m.validate().is_err()); // 2 seeds without override
        m.seeds = vec![1, 2, 3, 4, 5];
        m.validate().unwrap();

        m.setup = Setup::Fs;
        assert!(m.validate().is_err()); // missing k
        m.few_shot_k = Some(0);
        assert!(m.validate().is_err());
        m.few_shot_k = Some(4);
        m.validate().unwrap();

        let mut adv = base_manifest("b", Setup::ZsAdv, "aa", "bb");
        adv.seeds = vec![1, 2, 3, 4, 5];
        adv.allow_seed_override = false;
        assert!(adv.validate().is_err()); // missing adv config
        adv.adv = Some(AdvConfig::default());
        adv.validate().unwrap();

        let mut multi = base_manifest("c", Setup::MultiZs, "aa", "bb");
        multi.seeds = vec![1, 2, 3, 4, 5];
        assert!(multi.validate().is_err()); // one source
        multi.source_languages = vec!["aa".into(), "bb".into()];
        assert!(multi.validate().is_err()); // includes target
        multi.source_languages = vec!["aa".into(), "cc".into()];
        multi.validate().unwrap();

        let mut mono = base_manifest("d", Setup::MonoBaseline, "bb", "bb");
        mono.validate().unwrap();
        mono.source_languages = vec!["aa".into()];
        assert!(mono.validate().is_err());
    }

    #[test]
    fn zero_shot_diagonal_is_tagged_baseline() {
        let env = synthetic_env();
        let m = base_manifest("diag", Setup::Zs, "aa", "aa");
        let result = run_manifest(&m, &env).unwrap();
        assert!(result.baseline);
        assert_eq!(result.per_seed.len(), 2);
        let mean: f64 = result.seed_f1s().iter().sum::<f64>() / 2.0;
        assert!((result.mean_f1 - mean).abs() < 1e-12);
    }

    #[test]
    fn zs_tr_src_with_identity_pair_equals_zero_shot() {
        let env = synthetic_env();
        let zs = run_manifest(&base_manifest("zs", Setup::Zs, "aa", "aa"), &env).unwrap();
        let tr = run_manifest(&base_manifest("tr", Setup::ZsTrSrc, "aa", "aa"), &env).unwrap();
        assert_eq!(zs.mean_f1, tr.mean_f1);
        assert_eq!(zs.per_seed[0].predictions, tr.per_seed[0].predictions);
    }

    #[test]
    fn few_shot_reuses_stage_one_and_records_lineage() {
        let env = synthetic_env();
        let zs = base_manifest("zs-ab", Setup::Zs, "aa", "bb");
        let mut fs = base_manifest("fs-ab", Setup::Fs, "aa", "bb");
        fs.few_shot_k = Some(4);
        let report = run_study(&[zs, fs], &env, 1);
        assert!(report.failures.is_empty(), "{:?}", report.failures);
        // 2 seeds: ZS trains 2 (misses), FS reuses both (hits).
        assert_eq!(env.checkpoint_cache.misses(), 2);
        assert_eq!(env.checkpoint_cache.hits(), 2);
        let fs_result = &report.results[1];
        // Stage-2 training set size is exactly k per seed: k original
        // target-language audit records on top of the source ones.
        let audit = &fs_result.per_seed[0].audit;
        let shots: Vec<_> = audit.iter().filter(|r| r.stage.starts_with("few_shot")).collect();
        assert_eq!(shots.len(), 4);
        assert!(audit_leakage(fs_result, env.splits.test("bb").unwrap()).clean());
    }

    #[test]
    fn zs_tr_trg_scores_against_original_gold() {
        let env = synthetic_env();
        let m = base_manifest("trg", Setup::ZsTrTrg, "aa", "bb");
        let result = run_manifest(&m, &env).unwrap();
        let test = env.splits.test("bb").unwrap();
        // Predictions line up with the original test ids in order, and the
        // score recomputes from the original gold labels.
        let seed_run = &result.per_seed[0];
        let ids: Vec<&str> = seed_run.predictions.iter().map(|p| p.id.as_str()).collect();
        let expected: Vec<&str> = test.examples.iter().map(|e| e.id.as_str()).collect();
        assert_eq!(ids, expected);
        let preds: Vec<u8> = seed_run.predictions.iter().map(|p| p.label).collect();
        let gold: Vec<u8> = test.examples.iter().map(|e| e.label).collect();
        let expected_f1 = crate::metrics::f1_positive(&preds, &gold).unwrap();
        assert_eq!(seed_run.f1_positive, expected_f1);
    }

    #[test]
    fn misaligned_translation_is_an_abort_error() {
        // The runner's guard is verify_alignment + Misaligned; exercise the
        // same construction on a doctored translation.
        let env = synthetic_env();
        let test = env.splits.test("bb").unwrap();
        let mut broken = test.clone();
        broken.examples.remove(0);
        let report = crate::translation::verify_alignment(test, &broken);
        assert!(!report.aligned);
        let err = ExperimentError::Misaligned(report.mismatches);
        assert!(err.to_string().contains("misaligned"), "{err}");
    }

    #[test]
    fn multilingual_single_source_delegates_to_zero_shot() {
        let env = synthetic_env();
        let mut m = base_manifest("m1", Setup::MultiZs, "aa", "bb");
        m.allow_single_source = true;
        let multi = run_manifest(&m, &env).unwrap();
        let zs = run_manifest(&base_manifest("z1", Setup::Zs, "aa", "bb"), &env).unwrap();
        assert_eq!(multi.mean_f1, zs.mean_f1);
        assert_eq!(multi.per_seed[0].predictions, zs.per_seed[0].predictions);
    }

    #[test]
    fn explicit_oversize_unlabeled_pool_is_a_capacity_error() {
        let env = synthetic_env();
        let mut m = base_manifest("adv-big", Setup::ZsAdv, "aa", "bb");
        m.hyperparams.epochs = 0;
        m.adv = Some(AdvConfig {
            unlabeled_target_size: Some(10_000),
            discriminator_hidden: 8,
            ..Default::default()
        });
        match run_manifest(&m, &env).unwrap_err() {
            ExperimentError::Corpus(CorpusError::Capacity { requested, .. }) => {
                assert_eq!(requested, 10_000);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn study_records_failures_and_continues() {
        let env = synthetic_env();
        let good = base_manifest("ok", Setup::Zs, "aa", "bb");
        let missing = base_manifest("missing-lang", Setup::Zs, "zz", "bb");
        let bad_manifest = {
            let mut m = base_manifest("bad", Setup::Fs, "aa", "bb");
            m.few_shot_k = None;
            m
        };
        let report = run_study(&[good, missing, bad_manifest], &env, 2);
        assert_eq!(report.results.len(), 1);
        assert_eq!(report.failures.len(), 2);
        assert!(report.failures.iter().any(|f| f.manifest_id == "missing-lang"));
        assert!(report.failures.iter().any(|f| f.manifest_id == "bad"));
    }

    #[test]
    fn empty_study_is_empty_report() {
        let env = synthetic_env();
        let report = run_study(&[], &env, 4);
        assert!(report.results.is_empty());
        assert!(report.failures.is_empty());
    }

    #[test]
    fn comparisons_are_filled_against_baselines() {
        let env = synthetic_env();
        let baseline = base_manifest("base-bb", Setup::MonoBaseline, "bb", "bb");
        let zs = base_manifest("zs-ab", Setup::Zs, "aa", "bb");
        let report = run_study(&[baseline, zs], &env, 2);
        assert!(report.failures.is_empty(), "{:?}", report.failures);
        let zs_result = report.results.iter().find(|r| r.manifest.id == "zs-ab").unwrap();
        assert_eq!(zs_result.comparisons.len(), 1);
        let cmp = &zs_result.comparisons[0];
        assert_eq!(cmp.other_manifest_id, "base-bb");
        assert!((0.0..=1.0).contains(&cmp.p_value));
        assert_eq!(cmp.significant, cmp.p_value < 0.05);
    }

    #[test]
    fn study_is_deterministic_across_worker_counts() {
        let manifests = vec![
            base_manifest("zs-ab", Setup::Zs, "aa", "bb"),
            base_manifest("zs-ba", Setup::Zs, "bb", "aa"),
            base_manifest("base-bb", Setup::MonoBaseline, "bb", "bb"),
        ];
        let one = run_study(&manifests, &synthetic_env(), 1);
        let many = run_study(&manifests, &synthetic_env(), 3);
        assert_eq!(one.results.len(), many.results.len());
        for (a, b) in one.results.iter().zip(&many.results) {
            assert_eq!(a.manifest.id, b.manifest.id);
            assert_eq!(a.mean_f1, b.mean_f1);
            assert_eq!(a.per_seed, b.per_seed);
        }
    }

    #[test]
    fn run_result_round_trips_through_json() {
        let env = synthetic_env();
        let result = run_manifest(&base_manifest("rt", Setup::Zs, "aa", "bb"), &env).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("result.json");
        result.save(&path).unwrap();
        let back = RunResult::load(&path).unwrap();
        assert_eq!(back, result);
    }

    #[test]
    fn k_grid_and_incremental_expansion() {
        let mut fs = base_manifest("fs", Setup::Fs, "aa", "bb");
        fs.few_shot_k = Some(17);
        let grid = expand_k_grid(&fs, &[2, 4, 8, 10, 50, 100, 200]);
        assert_eq!(grid.len(), 7);
        assert_eq!(grid[0].id, "fs-k2");
        assert_eq!(grid[6].few_shot_k, Some(200));

        let mut multi = base_manifest("multi", Setup::MultiZs, "aa", "dd");
        multi.source_languages = vec!["aa".into(), "bb".into(), "cc".into()];
        let expanded = expand_incremental_sources(&multi);
        assert_eq!(expanded.len(), 7); // 2^3 - 1 subsets
        assert!(expanded.iter().all(|m| m.validate().is_ok()));
        assert_eq!(expanded[0].source_languages.len(), 1);
        assert_eq!(expanded[6].source_languages.len(), 3);
    }
}
