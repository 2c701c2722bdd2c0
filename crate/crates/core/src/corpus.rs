//! Data model and sampling procedures.
//!
//! The canonical on-disk format is JSONL, one [`Example`] per line in UTF-8
//! with the schema `{id, text, language, label, origin, source_language}`.
//! The tab-separated release format of the CheckThat-style datasets is
//! supported through [`ingest_tsv`] as an importer only.
//!
//! All sampling here is deterministic: selection within a class is a seeded
//! Fisher–Yates shuffle followed by a prefix take (see [`crate::rng`] for
//! the pinned RNG).

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::rng::DetRng;

/// Negative class: not check-worthy.
pub const LABEL_NEGATIVE: u8 = 0;
/// Positive class: contains a check-worthy claim.
pub const LABEL_POSITIVE: u8 = 1;
/// Sentinel for examples whose label has been stripped (adversarial
/// unlabeled pools). Never valid in a corpus file.
pub const LABEL_UNLABELED: u8 = u8::MAX;

/// Whether an example is in its original language or machine-translated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Original,
    Translated,
}

/// Train/test role of a split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Test,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Role::Train => write!(f, "train"),
            Role::Test => write!(f, "test"),
        }
    }
}

/// One labeled short text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub text: String,
    /// ISO-639-1 code, or the synthetic codes used in tests ("multi", "aa", …).
    pub language: String,
    /// 0 or 1 in corpora; `LABEL_UNLABELED` only for stripped in-memory pools.
    pub label: u8,
    pub origin: Origin,
    /// Set exactly when `origin == Translated`.
    pub source_language: Option<String>,
    /// Name of the raw split this example came from (e.g. "dev" after a
    /// train/dev merge). Not part of the canonical schema key fields.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<String>,
}

impl Example {
    /// A new original-language example. Validates the field invariants.
    pub fn new(
        id: impl Into<String>,
        text: impl Into<String>,
        language: impl Into<String>,
        label: u8,
    ) -> Result<Self, CorpusError> {
        let ex = Self {
            id: id.into(),
            text: text.into(),
            language: language.into(),
            label,
            origin: Origin::Original,
            source_language: None,
            provenance: None,
        };
        ex.validate()?;
        Ok(ex)
    }

    pub fn is_positive(&self) -> bool {
        self.label == LABEL_POSITIVE
    }

    /// Checks the per-example invariants: non-empty trimmed text, binary
    /// label, and `source_language` present iff translated.
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.text.trim().is_empty() {
            return Err(CorpusError::EmptyText { id: self.id.clone() });
        }
        if self.label != LABEL_NEGATIVE && self.label != LABEL_POSITIVE {
            return Err(CorpusError::BadLabel {
                id: self.id.clone(),
                value: self.label.to_string(),
            });
        }
        match (self.origin, &self.source_language) {
            (Origin::Translated, None) | (Origin::Original, Some(_)) => {
                Err(CorpusError::OriginMismatch { id: self.id.clone() })
            }
            _ => Ok(()),
        }
    }
}

/// A named collection of examples for one language and role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub language: String,
    pub role: Role,
    pub examples: Vec<Example>,
}

/// Synthetic language code for pooled multilingual splits. Splits tagged
/// with it may mix member languages; all other splits are single-language.
pub const MULTI_LANGUAGE: &str = "multi";

impl Split {
    /// Builds a split, enforcing id uniqueness and (for non-"multi"
    /// languages) per-example language agreement.
    pub fn new(
        language: impl Into<String>,
        role: Role,
        examples: Vec<Example>,
    ) -> Result<Self, CorpusError> {
        let language = language.into();
        let mut seen = HashSet::new();
        for ex in &examples {
            if language != MULTI_LANGUAGE && ex.language != language {
                return Err(CorpusError::LanguageMismatch {
                    expected: language.clone(),
                    found: ex.language.clone(),
                    id: ex.id.clone(),
                });
            }
            if !seen.insert(ex.id.clone()) {
                return Err(CorpusError::DuplicateIds { ids: vec![ex.id.clone()] });
            }
        }
        Ok(Self { language, role, examples })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.examples.iter().filter(|e| e.is_positive()).count()
    }

    pub fn negatives(&self) -> usize {
        self.examples.iter().filter(|e| e.label == LABEL_NEGATIVE).count()
    }

    /// Fraction of positive examples; 0 for an empty split.
    pub fn positive_prior(&self) -> f64 {
        if self.examples.is_empty() {
            0.0
        } else {
            self.positives() as f64 / self.len() as f64
        }
    }

    /// Writes the split as canonical JSONL.
    pub fn write_jsonl_to<W: Write>(&self, mut w: W) -> Result<(), CorpusError> {
        for ex in &self.examples {
            let line = serde_json::to_string(ex).map_err(CorpusError::Serde)?;
            writeln!(w, "{line}").map_err(CorpusError::Io)?;
        }
        Ok(())
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<(), CorpusError> {
        let file = std::fs::File::create(path).map_err(CorpusError::Io)?;
        self.write_jsonl_to(std::io::BufWriter::new(file))
    }

    /// Reads a canonical JSONL file back into a split. Each example is
    /// validated and must match `language` (unless the split is "multi").
    pub fn read_jsonl(path: &Path, language: &str, role: Role) -> Result<Self, CorpusError> {
        let file = std::fs::File::open(path).map_err(CorpusError::Io)?;
        let mut examples = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(CorpusError::Io)?;
            if line.trim().is_empty() {
                continue;
            }
            let ex: Example = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            ex.validate()?;
            examples.push(ex);
        }
        Split::new(language, role, examples)
    }

    /// SHA-256 over (id, label, text) of every example in order. Used as a
    /// content key for checkpoint reuse.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for ex in &self.examples {
            h.update((ex.id.len() as u64).to_le_bytes());
            h.update(ex.id.as_bytes());
            h.update([ex.label]);
            h.update((ex.text.len() as u64).to_le_bytes());
            h.update(ex.text.as_bytes());
        }
        format!("{:x}", h.finalize())
    }
}

/// How many examples of each class to keep when down-sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingSpec {
    pub n_positive: usize,
    pub n_negative: usize,
    pub seed: u64,
}

impl SamplingSpec {
    pub fn total(&self) -> usize {
        self.n_positive + self.n_negative
    }
}

/// Column names for the tab-separated release format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TsvSchema {
    pub text_column: String,
    pub label_column: String,
    /// When absent, ids are synthesized as `{language}-{role}-{row}`.
    pub id_column: Option<String>,
}

impl Default for TsvSchema {
    fn default() -> Self {
        Self {
            text_column: "tweet_text".into(),
            label_column: "check_worthiness".into(),
            id_column: Some("tweet_id".into()),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("io error: {0}")]
    Io(#[source] std::io::Error),
    #[error("serialization error: {0}")]
    Serde(#[source] serde_json::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: unknown label value {value:?}")]
    UnknownLabel { line: usize, value: String },
    #[error("example {id}: text is empty after trimming")]
    EmptyText { id: String },
    #[error("example {id}: label {value} is not 0 or 1")]
    BadLabel { id: String, value: String },
    #[error("example {id}: source_language must be set exactly when origin=translated")]
    OriginMismatch { id: String },
    #[error("expected language {expected}, found {found} (example {id})")]
    LanguageMismatch { expected: String, found: String, id: String },
    #[error("duplicate ids: {ids:?}")]
    DuplicateIds { ids: Vec<String> },
    #[error("{language}: requested {requested} {class} examples, only {available} available")]
    Capacity { language: String, class: String, requested: usize, available: usize },
    #[error("missing column {0:?} in TSV header")]
    MissingColumn(String),
    #[error("{0}")]
    Invalid(String),
}

/// Imports a tab-separated file with a header row.
///
/// Rows must carry at least the text and label columns named in `schema`;
/// labels are mapped to {0, 1} and anything else is rejected with its line
/// number. Quoting is disabled: the release files are plain tab-separated
/// and tweets routinely contain quote characters.
pub fn ingest_tsv(
    path: &Path,
    language: &str,
    role: Role,
    schema: &TsvSchema,
) -> Result<Split, CorpusError> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .quoting(false)
        .flexible(false)
        .from_path(path)
        .map_err(|e| CorpusError::Parse { line: 0, message: e.to_string() })?;

    let headers = reader
        .headers()
        .map_err(|e| CorpusError::Parse { line: 1, message: e.to_string() })?
        .clone();
    let col = |name: &str| -> Result<usize, CorpusError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CorpusError::MissingColumn(name.to_string()))
    };
    let text_idx = col(&schema.text_column)?;
    let label_idx = col(&schema.label_column)?;
    let id_idx = match &schema.id_column {
        Some(name) => Some(col(name)?),
        None => None,
    };

    let mut examples = Vec::new();
    for (row, record) in reader.records().enumerate() {
        // Header occupies line 1; data rows start at line 2.
        let line = row + 2;
        let record = record.map_err(|e| CorpusError::Parse { line, message: e.to_string() })?;
        let field = |idx: usize| -> Result<&str, CorpusError> {
            record.get(idx).ok_or_else(|| CorpusError::Parse {
                line,
                message: format!("missing column {idx}"),
            })
        };
        let label = match field(label_idx)?.trim() {
            "0" => LABEL_NEGATIVE,
            "1" => LABEL_POSITIVE,
            other => {
                return Err(CorpusError::UnknownLabel { line, value: other.to_string() });
            }
        };
        let id = match id_idx {
            Some(idx) => field(idx)?.trim().to_string(),
            None => format!("{language}-{role}-{row}"),
        };
        let ex = Example::new(id, field(text_idx)?.trim(), language, label)?;
        examples.push(ex);
    }
    Split::new(language, role, examples)
}

/// Concatenates a training split with a dev split re-tagged as train.
///
/// Ids must stay unique across the union; clashes are reported all at once.
/// Each side keeps its original ids and records which input it came from in
/// the `provenance` field.
pub fn merge_train_dev(train: &Split, dev: &Split) -> Result<Split, CorpusError> {
    if train.language != dev.language {
        return Err(CorpusError::LanguageMismatch {
            expected: train.language.clone(),
            found: dev.language.clone(),
            id: String::new(),
        });
    }
    let train_ids: HashSet<&str> = train.examples.iter().map(|e| e.id.as_str()).collect();
    let dups: Vec<String> = dev
        .examples
        .iter()
        .filter(|e| train_ids.contains(e.id.as_str()))
        .map(|e| e.id.clone())
        .collect();
    if !dups.is_empty() {
        return Err(CorpusError::DuplicateIds { ids: dups });
    }
    let mut examples = Vec::with_capacity(train.len() + dev.len());
    for ex in &train.examples {
        let mut ex = ex.clone();
        ex.provenance.get_or_insert_with(|| "train".into());
        examples.push(ex);
    }
    for ex in &dev.examples {
        let mut ex = ex.clone();
        ex.provenance.get_or_insert_with(|| "dev".into());
        examples.push(ex);
    }
    Split::new(train.language.clone(), Role::Train, examples)
}

/// Seeded shuffle + prefix take of `n` items from one class.
fn take_class(
    split: &Split,
    positive: bool,
    n: usize,
    rng: &mut DetRng,
) -> Result<Vec<Example>, CorpusError> {
    let mut pool: Vec<&Example> = split
        .examples
        .iter()
        .filter(|e| e.is_positive() == positive)
        .collect();
    if pool.len() < n {
        return Err(CorpusError::Capacity {
            language: split.language.clone(),
            class: if positive { "positive" } else { "negative" }.into(),
            requested: n,
            available: pool.len(),
        });
    }
    rng.shuffle(&mut pool);
    Ok(pool.into_iter().take(n).cloned().collect())
}

/// Stratified down-sampling to exact per-class counts.
///
/// Stratification is by label only (no topic field is modeled). Selection
/// is uniform without replacement within each class and the output order
/// is itself shuffled, all deterministically from `spec.seed`.
pub fn stratified_downsample(split: &Split, spec: &SamplingSpec) -> Result<Split, CorpusError> {
    let mut rng_pos = DetRng::with_domain(spec.seed, "downsample/positive");
    let mut rng_neg = DetRng::with_domain(spec.seed, "downsample/negative");
    let mut out = take_class(split, true, spec.n_positive, &mut rng_pos)?;
    out.extend(take_class(split, false, spec.n_negative, &mut rng_neg)?);
    let mut rng_order = DetRng::with_domain(spec.seed, "downsample/order");
    rng_order.shuffle(&mut out);
    Split::new(split.language.clone(), split.role, out)
}

/// Class-balanced few-shot selection.
///
/// For odd `k` the extra example goes to the negative class by default
/// (k=17 → 8 positive, k=9 → 4 positive); pass `positive_majority = true`
/// to flip that.
pub fn sample_few_shots(
    split: &Split,
    k: usize,
    seed: u64,
    positive_majority: bool,
) -> Result<Vec<Example>, CorpusError> {
    if k == 0 {
        return Err(CorpusError::Invalid("few-shot k must be at least 1".into()));
    }
    let n_pos = if positive_majority { k.div_ceil(2) } else { k / 2 };
    let n_neg = k - n_pos;
    let mut rng_pos = DetRng::with_domain(seed, "fewshot/positive");
    let mut rng_neg = DetRng::with_domain(seed, "fewshot/negative");
    let mut shots = take_class(split, true, n_pos, &mut rng_pos)?;
    shots.extend(take_class(split, false, n_neg, &mut rng_neg)?);
    let mut rng_order = DetRng::with_domain(seed, "fewshot/order");
    rng_order.shuffle(&mut shots);
    Ok(shots)
}

/// Pools several single-language training splits into one split with the
/// synthetic language tag "multi", each language equally represented.
///
/// When `total` or `total_positive` is not divisible by the number of
/// splits, the remainders go to the languages that come first in
/// lexicographic order of their codes.
pub fn build_multilingual_pool(
    splits: &[&Split],
    total: usize,
    total_positive: usize,
    seed: u64,
) -> Result<Split, CorpusError> {
    if splits.is_empty() {
        return Err(CorpusError::Invalid("multilingual pool needs at least one split".into()));
    }
    if total_positive > total {
        return Err(CorpusError::Invalid(format!(
            "total_positive {total_positive} exceeds total {total}"
        )));
    }
    let mut by_code: BTreeMap<&str, &Split> = BTreeMap::new();
    for s in splits {
        if by_code.insert(s.language.as_str(), s).is_some() {
            return Err(CorpusError::Invalid(format!(
                "duplicate language {} in pool inputs",
                s.language
            )));
        }
    }
    let n = by_code.len();
    let mut taken = Vec::new();
    for (i, (_code, split)) in by_code.iter().enumerate() {
        let quota = total / n + usize::from(i < total % n);
        let quota_pos = total_positive / n + usize::from(i < total_positive % n);
        if quota_pos > quota {
            return Err(CorpusError::Invalid(format!(
                "per-language positive quota {quota_pos} exceeds quota {quota}"
            )));
        }
        let spec = SamplingSpec {
            n_positive: quota_pos,
            n_negative: quota - quota_pos,
            seed,
        };
        let sampled = stratified_downsample(split, &spec)?;
        taken.push(sampled.examples);
    }
    if n == 1 {
        // Degenerate pool: exactly the stratified down-sample of the one
        // split, re-tagged.
        let examples = taken.pop().expect("one element");
        return Split::new(MULTI_LANGUAGE, Role::Train, examples);
    }
    let mut examples: Vec<Example> = taken.into_iter().flatten().collect();
    let mut rng_order = DetRng::with_domain(seed, "pool/order");
    rng_order.shuffle(&mut examples);
    Split::new(MULTI_LANGUAGE, Role::Train, examples)
}
