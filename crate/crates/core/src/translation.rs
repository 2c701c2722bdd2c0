//! Provider-agnostic machine translation with a persistent cache.
//!
//! Providers implement a single `translate(text, src, tgt)` contract. The
//! shipped providers are an offline dictionary provider (tests and
//! synthetic experiments), a replay provider that serves a pre-built cache
//! file and nothing else, and a thin HTTP adapter behind the
//! `http-provider` feature. The cache is an append-only JSONL file of
//! [`TranslationRecord`]s; records are never mutated once written.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{Example, Origin, Split};

#[derive(Debug, thiserror::Error)]
pub enum TranslationError {
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cache line {line}: {message}")]
    CacheParse { line: usize, message: String },
    #[error("provider {provider} failed for ids {failed_ids:?}: {message}")]
    ProviderFailed { provider: String, failed_ids: Vec<String>, message: String },
    #[error("provider {provider} returned an empty translation for id {id}")]
    EmptyTranslation { provider: String, id: String },
    #[error("target language {target} equals split language")]
    IdentityTarget { target: String },
    #[error("{0}")]
    Invalid(String),
}

/// One cached translation. `cache_key` is a pure function of the four key
/// fields (see [`cache_key`]).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranslationRecord {
    pub source_text: String,
    pub source_language: String,
    pub target_language: String,
    pub provider: String,
    pub translated_text: String,
    pub cache_key: String,
}

/// SHA-256 over the length-prefixed key fields, hex encoded.
pub fn cache_key(source_text: &str, source_language: &str, target_language: &str, provider: &str) -> String {
    let mut h = Sha256::new();
    for field in [source_text, source_language, target_language, provider] {
        h.update((field.len() as u64).to_le_bytes());
        h.update(field.as_bytes());
    }
    format!("{:x}", h.finalize())
}

/// The single contract a translation backend must implement.
pub trait TranslationProvider: Send + Sync {
    /// Stable provider name; part of the cache key.
    fn name(&self) -> &str;
    fn translate(&self, text: &str, source: &str, target: &str) -> Result<String, String>;
}

/// Offline word-substitution provider backed by per-pair bilingual maps.
///
/// Texts are split on whitespace; tokens found in the map for the
/// requested language pair are substituted, unknown tokens pass through
/// unchanged.
pub struct DictionaryProvider {
    name: String,
    pairs: HashMap<(String, String), HashMap<String, String>>,
}

impl DictionaryProvider {
    pub fn new(name: impl Into<String>) -> Self {
        Self { name: name.into(), pairs: HashMap::new() }
    }

    pub fn add_pair(
        &mut self,
        source: impl Into<String>,
        target: impl Into<String>,
        map: HashMap<String, String>,
    ) {
        self.pairs.insert((source.into(), target.into()), map);
    }

    /// Loads from a JSON file: `[{"source_language", "target_language", "entries": {..}}]`.
    pub fn from_json_file(name: impl Into<String>, path: &Path) -> Result<Self, TranslationError> {
        #[derive(Deserialize)]
        struct PairFile {
            source_language: String,
            target_language: String,
            entries: HashMap<String, String>,
        }
        let file = File::open(path)
            .map_err(|e| TranslationError::Io { path: path.to_path_buf(), source: e })?;
        let pairs: Vec<PairFile> = serde_json::from_reader(BufReader::new(file))
            .map_err(|e| TranslationError::Invalid(format!("dictionary file: {e}")))?;
        let mut out = Self::new(name);
        for p in pairs {
            out.add_pair(p.source_language, p.target_language, p.entries);
        }
        Ok(out)
    }
}

impl TranslationProvider for DictionaryProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn translate(&self, text: &str, source: &str, target: &str) -> Result<String, String> {
        let map = self
            .pairs
            .get(&(source.to_string(), target.to_string()))
            .ok_or_else(|| format!("no dictionary for pair {source}->{target}"))?;
        let translated: Vec<&str> = text
            .split_whitespace()
            .map(|tok| map.get(tok).map(String::as_str).unwrap_or(tok))
            .collect();
        Ok(translated.join(" "))
    }
}

/// Serves translations from a pre-built cache file; any miss is an error.
pub struct ReplayProvider {
    name: String,
    records: HashMap<String, String>,
}

impl ReplayProvider {
    /// `name` must match the provider name the cache was built with, or the
    /// keys will not line up.
    pub fn from_cache_file(name: impl Into<String>, path: &Path) -> Result<Self, TranslationError> {
        let name = name.into();
        let records = read_cache_records(path)?
            .into_iter()
            .map(|r| (r.cache_key, r.translated_text))
            .collect();
        Ok(Self { name, records })
    }
}

impl TranslationProvider for ReplayProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn translate(&self, text: &str, source: &str, target: &str) -> Result<String, String> {
        let key = cache_key(text, source, target, &self.name);
        self.records
            .get(&key)
            .cloned()
            .ok_or_else(|| format!("replay miss for {source}->{target} text {text:?}"))
    }
}

/// Pass-through provider for same-language plumbing tests.
pub struct IdentityProvider;

impl TranslationProvider for IdentityProvider {
    fn name(&self) -> &str {
        "identity"
    }

    fn translate(&self, text: &str, _source: &str, _target: &str) -> Result<String, String> {
        Ok(text.to_string())
    }
}

/// Thin HTTP adapter: POSTs `{"q", "source", "target"}` as JSON and expects
/// `{"translatedText": "..."}` back. Credentials travel in the
/// `Authorization` header when configured.
#[cfg(feature = "http-provider")]
pub struct HttpProvider {
    name: String,
    endpoint: String,
    authorization: Option<String>,
    client: reqwest::blocking::Client,
}

#[cfg(feature = "http-provider")]
impl HttpProvider {
    pub fn new(
        name: impl Into<String>,
        endpoint: impl Into<String>,
        authorization: Option<String>,
    ) -> Self {
        Self {
            name: name.into(),
            endpoint: endpoint.into(),
            authorization,
            client: reqwest::blocking::Client::new(),
        }
    }
}

#[cfg(feature = "http-provider")]
impl TranslationProvider for HttpProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn translate(&self, text: &str, source: &str, target: &str) -> Result<String, String> {
        #[derive(Serialize)]
        struct Request<'a> {
            q: &'a str,
            source: &'a str,
            target: &'a str,
        }
        #[derive(Deserialize)]
        struct Response {
            #[serde(rename = "translatedText")]
            translated_text: String,
        }
        let mut req = self.client.post(&self.endpoint).json(&Request { q: text, source, target });
        if let Some(auth) = &self.authorization {
            req = req.header("Authorization", auth);
        }
        let resp = req.send().map_err(|e| e.to_string())?;
        if !resp.status().is_success() {
            return Err(format!("http status {}", resp.status()));
        }
        let body: Response = resp.json().map_err(|e| e.to_string())?;
        Ok(body.translated_text)
    }
}

fn read_cache_records(path: &Path) -> Result<Vec<TranslationRecord>, TranslationError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(TranslationError::Io { path: path.to_path_buf(), source: e }),
    };
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| TranslationError::Io { path: path.to_path_buf(), source: e })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TranslationRecord = serde_json::from_str(&line)
            .map_err(|e| TranslationError::CacheParse { line: i + 1, message: e.to_string() })?;
        records.push(rec);
    }
    Ok(records)
}

/// Append-only persistent translation cache.
///
/// Lookups hit an in-memory index; appends go through a single writer that
/// takes an exclusive advisory lock (`flock`) on the file, so concurrent
/// processes sharing one cache file do not interleave records.
pub struct TranslationCache {
    path: PathBuf,
    index: Mutex<HashMap<String, TranslationRecord>>,
}

impl TranslationCache {
    /// Opens (or creates) a JSONL cache file and loads its index.
    pub fn open(path: &Path) -> Result<Self, TranslationError> {
        let records = read_cache_records(path)?;
        let index = records.into_iter().map(|r| (r.cache_key.clone(), r)).collect();
        Ok(Self { path: path.to_path_buf(), index: Mutex::new(index) })
    }

    pub fn len(&self) -> usize {
        self.index.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &str) -> Option<TranslationRecord> {
        self.index.lock().expect("cache lock").get(key).cloned()
    }

    /// Appends a record unless its key is already present (append-only:
    /// existing records win).
    pub fn insert(&self, record: TranslationRecord) -> Result<(), TranslationError> {
        let mut index = self.index.lock().expect("cache lock");
        if index.contains_key(&record.cache_key) {
            return Ok(());
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| TranslationError::Io { path: self.path.clone(), source: e })?;
        lock_exclusive(&file).map_err(|e| TranslationError::Io { path: self.path.clone(), source: e })?;
        let mut w = std::io::BufWriter::new(&file);
        let line = serde_json::to_string(&record)
            .map_err(|e| TranslationError::Invalid(format!("record serialization: {e}")))?;
        let result = writeln!(w, "{line}").and_then(|_| w.flush());
        unlock(&file);
        result.map_err(|e| TranslationError::Io { path: self.path.clone(), source: e })?;
        index.insert(record.cache_key.clone(), record);
        Ok(())
    }
}

#[cfg(unix)]
fn lock_exclusive(file: &File) -> std::io::Result<()> {
    use std::os::unix::io::AsRawFd;
    let rc = unsafe { libc::flock(file.as_raw_fd(), libc::LOCK_EX) };
    if rc == 0 {
        Ok(())
    } else {
        Err(std::io::Error::last_os_error())
    }
}

#[cfg(unix)]
fn unlock(file: &File) {
    use std::os::unix::io::AsRawFd;
    unsafe { libc::flock(file.as_raw_fd(), libc::LOCK_UN) };
}

#[cfg(not(unix))]
fn lock_exclusive(_file: &File) -> std::io::Result<()> {
    Ok(())
}

#[cfg(not(unix))]
fn unlock(_file: &File) {}

const RETRY_ATTEMPTS: u32 = 3;
const RETRY_BASE_DELAY_MS: u64 = 50;

fn translate_with_retry(
    provider: &dyn TranslationProvider,
    text: &str,
    source: &str,
    target: &str,
) -> Result<String, String> {
    let mut last_err = String::new();
    for attempt in 0..RETRY_ATTEMPTS {
        match provider.translate(text, source, target) {
            Ok(t) => return Ok(t),
            Err(e) => {
                last_err = e;
                if attempt + 1 < RETRY_ATTEMPTS {
                    std::thread::sleep(std::time::Duration::from_millis(
                        RETRY_BASE_DELAY_MS << attempt,
                    ));
                }
            }
        }
    }
    Err(last_err)
}

/// Translates every example of a split into `target_language`.
///
/// Ids, labels and ordering are preserved; each output example is tagged
/// `origin=translated` with `source_language` set. Texts already in the
/// cache are served from it; fresh translations are fetched once (with
/// 3-attempt exponential backoff) and appended. Provider failures are
/// collected and reported together with the ids left untranslated.
///
/// Text goes to the provider raw. Whether tweets should be preprocessed
/// (URLs, mentions) before translation is an open choice; callers that
/// want it use [`translate_corpus_preprocessed`].
pub fn translate_corpus(
    split: &Split,
    target_language: &str,
    provider: &dyn TranslationProvider,
    cache: &TranslationCache,
) -> Result<Split, TranslationError> {
    translate_corpus_preprocessed(split, target_language, provider, cache, &|text| {
        text.to_string()
    })
}

/// As [`translate_corpus`], but running every text through `preprocess`
/// before lookup and translation. The cache key covers the preprocessed
/// text, so differently preprocessed corpora never collide.
pub fn translate_corpus_preprocessed(
    split: &Split,
    target_language: &str,
    provider: &dyn TranslationProvider,
    cache: &TranslationCache,
    preprocess: &dyn Fn(&str) -> String,
) -> Result<Split, TranslationError> {
    if split.language == target_language {
        return Err(TranslationError::IdentityTarget { target: target_language.to_string() });
    }
    let mut out = Vec::with_capacity(split.len());
    let mut failed: Vec<String> = Vec::new();
    let mut last_message = String::new();
    for ex in &split.examples {
        let text = preprocess(&ex.text);
        let key = cache_key(&text, &ex.language, target_language, provider.name());
        let translated_text = match cache.get(&key) {
            Some(rec) => rec.translated_text,
            None => match translate_with_retry(provider, &text, &ex.language, target_language) {
                Ok(translated) => {
                    if translated.trim().is_empty() {
                        return Err(TranslationError::EmptyTranslation {
                            provider: provider.name().to_string(),
                            id: ex.id.clone(),
                        });
                    }
                    cache.insert(TranslationRecord {
                        source_text: text.clone(),
                        source_language: ex.language.clone(),
                        target_language: target_language.to_string(),
                        provider: provider.name().to_string(),
                        translated_text: translated.clone(),
                        cache_key: key,
                    })?;
                    translated
                }
                Err(message) => {
                    last_message = message;
                    failed.push(ex.id.clone());
                    continue;
                }
            },
        };
        if translated_text.trim().is_empty() {
            return Err(TranslationError::EmptyTranslation {
                provider: provider.name().to_string(),
                id: ex.id.clone(),
            });
        }
        out.push(Example {
            id: ex.id.clone(),
            text: translated_text,
            language: target_language.to_string(),
            label: ex.label,
            origin: Origin::Translated,
            source_language: Some(ex.language.clone()),
            provenance: ex.provenance.clone(),
        });
    }
    if !failed.is_empty() {
        return Err(TranslationError::ProviderFailed {
            provider: provider.name().to_string(),
            failed_ids: failed,
            message: last_message,
        });
    }
    Split::new(target_language, split.role, out)
        .map_err(|e| TranslationError::Invalid(e.to_string()))
}

/// Position-wise id/label agreement between an original split and its
/// translation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub aligned: bool,
    /// Human-readable description of each mismatch found.
    pub mismatches: Vec<String>,
}

/// Checks that id and label sequences are equal position-wise. Never
/// errors; misalignments come back as a diff report.
pub fn verify_alignment(original: &Split, translated: &Split) -> AlignmentReport {
    let mut mismatches = Vec::new();
    if original.len() != translated.len() {
        mismatches.push(format!(
            "length mismatch: original {} vs translated {}",
            original.len(),
            translated.len()
        ));
        let orig_ids: std::collections::HashSet<&str> =
            original.examples.iter().map(|e| e.id.as_str()).collect();
        let trans_ids: std::collections::HashSet<&str> =
            translated.examples.iter().map(|e| e.id.as_str()).collect();
        for id in orig_ids.difference(&trans_ids) {
            mismatches.push(format!("id {id} missing from translation"));
        }
        for id in trans_ids.difference(&orig_ids) {
            mismatches.push(format!("id {id} not present in original"));
        }
    } else {
        for (i, (o, t)) in original.examples.iter().zip(&translated.examples).enumerate() {
            if o.id != t.id {
                mismatches.push(format!("position {i}: id {} vs {}", o.id, t.id));
            } else if o.label != t.label {
                mismatches.push(format!(
                    "position {i} (id {}): label {} vs {}",
                    o.id, o.label, t.label
                ));
            }
        }
    }
    AlignmentReport { aligned: mismatches.is_empty(), mismatches }
}
