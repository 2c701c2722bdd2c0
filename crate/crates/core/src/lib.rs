//! Cross-lingual check-worthiness transfer benchmark.
//!
//! A library for training and evaluating binary check-worthiness classifiers
//! across language pairs under six transfer setups: zero-shot (ZS), zero-shot
//! with source-side or target-side translation (ZS-TrSrc / ZS-TrTrg),
//! few-shot continued fine-tuning (FS), zero-shot with an adversarial
//! language discriminator (ZS-Adv), and multilingual pooled training
//! (multilingual ZS). The crate covers the full protocol end to end:
//!
//! * [`corpus`] — data model, TSV ingestion, canonical JSONL, stratified
//!   down-sampling, few-shot and multilingual sampling.
//! * [`translation`] — provider-agnostic machine translation with a
//!   persistent append-only cache.
//! * [`encoder`] — token-level encoder abstraction with a deterministic
//!   reference transformer for offline experiments.
//! * [`classifier`] — classification head, supervised fine-tuning, and
//!   thresholded prediction.
//! * [`adversarial`] — language discriminator and adversarial training
//!   (alternating or gradient-reversal schedules).
//! * [`experiments`] — manifest-driven orchestration over language pairs,
//!   seeds and sweeps, with checkpoint reuse and a training-data audit trail.
//! * [`metrics`] — positive-class F1, seed aggregation, paired t-test.
//! * [`reporting`] — result grids with percent-difference annotations,
//!   significance markers, and sweep series.
//! * [`synth`] — synthetic bilingual corpora with a known dictionary, used
//!   by the offline end-to-end suites.

pub mod adversarial;
pub mod classifier;
pub mod corpus;
pub mod encoder;
pub mod experiments;
pub mod metrics;
pub mod nn;
pub mod reporting;
pub mod rng;
pub mod synth;
pub mod translation;
