//! Synthetic bilingual corpora for offline experiments.
//!
//! Two artificial languages share one label-generating pattern: every
//! sentence carries one or two marker words, and the sentence is
//! check-worthy exactly when they are claim markers rather than chatter
//! markers. The languages use disjoint vocabulary id ranges under the
//! reference tokenizer (words are rejection-sampled until their hash
//! bucket lands in the requested range), and a complete bilingual
//! dictionary maps each word of one language to its counterpart in the
//! other, marker class to marker class. Translating a sentence through the
//! dictionary therefore preserves its label pattern, which is what the
//! translation-based transfer setups exploit. Text in the other language
//! carries neither marker vocabulary, so a model trained on one language
//! has no signal to act on across the vocabulary gap.

use std::collections::{HashMap, HashSet};

use crate::corpus::{CorpusError, Example, Role, Split};
use crate::encoder::reference::{hash_token, VOCAB_SIZE};
use crate::encoder::FIRST_WORD_ID;
use crate::rng::DetRng;
use crate::translation::DictionaryProvider;

/// An artificial language: filler vocabulary plus the two marker classes,
/// all token ids inside one bucket range.
#[derive(Debug, Clone)]
pub struct SyntheticLanguage {
    pub code: String,
    /// Regular words carrying no label signal.
    pub filler_words: Vec<String>,
    /// Words whose presence makes a sentence check-worthy.
    pub claim_markers: Vec<String>,
    /// Words marking a non-check-worthy sentence.
    pub chatter_markers: Vec<String>,
}

/// A pair of synthetic languages with disjoint vocabulary ranges.
#[derive(Debug, Clone)]
pub struct SyntheticPair {
    pub lang_a: SyntheticLanguage,
    pub lang_b: SyntheticLanguage,
}

/// Generates pseudo-words (lowercase, length 5–8) whose reference-tokenizer
/// buckets fall inside `[lo, hi)`, all buckets distinct.
fn sample_words(
    count: usize,
    lo: usize,
    hi: usize,
    used: &mut HashSet<usize>,
    rng: &mut DetRng,
) -> Vec<String> {
    const LETTERS: &[u8] = b"abcdefghijklmnopqrstuvwxyz";
    let mut words = Vec::with_capacity(count);
    while words.len() < count {
        let len = 5 + rng.index(4);
        let word: String =
            (0..len).map(|_| LETTERS[rng.index(LETTERS.len())] as char).collect();
        let bucket = hash_token(&word);
        if bucket >= lo && bucket < hi && used.insert(bucket) {
            words.push(word);
        }
    }
    words
}

fn sample_language(
    code: &str,
    filler: usize,
    markers: usize,
    lo: usize,
    hi: usize,
    used: &mut HashSet<usize>,
    rng: &mut DetRng,
) -> SyntheticLanguage {
    SyntheticLanguage {
        code: code.into(),
        filler_words: sample_words(filler, lo, hi, used, rng),
        claim_markers: sample_words(markers, lo, hi, used, rng),
        chatter_markers: sample_words(markers, lo, hi, used, rng),
    }
}

/// Builds any number of languages over equal consecutive shares of the
/// vocabulary bucket range. The per-language word count (filler plus both
/// marker classes) must fit its share.
pub fn build_languages(
    codes: &[&str],
    filler_per_language: usize,
    markers_per_class: usize,
    seed: u64,
) -> Vec<SyntheticLanguage> {
    assert!(!codes.is_empty());
    let total = VOCAB_SIZE - FIRST_WORD_ID;
    let share = total / codes.len();
    assert!(
        filler_per_language + 2 * markers_per_class <= share,
        "vocabulary share {share} too small for {} words",
        filler_per_language + 2 * markers_per_class
    );
    let mut rng = DetRng::with_domain(seed, "synth/words");
    let mut used = HashSet::new();
    codes
        .iter()
        .enumerate()
        .map(|(i, code)| {
            let lo = FIRST_WORD_ID + i * share;
            let hi = lo + share;
            sample_language(code, filler_per_language, markers_per_class, lo, hi, &mut used, &mut rng)
        })
        .collect()
}

/// Builds the standard language pair `aa`/`bb` over the two vocabulary
/// halves.
pub fn build_pair(filler_per_language: usize, markers_per_class: usize, seed: u64) -> SyntheticPair {
    let mut langs = build_languages(&["aa", "bb"], filler_per_language, markers_per_class, seed);
    let lang_b = langs.pop().expect("two languages");
    let lang_a = langs.pop().expect("two languages");
    SyntheticPair { lang_a, lang_b }
}

/// Word-for-word dictionary between two synthetic languages, marker class
/// to marker class, in both directions.
pub fn dictionary_between(a: &SyntheticLanguage, b: &SyntheticLanguage) -> DictionaryProvider {
    let mut provider = DictionaryProvider::new("synthetic-dictionary");
    let mut ab: HashMap<String, String> = HashMap::new();
    let mut ba: HashMap<String, String> = HashMap::new();
    for (group_a, group_b) in a.word_groups().iter().zip(b.word_groups()) {
        for (wa, wb) in group_a.iter().zip(group_b.iter()) {
            ab.insert(wa.clone(), wb.clone());
            ba.insert(wb.clone(), wa.clone());
        }
    }
    provider.add_pair(a.code.clone(), b.code.clone(), ab);
    provider.add_pair(b.code.clone(), a.code.clone(), ba);
    provider
}

impl SyntheticLanguage {
    fn word_groups(&self) -> [&[String]; 3] {
        [&self.filler_words, &self.claim_markers, &self.chatter_markers]
    }
}

impl SyntheticPair {
    pub fn language(&self, code: &str) -> Option<&SyntheticLanguage> {
        [&self.lang_a, &self.lang_b].into_iter().find(|l| l.code == code)
    }

    /// Word-for-word maps in both directions, marker class to marker class.
    pub fn dictionary_provider(&self) -> DictionaryProvider {
        dictionary_between(&self.lang_a, &self.lang_b)
    }
}

/// Generates a labeled split of 6–10-word sentences. Every sentence has
/// one or two filler slots replaced by markers: claim markers for
/// positives, chatter markers for negatives. Both classes share the same
/// length distribution, so neither length nor marker count leaks the
/// label.
pub fn generate_split(
    language: &SyntheticLanguage,
    role: Role,
    n_positive: usize,
    n_negative: usize,
    seed: u64,
) -> Result<Split, CorpusError> {
    let mut rng = DetRng::with_domain(seed, &format!("synth/{}/{role}", language.code));
    let mut examples = Vec::with_capacity(n_positive + n_negative);
    let make = |count: usize,
                    markers: &[String],
                    label: u8,
                    tag: char,
                    rng: &mut DetRng|
     -> Result<Vec<Example>, CorpusError> {
        (0..count)
            .map(|i| {
                let len = 6 + rng.index(5);
                let mut words: Vec<String> = (0..len)
                    .map(|_| language.filler_words[rng.index(language.filler_words.len())].clone())
                    .collect();
                let n_markers = 1 + rng.index(2);
                let mut slots: Vec<usize> = (0..words.len()).collect();
                rng.shuffle(&mut slots);
                for &slot in slots.iter().take(n_markers) {
                    words[slot] = markers[rng.index(markers.len())].clone();
                }
                Example::new(
                    format!("{}-{role}-{tag}{i}", language.code),
                    words.join(" "),
                    &language.code,
                    label,
                )
            })
            .collect()
    };
    examples.extend(make(n_positive, &language.claim_markers, 1, 'p', &mut rng)?);
    examples.extend(make(n_negative, &language.chatter_markers, 0, 'n', &mut rng)?);
    let mut order_rng = DetRng::with_domain(seed, &format!("synth/{}/{role}/order", language.code));
    order_rng.shuffle(&mut examples);
    Split::new(&language.code, role, examples)
}

/// Expected positive-class F1 of a guesser that predicts positive with
/// probability equal to the test prior p: plugging the expected confusion
/// counts into 2TP/(2TP+FP+FN) gives 2p·p/(p+p) = p.
pub fn random_guess_f1(test: &Split) -> f64 {
    test.positive_prior()
}
