//! Subcommand implementations.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crosscheck_core::corpus::{ingest_tsv, merge_train_dev, stratified_downsample, Role, Split};
use crosscheck_core::encoder::BackendRegistry;
use crosscheck_core::experiments::{run_study, RunResult, Setup, SplitStore, StudyEnv};
use crosscheck_core::reporting::{
    few_shot_sweep, incremental_sources_sweep, render_comparison, render_grid,
};
use crosscheck_core::translation::{
    translate_corpus, verify_alignment, DictionaryProvider, ReplayProvider, TranslationCache,
    TranslationProvider,
};

use crate::config::{ProviderKind, StudyConfig};

/// Structured JSONL event log, one file per command run. Events carry the
/// run id and no wall-clock fields, so reruns produce identical bytes.
pub struct JsonlLogger {
    file: std::fs::File,
    run_id: String,
}

impl JsonlLogger {
    pub fn create(config_path: &Path, output_dir: &Path, command: &str) -> Result<Self> {
        let dir = output_dir.join("logs");
        std::fs::create_dir_all(&dir)?;
        let config_bytes = std::fs::read(config_path).unwrap_or_default();
        let mut h = Sha256::new();
        h.update(command.as_bytes());
        h.update(&config_bytes);
        let run_id = format!("{:x}", h.finalize())[..12].to_string();
        let file = std::fs::File::create(dir.join(format!("{command}.jsonl")))?;
        Ok(Self { file, run_id })
    }

    pub fn event(&mut self, event: &str, payload: impl Serialize) {
        #[derive(Serialize)]
        struct Record<'a, T: Serialize> {
            run_id: &'a str,
            event: &'a str,
            #[serde(flatten)]
            payload: T,
        }
        if let Ok(line) =
            serde_json::to_string(&Record { run_id: &self.run_id, event, payload })
        {
            let _ = writeln!(self.file, "{line}");
        }
    }
}

#[derive(Serialize)]
struct LanguageSummary {
    language: String,
    train_total: usize,
    train_positive: usize,
    test_total: usize,
    test_positive: usize,
}

/// prepare-data: ingest the raw TSVs, merge train+dev, down-sample per the
/// sampling spec, and write canonical JSONL splits.
pub fn prepare_data(config: &StudyConfig, config_path: &Path) -> Result<()> {
    if config.languages.is_empty() {
        bail!("no [languages.*] entries in the config");
    }
    let mut logger = JsonlLogger::create(config_path, &config.output_dir, "prepare-data")?;
    let dir = config.prepared_dir();
    std::fs::create_dir_all(&dir)?;
    let schema = config.schema.to_tsv_schema();
    let mut summaries = Vec::new();
    for (lang, paths) in &config.languages {
        for (name, path) in [("train", Some(&paths.train_tsv)), ("dev", paths.dev_tsv.as_ref()), ("test", Some(&paths.test_tsv))] {
            if let Some(path) = path {
                if !path.exists() {
                    bail!("{lang}: missing {name} file {}", path.display());
                }
            }
        }
        let train_raw = ingest_tsv(&paths.train_tsv, lang, Role::Train, &schema)
            .with_context(|| format!("{lang}: ingesting {}", paths.train_tsv.display()))?;
        let train_full = match &paths.dev_tsv {
            Some(dev_path) => {
                let dev = ingest_tsv(dev_path, lang, Role::Train, &schema)
                    .with_context(|| format!("{lang}: ingesting {}", dev_path.display()))?;
                merge_train_dev(&train_raw, &dev)?
            }
            None => train_raw,
        };
        let spec = config.sampling_for(lang);
        let train = stratified_downsample(&train_full, &spec)
            .with_context(|| format!("{lang}: down-sampling"))?;
        let test = ingest_tsv(&paths.test_tsv, lang, Role::Test, &schema)
            .with_context(|| format!("{lang}: ingesting {}", paths.test_tsv.display()))?;

        train.write_jsonl(&dir.join(format!("{lang}.train.jsonl")))?;
        test.write_jsonl(&dir.join(format!("{lang}.test.jsonl")))?;
        logger.event(
            "prepared",
            serde_json::json!({
                "language": lang,
                "train_total": train.len(),
                "train_positive": train.positives(),
                "test_total": test.len(),
                "test_positive": test.positives(),
            }),
        );
        summaries.push(LanguageSummary {
            language: lang.clone(),
            train_total: train.len(),
            train_positive: train.positives(),
            test_total: test.len(),
            test_positive: test.positives(),
        });
    }

    // Dataset summary table in the layout of the experiment protocol.
    eprintln!("| dataset | train total | train #CW | test total | test #CW |");
    eprintln!("|---|---|---|---|---|");
    for s in &summaries {
        eprintln!(
            "| {} | {} | {} | {} | {} |",
            s.language, s.train_total, s.train_positive, s.test_total, s.test_positive
        );
    }
    let summary_file = std::fs::File::create(dir.join("summary.json"))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(summary_file), &summaries)?;
    Ok(())
}

/// Loads the prepared JSONL splits for every configured language.
pub fn load_prepared(config: &StudyConfig) -> Result<SplitStore> {
    let dir = config.prepared_dir();
    let mut store = SplitStore::new();
    for lang in config.languages.keys() {
        for role in [Role::Train, Role::Test] {
            let path = dir.join(format!("{lang}.{role}.jsonl"));
            if !path.exists() {
                bail!(
                    "missing prepared split {} (run prepare-data first)",
                    path.display()
                );
            }
            store.insert(Split::read_jsonl(&path, lang, role)?);
        }
    }
    Ok(store)
}

/// Builds the configured translation provider, if any.
pub fn build_provider(config: &StudyConfig) -> Result<Option<Arc<dyn TranslationProvider>>> {
    match config.translation.provider {
        ProviderKind::None => Ok(None),
        ProviderKind::Dictionary => {
            let path = config
                .translation
                .dictionary_path
                .as_ref()
                .context("dictionary provider needs translation.dictionary_path")?;
            Ok(Some(Arc::new(DictionaryProvider::from_json_file("dictionary", path)?)))
        }
        ProviderKind::Replay => {
            let name = config
                .translation
                .replay_provider_name
                .clone()
                .context("replay provider needs translation.replay_provider_name")?;
            Ok(Some(Arc::new(ReplayProvider::from_cache_file(name, &config.cache_path())?)))
        }
        ProviderKind::Http => build_http_provider(config),
    }
}

#[cfg(feature = "http-provider")]
fn build_http_provider(config: &StudyConfig) -> Result<Option<Arc<dyn TranslationProvider>>> {
    let endpoint = config
        .translation
        .endpoint
        .clone()
        .context("http provider needs translation.endpoint")?;
    let auth = match &config.translation.auth_env {
        Some(var) => Some(std::env::var(var).with_context(|| format!("reading ${var}"))?),
        None => None,
    };
    Ok(Some(Arc::new(crosscheck_core::translation::HttpProvider::new("http", endpoint, auth))))
}

#[cfg(not(feature = "http-provider"))]
fn build_http_provider(config: &StudyConfig) -> Result<Option<Arc<dyn TranslationProvider>>> {
    bail!(
        "translation.endpoint {:?} (auth_env {:?}) needs a binary built with the \
         http-provider feature",
        config.translation.endpoint,
        config.translation.auth_env
    )
}

/// Direction filter for the translate command.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Direction {
    /// Source training sets into target languages (ZS-TrSrc).
    Src,
    /// Target test sets into source languages (ZS-TrTrg).
    Trg,
    Both,
}

/// translate: warm the cache for every manifest that needs translation and
/// write the translated splits out for inspection.
pub fn translate(config: &StudyConfig, config_path: &Path, direction: Direction) -> Result<()> {
    let provider = build_provider(config)?
        .context("translate needs a provider (translation.provider is none)")?;
    let cache = Arc::new(TranslationCache::open(&config.cache_path())?);
    let mut logger = JsonlLogger::create(config_path, &config.output_dir, "translate")?;
    let splits = load_prepared(config)?;
    let dir = config.translated_dir();
    std::fs::create_dir_all(&dir)?;

    let manifests = config.expand_manifests()?;
    // One job per distinct (split, target) pair.
    let mut jobs: BTreeSet<(String, String, Role)> = BTreeSet::new();
    for m in &manifests {
        if m.source_languages.len() != 1 {
            continue;
        }
        let source = m.single_source().to_string();
        let target = m.target_language.clone();
        if source == target {
            continue;
        }
        match m.setup {
            Setup::ZsTrSrc if direction != Direction::Trg => {
                jobs.insert((source, target, Role::Train));
            }
            Setup::ZsTrTrg if direction != Direction::Src => {
                jobs.insert((target, source, Role::Test));
            }
            _ => {}
        }
    }
    if jobs.is_empty() {
        eprintln!("nothing to translate for direction {direction:?}");
        return Ok(());
    }
    for (from, to, role) in jobs {
        let split = splits.get(&from, role)?;
        let translated = translate_corpus(split, &to, provider.as_ref(), &cache)?;
        let report = verify_alignment(split, &translated);
        if !report.aligned {
            bail!("alignment failed for {from}->{to} {role}: {:?}", report.mismatches);
        }
        let path = dir.join(format!("{from}-to-{to}.{role}.jsonl"));
        translated.write_jsonl(&path)?;
        logger.event(
            "translated",
            serde_json::json!({
                "from": from, "to": to, "role": role.to_string(),
                "examples": translated.len(),
            }),
        );
        eprintln!("translated {from}->{to} {role}: {} examples", translated.len());
    }
    eprintln!("cache now holds {} records", cache.len());
    Ok(())
}

/// run: execute the study and persist one RunResult JSON per manifest.
pub fn run(
    config: &StudyConfig,
    config_path: &Path,
    dry_run: bool,
    seed_list: Option<Vec<u64>>,
    workers_override: Option<usize>,
) -> Result<i32> {
    let mut manifests = config.expand_manifests()?;
    if let Some(seeds) = seed_list {
        for m in &mut manifests {
            m.seeds = seeds.clone();
            if seeds.len() != 5 {
                m.allow_seed_override = true;
            }
        }
    }
    for m in &manifests {
        m.validate()?;
    }
    let languages_needed: BTreeSet<&str> = manifests
        .iter()
        .flat_map(|m| {
            m.source_languages
                .iter()
                .map(String::as_str)
                .chain([m.target_language.as_str()])
        })
        .collect();
    for lang in &languages_needed {
        if !config.languages.contains_key(*lang) {
            bail!("manifests reference language {lang} but the config does not define it");
        }
    }
    if dry_run {
        eprintln!("dry run: {} manifests validated", manifests.len());
        for m in &manifests {
            eprintln!(
                "  {} [{}] {:?} -> {} (seeds {:?})",
                m.id, m.setup, m.source_languages, m.target_language, m.seeds
            );
        }
        return Ok(0);
    }

    let mut logger = JsonlLogger::create(config_path, &config.output_dir, "run")?;
    let splits = load_prepared(config)?;
    let mut env = StudyEnv::new(splits, BackendRegistry::with_builtins());
    if let Some(provider) = build_provider(config)? {
        let cache = Arc::new(TranslationCache::open(&config.cache_path())?);
        env = env.with_translation(provider, cache);
    }
    let workers = workers_override.unwrap_or(config.workers);
    let report = run_study(&manifests, &env, workers);

    let results_dir = config.results_dir();
    std::fs::create_dir_all(&results_dir)?;
    let trainlog_dir = config.output_dir.join("training-logs");
    std::fs::create_dir_all(&trainlog_dir)?;
    for result in &report.results {
        result.save(&results_dir.join(format!("{}.json", result.manifest_id())))?;
        for seed_run in &result.per_seed {
            let path = trainlog_dir
                .join(format!("{}-seed{}.jsonl", result.manifest_id(), seed_run.seed));
            let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
            for rec in &seed_run.training_log {
                writeln!(file, "{}", serde_json::to_string(rec)?)?;
            }
        }
        logger.event(
            "result",
            serde_json::json!({
                "manifest_id": result.manifest_id(),
                "mean_f1": result.mean_f1,
                "baseline": result.baseline,
            }),
        );
        eprintln!(
            "{}: mean positive-F1 {:.3} over {} seeds{}",
            result.manifest_id(),
            result.mean_f1,
            result.per_seed.len(),
            if result.baseline { " (baseline)" } else { "" }
        );
    }
    for failure in &report.failures {
        logger.event(
            "failure",
            serde_json::json!({ "manifest_id": failure.manifest_id, "error": failure.error }),
        );
        eprintln!("FAILED {}: {}", failure.manifest_id, failure.error);
    }
    eprintln!(
        "study done: {} results, {} failures (checkpoint cache: {} hits, {} misses)",
        report.results.len(),
        report.failures.len(),
        env.checkpoint_cache.hits(),
        env.checkpoint_cache.misses()
    );
    Ok(if report.failures.is_empty() { 0 } else { 1 })
}

/// Loads every RunResult JSON in the results directory, sorted by file name.
pub fn load_results(results_dir: &Path) -> Result<Vec<RunResult>> {
    let mut paths: Vec<PathBuf> = match std::fs::read_dir(results_dir) {
        Ok(entries) => entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|ext| ext == "json"))
            .collect(),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(e.into()),
    };
    paths.sort();
    paths
        .iter()
        .map(|p| RunResult::load(p).with_context(|| format!("loading {}", p.display())))
        .collect()
}

/// report: render grids, sweeps and the comparison table from persisted
/// results.
pub fn report(config: &StudyConfig, config_path: &Path) -> Result<()> {
    let mut logger = JsonlLogger::create(config_path, &config.output_dir, "report")?;
    let results = load_results(&config.results_dir())?;
    let dir = config.report_dir();
    std::fs::create_dir_all(dir.join("sweeps"))?;

    let mut md = String::from("# Study report\n");
    if results.is_empty() {
        md.push_str("\nNo results found. Run the study first.\n");
    }

    let setups_present: Vec<Setup> = [Setup::Zs, Setup::ZsTrSrc, Setup::ZsTrTrg, Setup::Fs, Setup::ZsAdv]
        .into_iter()
        .filter(|s| results.iter().any(|r| r.manifest.setup == *s && !r.baseline))
        .collect();
    let mut grids = Vec::new();
    for setup in setups_present {
        let grid = render_grid(&results, setup, &results);
        md.push_str(&format!("\n## {setup} grid\n\n"));
        md.push_str(&grid.to_markdown());
        grids.push(grid);
    }

    let comparison = render_comparison(&results);
    if !comparison.targets.is_empty() {
        md.push_str("\n## Best per setup vs baseline\n\n");
        md.push_str(&comparison.to_markdown());
    }

    let mut targets: Vec<String> =
        results.iter().map(|r| r.manifest.target_language.clone()).collect();
    targets.sort();
    targets.dedup();
    let mut sweep_files = Vec::new();
    for target in &targets {
        let fs = few_shot_sweep(&results, target);
        if !fs.points.is_empty() {
            let name = format!("few-shot-{target}.csv");
            std::fs::write(dir.join("sweeps").join(&name), fs.to_csv())?;
            sweep_files.push(name);
        }
        let inc = incremental_sources_sweep(&results, target);
        if inc.points.len() > 1 {
            let name = format!("incremental-sources-{target}.csv");
            std::fs::write(dir.join("sweeps").join(&name), inc.to_csv())?;
            sweep_files.push(name);
        }
    }
    if !sweep_files.is_empty() {
        md.push_str("\n## Sweeps\n\n");
        for name in &sweep_files {
            md.push_str(&format!("- [sweeps/{name}](sweeps/{name})\n"));
        }
    }

    std::fs::write(dir.join("report.md"), &md)?;
    let json_file = std::fs::File::create(dir.join("report.json"))?;
    serde_json::to_writer_pretty(
        std::io::BufWriter::new(json_file),
        &serde_json::json!({
            "grids": grids,
            "comparison": comparison,
            "sweep_files": sweep_files,
            "results": results.iter().map(|r| (r.manifest_id(), r.mean_f1)).collect::<Vec<_>>(),
        }),
    )?;
    logger.event(
        "reported",
        serde_json::json!({ "results": results.len(), "sweeps": sweep_files.len() }),
    );
    eprintln!(
        "report written to {} ({} results, {} sweep files)",
        dir.display(),
        results.len(),
        sweep_files.len()
    );
    Ok(())
}
