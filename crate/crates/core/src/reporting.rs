//! Result rendering: source×target grids with percent-difference
//! annotations and significance markers, sweep series, and the
//! best-per-setup comparison table.
//!
//! F1 values render ×100 at one decimal. Percent differences against the
//! zero-shot reference round half away from zero to integers. Best and
//! second-best markers rank all cells of a column, diagonal included, with
//! ties broken by row order.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::experiments::{RunResult, Setup};

/// Integer percent difference of a setup F1 against its zero-shot
/// reference: `round(100·(setup − zs)/zs)`, half away from zero. `None`
/// (an undefined marker) when the reference is zero.
pub fn percent_diff(setup_f1: f64, zs_f1: f64) -> Option<i64> {
    if zs_f1 <= 0.0 {
        return None;
    }
    Some((100.0 * (setup_f1 - zs_f1) / zs_f1).round() as i64)
}

/// One rendered grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub source: String,
    pub target: String,
    pub mean_f1: f64,
    /// Mean F1 ×100 rounded to one decimal, as displayed.
    pub display_value: f64,
    /// Integer percent difference against the zero-shot cell of the same
    /// pair; absent for the ZS grid itself, baselines, and missing refs.
    pub pct_diff_vs_zs: Option<i64>,
    /// The ZS reference existed but was zero, so the difference is
    /// undefined.
    pub pct_diff_undefined: bool,
    pub significant_vs_baseline: bool,
    pub is_baseline: bool,
    pub best_in_column: bool,
    pub second_best_in_column: bool,
}

/// A source×target result grid for one setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultGrid {
    pub setup: Setup,
    pub sources: Vec<String>,
    pub targets: Vec<String>,
    /// Row-major `[source][target]`; `None` marks a missing pair.
    pub cells: Vec<Vec<Option<GridCell>>>,
}

fn round1(x: f64) -> f64 {
    (x * 1000.0).round() / 10.0
}

/// Builds the grid for `setup` from study results.
///
/// Baseline results (diagonal) are included whatever their setup, so the
/// mono-baseline fills the diagonal of every grid. `zs_reference` supplies
/// the percent-difference denominators for non-ZS grids; pass the same
/// slice as `results` when rendering the ZS grid itself. When several
/// results map to one (source, target) cell (hyperparameter variants of
/// one setup), the first in input order wins.
pub fn render_grid(results: &[RunResult], setup: Setup, zs_reference: &[RunResult]) -> ResultGrid {
    let relevant: Vec<&RunResult> = results
        .iter()
        .filter(|r| {
            (r.manifest.setup == setup || r.baseline)
                && r.manifest.source_languages.len() == 1
        })
        .collect();
    let mut sources: Vec<String> =
        relevant.iter().map(|r| r.manifest.single_source().to_string()).collect();
    let mut targets: Vec<String> =
        relevant.iter().map(|r| r.manifest.target_language.clone()).collect();
    sources.sort();
    sources.dedup();
    targets.sort();
    targets.dedup();

    let zs_lookup: BTreeMap<(String, String), f64> = zs_reference
        .iter()
        .filter(|r| {
            (r.manifest.setup == Setup::Zs || r.baseline) && r.manifest.source_languages.len() == 1
        })
        .map(|r| {
            (
                (r.manifest.single_source().to_string(), r.manifest.target_language.clone()),
                r.mean_f1,
            )
        })
        .collect();

    let mut cells: Vec<Vec<Option<GridCell>>> = sources
        .iter()
        .map(|source| {
            targets
                .iter()
                .map(|target| {
                    let result = relevant.iter().find(|r| {
                        r.manifest.single_source() == source
                            && &r.manifest.target_language == target
                    })?;
                    let annotate = setup != Setup::Zs && !result.baseline;
                    let zs_f1 =
                        zs_lookup.get(&(source.clone(), target.clone())).copied();
                    let (pct, undefined) = if annotate {
                        match zs_f1 {
                            Some(z) => match percent_diff(result.mean_f1, z) {
                                Some(d) => (Some(d), false),
                                None => (None, true),
                            },
                            None => (None, false),
                        }
                    } else {
                        (None, false)
                    };
                    Some(GridCell {
                        source: source.clone(),
                        target: target.clone(),
                        mean_f1: result.mean_f1,
                        display_value: round1(result.mean_f1),
                        pct_diff_vs_zs: pct,
                        pct_diff_undefined: undefined,
                        significant_vs_baseline: result
                            .comparisons
                            .iter()
                            .any(|c| c.significant),
                        is_baseline: result.baseline,
                        best_in_column: false,
                        second_best_in_column: false,
                    })
                })
                .collect()
        })
        .collect();

    // Best / second-best per column over all cells, ties to the earlier row.
    for (t, _) in targets.iter().enumerate() {
        let mut ranked: Vec<(usize, f64)> = Vec::new();
        for (s, _) in sources.iter().enumerate() {
            if let Some(cell) = &cells[s][t] {
                ranked.push((s, cell.mean_f1));
            }
        }
        ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        if let Some(&(s, _)) = ranked.first() {
            cells[s][t].as_mut().unwrap().best_in_column = true;
        }
        if let Some(&(s, _)) = ranked.get(1) {
            cells[s][t].as_mut().unwrap().second_best_in_column = true;
        }
    }

    ResultGrid { setup, sources, targets, cells }
}

impl ResultGrid {
    pub fn cell(&self, source: &str, target: &str) -> Option<&GridCell> {
        let s = self.sources.iter().position(|x| x == source)?;
        let t = self.targets.iter().position(|x| x == target)?;
        self.cells[s][t].as_ref()
    }

    /// Markdown table. Best values are bold, second best italic, `*` marks
    /// significance against the baseline, `(n)` the percent difference
    /// against the zero-shot cell, and `(—)` an undefined difference.
    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("| {} src \\ tgt |", self.setup));
        for t in &self.targets {
            out.push_str(&format!(" {t} |"));
        }
        out.push('\n');
        out.push_str("|---|");
        for _ in &self.targets {
            out.push_str("---|");
        }
        out.push('\n');
        for (s, source) in self.sources.iter().enumerate() {
            out.push_str(&format!("| **{source}** |"));
            for (t, _) in self.targets.iter().enumerate() {
                match &self.cells[s][t] {
                    None => out.push_str(" — |"),
                    Some(cell) => {
                        let mut text = format!("{:.1}", cell.display_value);
                        if cell.significant_vs_baseline {
                            text.push('*');
                        }
                        if cell.best_in_column {
                            text = format!("**{text}**");
                        } else if cell.second_best_in_column {
                            text = format!("_{text}_");
                        }
                        if let Some(d) = cell.pct_diff_vs_zs {
                            text.push_str(&format!(" ({d})"));
                        } else if cell.pct_diff_undefined {
                            text.push_str(" (—)");
                        }
                        if cell.is_baseline {
                            text.push_str(" ▢");
                        }
                        out.push_str(&format!(" {text} |"));
                    }
                }
            }
            out.push('\n');
        }
        out.push_str(
            "\n**bold** best per column, _italic_ second best, `*` significant vs baseline \
             (α=0.05), `(n)` percent difference vs the ZS cell, ▢ baseline diagonal.\n",
        );
        out
    }
}

/// One point of a sweep series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub series: String,
    pub x: u64,
    pub mean_f1: f64,
}

/// A sweep (few-shot k or source-language count) ready for plotting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSeries {
    /// Meaning of the x column.
    pub x_label: String,
    /// Whether the x axis is meant to be drawn in log scale.
    pub log_scale_x: bool,
    /// Sorted by (series, x).
    pub points: Vec<SweepPoint>,
}

impl SweepSeries {
    /// CSV with the fixed header `source,k_or_num_languages,mean_f1`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("source,k_or_num_languages,mean_f1\n");
        for p in &self.points {
            out.push_str(&format!("{},{},{}\n", p.series, p.x, p.mean_f1));
        }
        out
    }
}

/// Normalizes raw sweep points into a sorted series.
pub fn render_sweep(points: Vec<SweepPoint>, x_label: &str, log_scale_x: bool) -> SweepSeries {
    let mut points = points;
    points.sort_by(|a, b| a.series.cmp(&b.series).then(a.x.cmp(&b.x)));
    SweepSeries { x_label: x_label.to_string(), log_scale_x, points }
}

/// Few-shot k sweep for one target: one series per source language, x = k.
/// Drawn in log scale.
pub fn few_shot_sweep(results: &[RunResult], target: &str) -> SweepSeries {
    let points = results
        .iter()
        .filter(|r| {
            r.manifest.setup == Setup::Fs
                && r.manifest.target_language == target
                && r.manifest.few_shot_k.is_some()
        })
        .map(|r| SweepPoint {
            series: r.manifest.single_source().to_string(),
            x: r.manifest.few_shot_k.unwrap() as u64,
            mean_f1: r.mean_f1,
        })
        .collect();
    render_sweep(points, "k", true)
}

/// Incremental source-language sweep for one target: x = number of source
/// languages, y = the maximum mean F1 over the combinations of that size.
pub fn incremental_sources_sweep(results: &[RunResult], target: &str) -> SweepSeries {
    let mut best: BTreeMap<u64, f64> = BTreeMap::new();
    for r in results {
        if r.manifest.target_language != target || r.baseline {
            continue;
        }
        let eligible = r.manifest.setup == Setup::MultiZs
            || (r.manifest.setup == Setup::Zs && r.manifest.source_languages.len() == 1);
        if !eligible {
            continue;
        }
        let n = r.manifest.source_languages.len() as u64;
        let entry = best.entry(n).or_insert(f64::NEG_INFINITY);
        if r.mean_f1 > *entry {
            *entry = r.mean_f1;
        }
    }
    let points = best
        .into_iter()
        .map(|(x, mean_f1)| SweepPoint { series: target.to_string(), x, mean_f1 })
        .collect();
    render_sweep(points, "num_source_languages", false)
}

/// One row of the best-per-setup comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    /// Per-target best mean F1 for this row's system, with a significance
    /// marker against the baseline when available.
    pub cells: Vec<Option<ComparisonCell>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonCell {
    pub mean_f1: f64,
    pub display_value: f64,
    pub significant_vs_baseline: bool,
}

/// Best-per-setup comparison across targets: one row per baseline result
/// and one row per transfer setup holding its best source per target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub targets: Vec<String>,
    pub rows: Vec<ComparisonRow>,
}

pub fn render_comparison(results: &[RunResult]) -> ComparisonTable {
    let mut targets: Vec<String> =
        results.iter().map(|r| r.manifest.target_language.clone()).collect();
    targets.sort();
    targets.dedup();

    let mut rows = Vec::new();
    // Baseline row: the baseline result per target.
    let baseline_cells: Vec<Option<ComparisonCell>> = targets
        .iter()
        .map(|t| {
            results
                .iter()
                .find(|r| r.baseline && &r.manifest.target_language == t)
                .map(|r| ComparisonCell {
                    mean_f1: r.mean_f1,
                    display_value: round1(r.mean_f1),
                    significant_vs_baseline: false,
                })
        })
        .collect();
    rows.push(ComparisonRow { label: "baseline (target-trained)".into(), cells: baseline_cells });

    for setup in [Setup::Zs, Setup::ZsTrSrc, Setup::ZsTrTrg, Setup::Fs, Setup::ZsAdv, Setup::MultiZs] {
        let cells: Vec<Option<ComparisonCell>> = targets
            .iter()
            .map(|t| {
                results
                    .iter()
                    .filter(|r| {
                        r.manifest.setup == setup
                            && !r.baseline
                            && &r.manifest.target_language == t
                    })
                    .max_by(|a, b| a.mean_f1.partial_cmp(&b.mean_f1).unwrap())
                    .map(|r| ComparisonCell {
                        mean_f1: r.mean_f1,
                        display_value: round1(r.mean_f1),
                        significant_vs_baseline: r.comparisons.iter().any(|c| c.significant),
                    })
            })
            .collect();
        if cells.iter().any(Option::is_some) {
            rows.push(ComparisonRow { label: format!("{setup} (best)"), cells });
        }
    }
    ComparisonTable { targets, rows }
}

impl ComparisonTable {
    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| model |");
        for t in &self.targets {
            out.push_str(&format!(" {t} |"));
        }
        out.push_str("\n|---|");
        for _ in &self.targets {
            out.push_str("---|");
        }
        out.push('\n');
        for row in &self.rows {
            out.push_str(&format!("| {} |", row.label));
            for cell in &row.cells {
                match cell {
                    None => out.push_str(" — |"),
                    Some(c) => {
                        let star = if c.significant_vs_baseline { "*" } else { "" };
                        out.push_str(&format!(" {:.1}{star} |", c.display_value));
                    }
                }
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::Hyperparams;
    use crate::corpus::SamplingSpec;
    use crate::experiments::{Comparison, ExperimentManifest, PoolMode, SeedRun};

    /// A result fixture with the given mean; per-seed values are the mean
    /// with tiny symmetric jitter so aggregates stay exact.
    fn fixture(
        id: &str,
        setup: Setup,
        source: &str,
        target: &str,
        mean_f1: f64,
        significant: bool,
    ) -> RunResult {
        let manifest = ExperimentManifest {
            id: id.into(),
            setup,
            source_languages: vec![source.into()],
            target_language: target.into(),
            backend_name: "reference-v1".into(),
            hyperparams: Hyperparams::default(),
            seeds: vec![1, 2, 3, 4, 5],
            allow_seed_override: false,
            few_shot_k: if setup == Setup::Fs { Some(17) } else { None },
            shot_seed: 1,
            positive_majority_shots: false,
            adv: None,
            sampling: SamplingSpec { n_positive: 300, n_negative: 1400, seed: 7 },
            pool_mode: PoolMode::FixedTotal,
            allow_single_source: false,
        };
        let baseline = manifest.is_baseline();
        let per_seed = (1..=5)
            .map(|seed| SeedRun {
                seed,
                predictions: Vec::new(),
                f1_positive: mean_f1,
                audit: Vec::new(),
                training_log: Vec::new(),
            })
            .collect();
        let comparisons = if baseline {
            Vec::new()
        } else {
            vec![Comparison {
                other_manifest_id: format!("base-{target}"),
                p_value: if significant { 0.01 } else { 0.5 },
                significant,
            }]
        };
        RunResult { manifest, per_seed, mean_f1, comparisons, baseline }
    }

    #[test]
    fn percent_diff_reproduces_published_cells() {
        // Scale-invariant, so the ×100 display values can be used directly.
        assert_eq!(percent_diff(31.2, 35.2), Some(-11));
        assert_eq!(percent_diff(9.7, 4.6), Some(111));
        assert_eq!(percent_diff(1.5, 0.3), Some(400));
    }

    #[test]
    fn percent_diff_zero_reference_is_undefined() {
        assert_eq!(percent_diff(1.0, 0.0), None);
    }

    #[test]
    fn percent_diff_identity_and_sign() {
        for x in [0.1, 0.31, 0.495, 99.0] {
            assert_eq!(percent_diff(x, x), Some(0));
        }
        assert!(percent_diff(0.4, 0.3).unwrap() > 0);
        assert!(percent_diff(0.2, 0.3).unwrap() < 0);
        // Round half away from zero.
        assert_eq!(percent_diff(1.115, 1.0), Some(12));
        assert_eq!(percent_diff(0.885, 1.0), Some(-12));
    }

    /// The published zero-shot grid (values on the ×100 scale / 100).
    fn published_zs_grid() -> Vec<RunResult> {
        let langs = ["ar", "bg", "en", "es", "tr"];
        let table: [[f64; 5]; 5] = [
            [49.5, 35.2, 12.1, 26.6, 50.3],
            [4.6, 58.2, 16.6, 7.4, 27.4],
            [47.7, 41.0, 13.3, 27.6, 46.1],
            [0.3, 6.7, 11.1, 54.0, 24.8],
            [12.3, 20.5, 16.8, 15.6, 28.4],
        ];
        let mut results = Vec::new();
        for (i, src) in langs.iter().enumerate() {
            for (j, tgt) in langs.iter().enumerate() {
                results.push(fixture(
                    &format!("zs-{src}-{tgt}"),
                    Setup::Zs,
                    src,
                    tgt,
                    table[i][j] / 100.0,
                    false,
                ));
            }
        }
        results
    }

    #[test]
    fn zs_grid_marks_best_and_second_best_in_arabic_column() {
        let results = published_zs_grid();
        let grid = render_grid(&results, Setup::Zs, &results);
        let diag = grid.cell("ar", "ar").unwrap();
        assert_eq!(diag.display_value, 49.5);
        assert!(diag.best_in_column);
        assert!(diag.is_baseline);
        let second = grid.cell("en", "ar").unwrap();
        assert_eq!(second.display_value, 47.7);
        assert!(second.second_best_in_column);
        // ZS grid carries no percent annotations.
        assert!(grid
            .cells
            .iter()
            .flatten()
            .flatten()
            .all(|c| c.pct_diff_vs_zs.is_none()));
    }

    #[test]
    fn ties_break_by_row_order() {
        let results = vec![
            fixture("a", Setup::Zs, "aa", "cc", 0.5, false),
            fixture("b", Setup::Zs, "bb", "cc", 0.5, false),
        ];
        let grid = render_grid(&results, Setup::Zs, &results);
        assert!(grid.cell("aa", "cc").unwrap().best_in_column);
        assert!(grid.cell("bb", "cc").unwrap().second_best_in_column);
    }

    #[test]
    fn single_cell_grid_is_bold() {
        let results = vec![fixture("only", Setup::Zs, "aa", "bb", 0.4, false)];
        let grid = render_grid(&results, Setup::Zs, &results);
        assert!(grid.cell("aa", "bb").unwrap().best_in_column);
    }

    #[test]
    fn non_zs_grid_annotates_percent_difference() {
        let zs = published_zs_grid();
        let tr = vec![
            fixture("tr-ar-bg", Setup::ZsTrSrc, "ar", "bg", 0.312, true),
            fixture("tr-bg-ar", Setup::ZsTrSrc, "bg", "ar", 0.097, true),
        ];
        let grid = render_grid(&tr, Setup::ZsTrSrc, &zs);
        assert_eq!(grid.cell("ar", "bg").unwrap().pct_diff_vs_zs, Some(-11));
        assert_eq!(grid.cell("bg", "ar").unwrap().pct_diff_vs_zs, Some(111));
        assert!(grid.cell("ar", "bg").unwrap().significant_vs_baseline);
        let md = grid.to_markdown();
        assert!(md.contains("31.2*") && md.contains("(-11)"), "{md}");
    }

    #[test]
    fn missing_cells_render_as_dashes() {
        let results = vec![
            fixture("a", Setup::Zs, "aa", "bb", 0.4, false),
            fixture("b", Setup::Zs, "bb", "aa", 0.3, false),
        ];
        let grid = render_grid(&results, Setup::Zs, &results);
        assert!(grid.cell("aa", "aa").is_none());
        assert!(grid.to_markdown().contains("—"));
    }

    #[test]
    fn sweep_sorts_and_serializes() {
        let points = vec![
            SweepPoint { series: "en".into(), x: 200, mean_f1: 0.5 },
            SweepPoint { series: "ar".into(), x: 8, mean_f1: 0.3 },
            SweepPoint { series: "en".into(), x: 2, mean_f1: 0.2 },
        ];
        let sweep = render_sweep(points, "k", true);
        assert!(sweep.log_scale_x);
        let xs: Vec<(String, u64)> =
            sweep.points.iter().map(|p| (p.series.clone(), p.x)).collect();
        assert_eq!(xs, vec![("ar".into(), 8), ("en".into(), 2), ("en".into(), 200)]);
        let csv = sweep.to_csv();
        assert!(csv.starts_with("source,k_or_num_languages,mean_f1\n"));
        assert_eq!(csv.lines().count(), 4);
    }

    #[test]
    fn empty_sweep_is_header_only() {
        let sweep = render_sweep(Vec::new(), "k", true);
        assert_eq!(sweep.to_csv(), "source,k_or_num_languages,mean_f1\n");
    }

    #[test]
    fn few_shot_sweep_has_one_series_per_source() {
        let mut results = Vec::new();
        for k in [2u64, 4, 8, 10, 50, 100, 200] {
            for src in ["aa", "bb"] {
                let mut r = fixture(
                    &format!("fs-{src}-k{k}"),
                    Setup::Fs,
                    src,
                    "cc",
                    0.3 + k as f64 / 1000.0,
                    false,
                );
                r.manifest.few_shot_k = Some(k as usize);
                results.push(r);
            }
        }
        let sweep = few_shot_sweep(&results, "cc");
        assert_eq!(sweep.points.len(), 14);
        assert!(sweep.log_scale_x);
    }

    #[test]
    fn incremental_sweep_takes_max_per_size() {
        let mut one_a = fixture("m1a", Setup::MultiZs, "aa", "dd", 0.40, false);
        one_a.manifest.source_languages = vec!["aa".into()];
        let mut one_b = fixture("m1b", Setup::MultiZs, "bb", "dd", 0.45, false);
        one_b.manifest.source_languages = vec!["bb".into()];
        let mut two = fixture("m2", Setup::MultiZs, "aa", "dd", 0.38, false);
        two.manifest.source_languages = vec!["aa".into(), "bb".into()];
        let sweep = incremental_sources_sweep(&[one_a, one_b, two], "dd");
        assert_eq!(sweep.points.len(), 2);
        assert_eq!(sweep.points[0].x, 1);
        assert!((sweep.points[0].mean_f1 - 0.45).abs() < 1e-12);
        assert_eq!(sweep.points[1].x, 2);
        assert!((sweep.points[1].mean_f1 - 0.38).abs() < 1e-12);
    }

    #[test]
    fn comparison_table_rows() {
        let results = vec![
            fixture("base-ar", Setup::MonoBaseline, "ar", "ar", 0.495, false),
            fixture("zs-en-ar", Setup::Zs, "en", "ar", 0.477, false),
            fixture("zs-bg-ar", Setup::Zs, "bg", "ar", 0.046, true),
            fixture("fs-bg-ar", Setup::Fs, "bg", "ar", 0.551, false),
        ];
        let table = render_comparison(&results);
        assert_eq!(table.targets, vec!["ar".to_string()]);
        let labels: Vec<&str> = table.rows.iter().map(|r| r.label.as_str()).collect();
        assert!(labels.contains(&"baseline (target-trained)"));
        assert!(labels.contains(&"zs (best)"));
        assert!(labels.contains(&"fs (best)"));
        let zs_row = table.rows.iter().find(|r| r.label == "zs (best)").unwrap();
        let cell = zs_row.cells[0].as_ref().unwrap();
        assert_eq!(cell.display_value, 47.7);
        let md = table.to_markdown();
        assert!(md.contains("55.1"), "{md}");
    }
}
