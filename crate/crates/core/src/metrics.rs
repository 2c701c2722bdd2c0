//! Positive-class F1, seed aggregation, and paired t-test significance.

use serde::{Deserialize, Serialize};

/// Significance level used throughout result reporting.
pub const ALPHA: f64 = 0.05;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("length mismatch: predictions {predictions} vs gold {gold}")]
    LengthMismatch { predictions: usize, gold: usize },
    #[error("need at least {needed} observations, got {got}")]
    TooFewObservations { needed: usize, got: usize },
    #[error("labels must be 0 or 1, found {0}")]
    NonBinaryLabel(u8),
}

/// F1 together with a degeneracy flag for the no-positives edge case.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F1Outcome {
    pub value: f64,
    /// True when gold and predictions contain no positives at all
    /// (2TP + FP + FN = 0); the value is then defined as 0.0.
    pub degenerate: bool,
}

/// F1 of the positive class: `2TP / (2TP + FP + FN)`.
pub fn f1_positive(predictions: &[u8], gold: &[u8]) -> Result<f64, MetricsError> {
    f1_positive_detailed(predictions, gold).map(|o| o.value)
}

/// As [`f1_positive`], but reporting the degenerate-denominator flag.
pub fn f1_positive_detailed(predictions: &[u8], gold: &[u8]) -> Result<F1Outcome, MetricsError> {
    if predictions.len() != gold.len() || predictions.is_empty() {
        return Err(MetricsError::LengthMismatch {
            predictions: predictions.len(),
            gold: gold.len(),
        });
    }
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    for (&p, &g) in predictions.iter().zip(gold) {
        if p > 1 {
            return Err(MetricsError::NonBinaryLabel(p));
        }
        if g > 1 {
            return Err(MetricsError::NonBinaryLabel(g));
        }
        match (p, g) {
            (1, 1) => tp += 1,
            (1, 0) => fp += 1,
            (0, 1) => fn_ += 1,
            _ => {}
        }
    }
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        return Ok(F1Outcome { value: 0.0, degenerate: true });
    }
    Ok(F1Outcome { value: 2.0 * tp as f64 / denom as f64, degenerate: false })
}

/// Arithmetic mean of per-seed F1 values.
pub fn aggregate_seeds(f1s: &[f64]) -> Result<f64, MetricsError> {
    if f1s.is_empty() {
        return Err(MetricsError::TooFewObservations { needed: 1, got: 0 });
    }
    Ok(f1s.iter().sum::<f64>() / f1s.len() as f64)
}

/// Per-seed F1 values of two systems, paired by seed index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorePair {
    pub system_a: Vec<f64>,
    pub system_b: Vec<f64>,
}

impl ScorePair {
    pub fn new(system_a: Vec<f64>, system_b: Vec<f64>) -> Result<Self, MetricsError> {
        if system_a.len() != system_b.len() {
            return Err(MetricsError::LengthMismatch {
                predictions: system_a.len(),
                gold: system_b.len(),
            });
        }
        if system_a.len() < 2 {
            return Err(MetricsError::TooFewObservations { needed: 2, got: system_a.len() });
        }
        Ok(Self { system_a, system_b })
    }
}

/// Degenerate outcomes of the paired t-test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TTestFlag {
    /// Regular finite t statistic.
    Regular,
    /// All paired differences are exactly zero; p = 1.
    AllZeroDifferences,
    /// Zero sample variance with a nonzero mean; t diverges and p = 0.
    ZeroVarianceNonzeroMean,
}

/// Result of a two-sided paired t-test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedTTest {
    pub t_statistic: f64,
    pub degrees_of_freedom: usize,
    pub p_value: f64,
    pub flag: TTestFlag,
}

impl PairedTTest {
    pub fn significant(&self) -> bool {
        self.p_value < ALPHA
    }
}

/// Two-sided paired t-test on per-seed scores.
///
/// t = mean(d) / (sd(d)/√n) with d = a − b, Bessel-corrected sd, and
/// n − 1 degrees of freedom. All-zero differences give p = 1; zero
/// variance with nonzero mean gives p = 0, each with its flag set.
pub fn paired_t_test(pair: &ScorePair) -> Result<PairedTTest, MetricsError> {
    let n = pair.system_a.len();
    if n < 2 {
        return Err(MetricsError::TooFewObservations { needed: 2, got: n });
    }
    let d: Vec<f64> = pair
        .system_a
        .iter()
        .zip(&pair.system_b)
        .map(|(a, b)| a - b)
        .collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let df = n - 1;
    if var == 0.0 {
        return Ok(if mean == 0.0 {
            PairedTTest {
                t_statistic: 0.0,
                degrees_of_freedom: df,
                p_value: 1.0,
                flag: TTestFlag::AllZeroDifferences,
            }
        } else {
            PairedTTest {
                t_statistic: if mean > 0.0 { f64::INFINITY } else { f64::NEG_INFINITY },
                degrees_of_freedom: df,
                p_value: 0.0,
                flag: TTestFlag::ZeroVarianceNonzeroMean,
            }
        });
    }
    let t = mean / (var.sqrt() / (n as f64).sqrt());
    Ok(PairedTTest {
        t_statistic: t,
        degrees_of_freedom: df,
        p_value: two_sided_p(t, df as f64),
        flag: TTestFlag::Regular,
    })
}

/// Two-sided p-value for a t statistic: `I_x(ν/2, 1/2)` with
/// `x = ν/(ν + t²)`, the standard identity for 2·(1 − F(|t|)).
pub fn two_sided_p(t: f64, df: f64) -> f64 {
    let x = df / (df + t * t);
    reg_incomplete_beta(0.5 * df, 0.5, x).clamp(0.0, 1.0)
}

/// Regularized incomplete beta function `I_x(a, b)` via the Lentz
/// continued fraction, using the symmetry `I_x(a,b) = 1 − I_{1−x}(b,a)`
/// to stay in the rapidly converging region.
pub fn reg_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    assert!(a > 0.0 && b > 0.0, "beta parameters must be positive");
    assert!((0.0..=1.0).contains(&x), "x must be in [0,1]");
    if x == 0.0 {
        return 0.0;
    }
    if x == 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b
    }
}

/// Modified Lentz evaluation of the incomplete-beta continued fraction.
fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-15;
    const MAX_ITER: usize = 500;

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        // Even step.
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        // Odd step.
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Lanczos approximation of ln Γ(x) (g = 7, 9 coefficients).
pub fn ln_gamma(x: f64) -> f64 {
    #[allow(clippy::excessive_precision)]
    const COEFFS: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // Reflection formula.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEFFS[0];
    for (i, &c) in COEFFS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + 7.5;
    0.5 * (std::f64::consts::TAU).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use statrs::distribution::{ContinuousCDF, StudentsT};

    #[test]
    fn perfect_prediction_scores_one() {
        let gold = vec![1, 0, 1, 1, 0];
        assert_eq!(f1_positive(&gold, &gold).unwrap(), 1.0);
    }

    #[test]
    fn all_negative_predictions_score_zero() {
        let gold = vec![1, 0, 1];
        let preds = vec![0, 0, 0];
        assert_eq!(f1_positive(&preds, &gold).unwrap(), 0.0);
    }

    #[test]
    fn hand_oracle_two_thirds() {
        // TP=2, FP=1, FN=1 → 2·2/(4+1+1) = 2/3.
        let gold = vec![1, 1, 0, 1];
        let preds = vec![1, 1, 1, 0];
        assert_eq!(f1_positive(&preds, &gold).unwrap(), 2.0 / 3.0);
    }

    #[test]
    fn degenerate_case_flagged() {
        let out = f1_positive_detailed(&[0, 0], &[0, 0]).unwrap();
        assert_eq!(out.value, 0.0);
        assert!(out.degenerate);
    }

    #[test]
    fn length_mismatch_rejected() {
        assert!(f1_positive(&[0, 1], &[0]).is_err());
        assert!(f1_positive(&[], &[]).is_err());
    }

    #[test]
    fn aggregate_is_arithmetic_mean() {
        assert_eq!(aggregate_seeds(&[0.5; 5]).unwrap(), 0.5);
        assert_eq!(aggregate_seeds(&[0.0, 0.0, 0.0, 0.0, 1.0]).unwrap(), 0.2);
        assert!(aggregate_seeds(&[]).is_err());
    }

    #[test]
    fn equal_systems_give_p_one() {
        let pair = ScorePair::new(vec![0.4, 0.5, 0.6, 0.5, 0.4], vec![0.4, 0.5, 0.6, 0.5, 0.4])
            .unwrap();
        let out = paired_t_test(&pair).unwrap();
        assert_eq!(out.p_value, 1.0);
        assert_eq!(out.flag, TTestFlag::AllZeroDifferences);
    }

    #[test]
    fn zero_variance_nonzero_mean_gives_p_zero() {
        let pair = ScorePair::new(vec![0.6; 5], vec![0.5; 5]).unwrap();
        let out = paired_t_test(&pair).unwrap();
        assert_eq!(out.p_value, 0.0);
        assert_eq!(out.flag, TTestFlag::ZeroVarianceNonzeroMean);
        assert!(out.significant());
    }

    #[test]
    fn test_is_symmetric_in_its_arguments() {
        let a = vec![0.50, 0.48, 0.53, 0.44, 0.51];
        let b = vec![0.46, 0.49, 0.47, 0.45, 0.48];
        let p_ab = paired_t_test(&ScorePair::new(a.clone(), b.clone()).unwrap()).unwrap();
        let p_ba = paired_t_test(&ScorePair::new(b, a).unwrap()).unwrap();
        assert_abs_diff_eq!(p_ab.p_value, p_ba.p_value, epsilon = 1e-12);
        assert_abs_diff_eq!(p_ab.t_statistic, -p_ba.t_statistic, epsilon = 1e-12);
    }

    #[test]
    fn reference_difference_vector_reproduces_frozen_p() {
        // d = [0.02, −0.01, 0.03, 0.00, 0.01] → t = √2, p verified against
        // an external reference implementation ahead of time.
        let a = vec![0.02, -0.01, 0.03, 0.00, 0.01];
        let b = vec![0.0; 5];
        let out = paired_t_test(&ScorePair::new(a, b).unwrap()).unwrap();
        assert_abs_diff_eq!(out.t_statistic, std::f64::consts::SQRT_2, epsilon = 1e-12);
        assert_abs_diff_eq!(out.p_value, 0.230_199_641_080_498_7, epsilon = 1e-9);
    }

    #[test]
    fn t_table_critical_point() {
        // Published two-sided 5% critical value at df=4.
        let p = two_sided_p(2.776, 4.0);
        assert!((p - 0.05).abs() < 5e-4, "p = {p}");
    }

    #[test]
    fn cdf_matches_statrs_across_df_grid() {
        for df in [1.0, 2.0, 4.0, 7.0, 15.0, 40.0, 100.0] {
            let dist = StudentsT::new(0.0, 1.0, df).unwrap();
            for t in [-6.0, -2.5, -1.0, -0.2, 0.0, 0.3, 1.3, 3.3, 8.0] {
                let ours = two_sided_p(t, df);
                let reference = 2.0 * (1.0 - dist.cdf(t.abs()));
                assert_abs_diff_eq!(ours, reference, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn shift_invariance_of_paired_differences() {
        let a = vec![0.50, 0.48, 0.53, 0.44, 0.51];
        let b = vec![0.46, 0.49, 0.47, 0.45, 0.48];
        let shifted_a: Vec<f64> = a.iter().map(|x| x + 0.17).collect();
        let shifted_b: Vec<f64> = b.iter().map(|x| x + 0.17).collect();
        let p1 = paired_t_test(&ScorePair::new(a, b).unwrap()).unwrap().p_value;
        let p2 = paired_t_test(&ScorePair::new(shifted_a, shifted_b).unwrap()).unwrap().p_value;
        assert_abs_diff_eq!(p1, p2, epsilon = 1e-9);
    }

    proptest! {
        #[test]
        fn f1_matches_brute_force_confusion_matrix(
            pairs in prop::collection::vec((0u8..2, 0u8..2), 1..200)
        ) {
            let preds: Vec<u8> = pairs.iter().map(|(p, _)| *p).collect();
            let gold: Vec<u8> = pairs.iter().map(|(_, g)| *g).collect();
            // Independent oracle: count each confusion cell by full
            // enumeration over the label alphabet.
            let count = |p_want: u8, g_want: u8| -> u64 {
                preds.iter().zip(&gold).filter(|(p, g)| **p == p_want && **g == g_want).count() as u64
            };
            let (tp, fp, fn_) = (count(1, 1), count(1, 0), count(0, 1));
            let denom = 2 * tp + fp + fn_;
            let expected = if denom == 0 { 0.0 } else { 2.0 * tp as f64 / denom as f64 };
            prop_assert_eq!(f1_positive(&preds, &gold).unwrap(), expected);
        }

        #[test]
        fn f1_is_permutation_invariant(
            pairs in prop::collection::vec((0u8..2, 0u8..2), 2..100),
            seed in 0u64..1000
        ) {
            let preds: Vec<u8> = pairs.iter().map(|(p, _)| *p).collect();
            let gold: Vec<u8> = pairs.iter().map(|(_, g)| *g).collect();
            let mut idx: Vec<usize> = (0..pairs.len()).collect();
            crate::rng::DetRng::new(seed).shuffle(&mut idx);
            let preds_p: Vec<u8> = idx.iter().map(|&i| preds[i]).collect();
            let gold_p: Vec<u8> = idx.iter().map(|&i| gold[i]).collect();
            prop_assert_eq!(
                f1_positive(&preds, &gold).unwrap(),
                f1_positive(&preds_p, &gold_p).unwrap()
            );
        }

        #[test]
        fn p_values_stay_in_unit_interval(
            a in prop::collection::vec(0.0f64..1.0, 5),
            b in prop::collection::vec(0.0f64..1.0, 5)
        ) {
            let out = paired_t_test(&ScorePair::new(a, b).unwrap()).unwrap();
            prop_assert!((0.0..=1.0).contains(&out.p_value));
        }
    }
}
