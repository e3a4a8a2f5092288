//! Perturbation metrics over masked-prediction records and the
//! almost-stochastic-order test used to compare attribution methods.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::special::normal_quantile;

/// Masking percentages evaluated per example.
pub const K_GRID: [u32; 9] = [10, 20, 30, 40, 50, 60, 70, 80, 90];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MaskDirection {
    /// The highest-ranked tokens are masked.
    Top,
    Bottom,
}

impl MaskDirection {
    pub fn as_str(self) -> &'static str {
        match self {
            MaskDirection::Top => "top",
            MaskDirection::Bottom => "bottom",
        }
    }
}

impl core::fmt::Display for MaskDirection {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl core::str::FromStr for MaskDirection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "top" => Ok(MaskDirection::Top),
            "bottom" => Ok(MaskDirection::Bottom),
            _ => Err(Error::invalid(alloc::format!("unknown mask direction {s:?}"))),
        }
    }
}

/// Predictions for one example with `k` percent of its tokens masked.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedRecord {
    pub example_id: String,
    pub k: u32,
    pub direction: MaskDirection,
    /// Probability of the predicted label on the original input.
    pub p_orig: f64,
    /// Probability of the same label on the masked input.
    pub p_masked: f64,
    pub y_hat: usize,
    pub y_masked: usize,
    pub y_true: usize,
}

impl MaskedRecord {
    pub fn validate(&self) -> Result<()> {
        if !K_GRID.contains(&self.k) {
            return Err(Error::invalid(alloc::format!(
                "record {}: k = {} is not on the grid 10..=90",
                self.example_id,
                self.k
            )));
        }
        for (name, p) in [("p_orig", self.p_orig), ("p_masked", self.p_masked)] {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::invalid(alloc::format!(
                    "record {}: {name} = {p} is outside (0, 1]",
                    self.example_id
                )));
            }
        }
        Ok(())
    }
}

fn check_cell(records: &[MaskedRecord], k: u32) -> Result<MaskDirection> {
    let first = records.first().ok_or(Error::EmptyRecords)?;
    for r in records {
        if r.k != k {
            return Err(Error::invalid(alloc::format!(
                "record {} has k = {} but k = {k} was requested",
                r.example_id,
                r.k
            )));
        }
        if r.direction != first.direction {
            return Err(Error::invalid("records mix top and bottom masking"));
        }
    }
    Ok(first.direction)
}

/// Mean drop in predicted-label probability.
pub fn aopc(records: &[MaskedRecord], k: u32) -> Result<f64> {
    check_cell(records, k)?;
    let sum: f64 = records.iter().map(|r| r.p_orig - r.p_masked).sum();
    Ok(sum / records.len() as f64)
}

/// Mean natural-log ratio of masked to original probability.
pub fn lodds(records: &[MaskedRecord], k: u32) -> Result<f64> {
    check_cell(records, k)?;
    let mut sum = 0.0;
    for r in records {
        if !(r.p_orig > 0.0 && r.p_masked > 0.0) {
            return Err(Error::Domain(alloc::format!(
                "record {} has a zero probability; floor probabilities before writing records",
                r.example_id
            )));
        }
        sum += libm::log(r.p_masked / r.p_orig);
    }
    Ok(sum / records.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Classes whose precision, recall or F1 had a zero denominator and
    /// were counted as 0.
    pub zero_division: usize,
}

/// Accuracy and macro-averaged precision, recall and F1 of `y_masked`
/// against `y_true`. The macro average runs over the classes that occur in
/// either column.
pub fn cls_metrics(records: &[MaskedRecord], num_classes: usize) -> Result<ClassMetrics> {
    if records.is_empty() {
        return Err(Error::EmptyRecords);
    }
    let mut tp = vec![0usize; num_classes];
    let mut pred = vec![0usize; num_classes];
    let mut gold = vec![0usize; num_classes];
    let mut correct = 0usize;
    for r in records {
        if r.y_true >= num_classes || r.y_masked >= num_classes {
            return Err(Error::invalid(alloc::format!(
                "record {}: class index outside 0..{num_classes}",
                r.example_id
            )));
        }
        pred[r.y_masked] += 1;
        gold[r.y_true] += 1;
        if r.y_masked == r.y_true {
            tp[r.y_true] += 1;
            correct += 1;
        }
    }
    let ratio = |num: f64, den: f64, zero: &mut usize| {
        if den > 0.0 {
            num / den
        } else {
            *zero += 1;
            0.0
        }
    };
    let (mut p_sum, mut r_sum, mut f_sum, mut present) = (0.0, 0.0, 0.0, 0usize);
    let mut zero_division = 0;
    for c in 0..num_classes {
        if pred[c] == 0 && gold[c] == 0 {
            continue;
        }
        present += 1;
        let p = ratio(tp[c] as f64, pred[c] as f64, &mut zero_division);
        let r = ratio(tp[c] as f64, gold[c] as f64, &mut zero_division);
        p_sum += p;
        r_sum += r;
        f_sum += ratio(2.0 * p * r, p + r, &mut zero_division);
    }
    let present = present as f64;
    Ok(ClassMetrics {
        accuracy: correct as f64 / records.len() as f64,
        precision: p_sum / present,
        recall: r_sum / present,
        f1: f_sum / present,
        zero_division,
    })
}

/// Number of points of the quantile grid.
pub const QUANTILE_GRID: usize = 1000;

fn quantiles(sample: &[f64]) -> Vec<f64> {
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    (0..QUANTILE_GRID)
        .map(|i| {
            let p = (i as f64 + 0.5) / QUANTILE_GRID as f64;
            let rank = libm::ceil(n as f64 * p) as usize;
            sorted[rank.clamp(1, n) - 1]
        })
        .collect()
}

fn ratio_from_quantiles(qa: &[f64], qb: &[f64]) -> f64 {
    // Both parts are accumulated separately so that swapping the samples
    // swaps them exactly and the two ratios share one denominator.
    let mut above = 0.0;
    let mut below = 0.0;
    for (a, b) in qa.iter().zip(qb) {
        let d = b - a;
        if d > 0.0 {
            above += d * d;
        } else {
            below += d * d;
        }
    }
    let total = above + below;
    if !(total > 0.0) {
        return 0.5;
    }
    // The larger share is taken as the complement of the smaller, which
    // makes the two orders sum to exactly 1.
    if above <= below {
        above / total
    } else {
        1.0 - below / total
    }
}

/// Share of the squared quantile gap where `b` beats `a`; higher scores
/// are better, so 0 means `a` dominates and 1 means `b` dominates.
pub fn violation_ratio(scores_a: &[f64], scores_b: &[f64]) -> Result<f64> {
    check_sample("scores_a", scores_a)?;
    check_sample("scores_b", scores_b)?;
    Ok(ratio_from_quantiles(&quantiles(scores_a), &quantiles(scores_b)))
}

fn check_sample(name: &str, s: &[f64]) -> Result<()> {
    if s.is_empty() {
        return Err(Error::invalid(alloc::format!("{name} is empty")));
    }
    if let Some(i) = s.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite {
            tensor: name.into(),
            index: i,
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AsoConfig {
    pub alpha: f64,
    pub tau: f64,
    pub n_bootstrap: usize,
    pub seed: u64,
}

impl Default for AsoConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            tau: 0.5,
            n_bootstrap: 1000,
            seed: 0,
        }
    }
}

impl AsoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 0.5) {
            return Err(Error::invalid("alpha must lie in (0, 0.5]"));
        }
        if !(self.tau >= 0.0 && self.tau <= 1.0) {
            return Err(Error::invalid("tau must lie in [0, 1]"));
        }
        if self.n_bootstrap < 2 {
            return Err(Error::invalid("at least two bootstrap replicates are needed"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AsoResult {
    pub eps_min: f64,
    pub eps_hat: f64,
    pub alpha: f64,
    pub tau: f64,
    pub n_bootstrap: usize,
    pub reject_h0: bool,
}

/// Almost-stochastic-order test of "`a` is better than `b`".
pub fn aso(scores_a: &[f64], scores_b: &[f64], config: &AsoConfig) -> Result<AsoResult> {
    config.validate()?;
    let eps_hat = violation_ratio(scores_a, scores_b)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut resample = |s: &[f64]| -> Vec<f64> {
        (0..s.len()).map(|_| s[rng.gen_range(0..s.len())]).collect()
    };
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..config.n_bootstrap {
        let ra = resample(scores_a);
        let rb = resample(scores_b);
        let e = ratio_from_quantiles(&quantiles(&ra), &quantiles(&rb));
        sum += e;
        sum_sq += e * e;
    }
    let b = config.n_bootstrap as f64;
    let mean = sum / b;
    let var = ((sum_sq - b * mean * mean) / (b - 1.0)).max(0.0);
    let sigma = libm::sqrt(var);
    let eps_min = (eps_hat + normal_quantile(config.alpha) * sigma).clamp(0.0, 1.0);
    Ok(AsoResult {
        eps_min,
        eps_hat,
        alpha: config.alpha,
        tau: config.tau,
        n_bootstrap: config.n_bootstrap,
        reject_h0: eps_min < config.tau,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Aopc,
    Lodds,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Aopc => "aopc",
            Metric::Lodds => "lodds",
        }
    }

    /// Whether a larger value of this metric means a better attribution
    /// under the given masking direction.
    pub fn higher_is_better(self, direction: MaskDirection) -> bool {
        matches!(
            (self, direction),
            (Metric::Aopc, MaskDirection::Top) | (Metric::Lodds, MaskDirection::Bottom)
        )
    }
}

impl core::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "aopc" => Ok(Metric::Aopc),
            "lodds" => Ok(Metric::Lodds),
            _ => Err(Error::invalid(alloc::format!("unknown metric {s:?}"))),
        }
    }
}

/// Per-example score for the test: the metric averaged over the k grid,
/// oriented so that higher is better. Examples are returned sorted by id.
pub fn example_scores(
    records: &[MaskedRecord],
    metric: Metric,
    direction: MaskDirection,
) -> Result<Vec<(String, f64)>> {
    let mut by_id: alloc::collections::BTreeMap<&str, (f64, usize)> = Default::default();
    for r in records.iter().filter(|r| r.direction == direction) {
        r.validate()?;
        let v = match metric {
            Metric::Aopc => r.p_orig - r.p_masked,
            Metric::Lodds => libm::log(r.p_masked / r.p_orig),
        };
        let slot = by_id.entry(r.example_id.as_str()).or_insert((0.0, 0));
        slot.0 += v;
        slot.1 += 1;
    }
    if by_id.is_empty() {
        return Err(Error::EmptyRecords);
    }
    let sign = if metric.higher_is_better(direction) { 1.0 } else { -1.0 };
    Ok(by_id
        .into_iter()
        .map(|(id, (s, n))| (String::from(id), sign * s / n as f64))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(p_orig: f64, p_masked: f64) -> MaskedRecord {
        MaskedRecord {
            example_id: "x".into(),
            k: 10,
            direction: MaskDirection::Top,
            p_orig,
            p_masked,
            y_hat: 0,
            y_masked: 0,
            y_true: 0,
        }
    }

    fn labels(pred: &[usize], gold: &[usize]) -> Vec<MaskedRecord> {
        pred.iter()
            .zip(gold)
            .map(|(&p, &g)| MaskedRecord {
                y_masked: p,
                y_true: g,
                ..rec(0.9, 0.5)
            })
            .collect()
    }

    #[test]
    fn aopc_examples() {
        assert!((aopc(&[rec(0.9, 0.4), rec(0.8, 0.6)], 10).unwrap() - 0.35).abs() < 1e-12);
        assert_eq!(aopc(&[rec(0.7, 0.7)], 10).unwrap(), 0.0);
        assert_eq!(aopc(&[rec(1.0, 0.5)], 10).unwrap(), 0.5);
        assert_eq!(aopc(&[], 10), Err(Error::EmptyRecords));
        let mut other = rec(0.9, 0.4);
        other.k = 20;
        assert!(matches!(aopc(&[rec(0.9, 0.4), other], 10), Err(Error::Invalid(_))));
    }

    #[test]
    fn lodds_examples() {
        let v = lodds(&[rec(0.9, 0.4), rec(0.8, 0.6)], 10).unwrap();
        assert!((v + 0.54931).abs() < 1e-5, "{v}");
        assert_eq!(lodds(&[rec(0.3, 0.3)], 10).unwrap(), 0.0);
        assert!((lodds(&[rec(0.5, 1.0)], 10).unwrap() - core::f64::consts::LN_2).abs() < 1e-12);
        assert!(matches!(lodds(&[rec(0.5, 0.0)], 10), Err(Error::Domain(_))));
    }

    #[test]
    fn perfect_predictions() {
        let m = cls_metrics(&labels(&[0, 1, 2, 1], &[0, 1, 2, 1]), 3).unwrap();
        assert_eq!((m.accuracy, m.precision, m.recall, m.f1), (1.0, 1.0, 1.0, 1.0));
        assert_eq!(m.zero_division, 0);
    }

    #[test]
    fn binary_half_right() {
        let m = cls_metrics(&labels(&[1, 1, 0, 0], &[1, 0, 1, 0]), 2).unwrap();
        assert_eq!(m.accuracy, 0.5);
        assert!((m.f1 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn unpredicted_class_counts_zero_precision() {
        let m = cls_metrics(&labels(&[0, 0], &[0, 1]), 2).unwrap();
        assert_eq!(m.zero_division, 2);
        assert!((m.precision - 0.25).abs() < 1e-12);
        assert!(cls_metrics(&labels(&[0], &[3]), 2).is_err());
    }

    #[test]
    fn violation_ratio_extremes() {
        assert_eq!(violation_ratio(&[1.0; 50], &[0.0; 50]).unwrap(), 0.0);
        assert_eq!(violation_ratio(&[0.0; 50], &[1.0; 50]).unwrap(), 1.0);
        let s = [0.3, 0.1, 0.7];
        assert_eq!(violation_ratio(&s, &s).unwrap(), 0.5);
        assert!(violation_ratio(&[], &s).is_err());
    }

    #[test]
    fn aso_full_dominance() {
        let r = aso(&[1.0; 50], &[0.0; 50], &AsoConfig::default()).unwrap();
        assert_eq!((r.eps_hat, r.eps_min), (0.0, 0.0));
        assert!(r.reject_h0);
        assert!(aso(&[1.0], &[0.0], &AsoConfig { alpha: 0.7, ..Default::default() }).is_err());
    }

    #[test]
    fn orientation() {
        assert!(Metric::Aopc.higher_is_better(MaskDirection::Top));
        assert!(!Metric::Lodds.higher_is_better(MaskDirection::Top));
        assert!(Metric::Lodds.higher_is_better(MaskDirection::Bottom));
        let records = [rec(0.9, 0.4), MaskedRecord { k: 20, ..rec(0.9, 0.6) }];
        let s = example_scores(&records, Metric::Aopc, MaskDirection::Top).unwrap();
        assert_eq!(s.len(), 1);
        assert!((s[0].1 - 0.4).abs() < 1e-12);
    }
}
