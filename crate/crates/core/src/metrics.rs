//! Multi-label confusion accounting and micro/macro scores.
//!
//! Predictions are reduced per label (binary relevance): every (sample,
//! class) pair lands in exactly one of TP/FP/FN/TN, counts are pooled for
//! the micro scores and kept per class for the macro F-score. The
//! example-based accuracy is the mean Jaccard overlap |P∩L|/|P∪L| per
//! sample, computed in exact rational arithmetic; an exact-match ratio is
//! reported separately to keep the two notions distinct.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("predictions ({preds}) and labels ({labels}) differ in length")]
    LengthMismatch { preds: usize, labels: usize },
    #[error("empty input: rates are undefined on zero samples")]
    Empty,
    #[error("threshold {0} outside (0, 1)")]
    BadThreshold(f64),
    #[error("class width mismatch: {0} vs {1}")]
    ClassWidth(usize, usize),
    #[error("probability {value} at class {class} outside [0, 1] or not finite")]
    BadProbability { class: usize, value: f64 },
}

/// Set of active labels as a bitmask over `num_classes` (≤ 64).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    bits: u64,
    num_classes: usize,
}

impl LabelSet {
    pub fn empty(num_classes: usize) -> Self {
        assert!((1..=64).contains(&num_classes));
        Self {
            bits: 0,
            num_classes,
        }
    }

    pub fn from_bits(num_classes: usize, bits: u64) -> Self {
        let mut s = Self::empty(num_classes);
        s.bits = bits & mask_width(num_classes);
        s
    }

    pub fn from_indices(num_classes: usize, indices: &[usize]) -> Self {
        let mut s = Self::empty(num_classes);
        for &i in indices {
            s.insert(i);
        }
        s
    }

    pub fn insert(&mut self, class: usize) {
        assert!(class < self.num_classes);
        self.bits |= 1 << class;
    }

    pub fn contains(&self, class: usize) -> bool {
        class < self.num_classes && self.bits & (1 << class) != 0
    }

    pub fn bits(&self) -> u64 {
        self.bits
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn count(&self) -> u32 {
        self.bits.count_ones()
    }

    pub fn is_empty(&self) -> bool {
        self.bits == 0
    }

    pub fn intersection_count(&self, other: &LabelSet) -> u32 {
        (self.bits & other.bits).count_ones()
    }

    pub fn union_count(&self, other: &LabelSet) -> u32 {
        (self.bits | other.bits).count_ones()
    }

    pub fn difference_count(&self, other: &LabelSet) -> u32 {
        (self.bits & !other.bits).count_ones()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.num_classes).filter(|&c| self.contains(c))
    }
}

fn mask_width(num_classes: usize) -> u64 {
    if num_classes >= 64 {
        u64::MAX
    } else {
        (1u64 << num_classes) - 1
    }
}

/// Per-class membership probabilities plus thresholding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    probs: Vec<f64>,
}

impl PredictionSet {
    pub fn new(probs: Vec<f64>) -> Result<Self, MetricsError> {
        for (class, &value) in probs.iter().enumerate() {
            if !value.is_finite() || !(0.0..=1.0).contains(&value) {
                return Err(MetricsError::BadProbability { class, value });
            }
        }
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn num_classes(&self) -> usize {
        self.probs.len()
    }

    /// Classes whose probability strictly exceeds the threshold.
    pub fn mask(&self, tau: f64) -> LabelSet {
        let mut s = LabelSet::empty(self.probs.len());
        for (c, &p) in self.probs.iter().enumerate() {
            if p > tau {
                s.insert(c);
            }
        }
        s
    }
}

/// Exact nonnegative rational, kept reduced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Frac {
    num: u128,
    den: u128,
}

impl Frac {
    pub fn new(num: u128, den: u128) -> Self {
        assert!(den > 0);
        let g = gcd(num.max(1), den);
        Self {
            num: num / g,
            den: den / g,
        }
    }

    pub fn zero() -> Self {
        Self { num: 0, den: 1 }
    }

    pub fn add(self, other: Frac) -> Frac {
        Frac::new(
            self.num * other.den + other.num * self.den,
            self.den * other.den,
        )
    }

    pub fn div_int(self, k: u128) -> Frac {
        Frac::new(self.num, self.den * k)
    }

    pub fn to_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a.max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ClassCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub per_class: Vec<ClassCounts>,
    pub n_samples: usize,
}

impl ConfusionCounts {
    pub fn pooled(&self) -> ClassCounts {
        let mut t = ClassCounts::default();
        for c in &self.per_class {
            t.tp += c.tp;
            t.fp += c.fp;
            t.fn_ += c.fn_;
            t.tn += c.tn;
        }
        t
    }
}

/// Per-class confusion counts at threshold `tau`.
pub fn confusion_counts(
    preds: &[PredictionSet],
    labels: &[LabelSet],
    tau: f64,
) -> Result<ConfusionCounts, MetricsError> {
    if preds.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            preds: preds.len(),
            labels: labels.len(),
        });
    }
    if preds.is_empty() {
        return Err(MetricsError::Empty);
    }
    if !(tau > 0.0 && tau < 1.0) {
        return Err(MetricsError::BadThreshold(tau));
    }
    let k = labels[0].num_classes();
    let mut per_class = vec![ClassCounts::default(); k];
    for (p, l) in preds.iter().zip(labels.iter()) {
        if p.num_classes() != k || l.num_classes() != k {
            return Err(MetricsError::ClassWidth(p.num_classes(), k));
        }
        let pm = p.mask(tau);
        for (c, counts) in per_class.iter_mut().enumerate() {
            match (pm.contains(c), l.contains(c)) {
                (true, true) => counts.tp += 1,
                (true, false) => counts.fp += 1,
                (false, true) => counts.fn_ += 1,
                (false, false) => counts.tn += 1,
            }
        }
    }
    Ok(ConfusionCounts {
        per_class,
        n_samples: preds.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MicroScores {
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
    /// Set when any denominator was zero (score forced to 0).
    pub degenerate: bool,
}

/// Pooled precision / recall / F over all (sample, label) pairs.
pub fn micro_scores(counts: &ConfusionCounts) -> MicroScores {
    let t = counts.pooled();
    let mut degenerate = false;
    let mut ratio = |num: u64, den: u64| {
        if den == 0 {
            degenerate = true;
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let precision = ratio(t.tp, t.tp + t.fp);
    let recall = ratio(t.tp, t.tp + t.fn_);
    let f_score = ratio(2 * t.tp, 2 * t.tp + t.fp + t.fn_);
    MicroScores {
        precision,
        recall,
        f_score,
        degenerate,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroF {
    pub per_class: Vec<f64>,
    pub mean: f64,
    pub degenerate_classes: usize,
}

/// Per-class F-scores and their mean.
pub fn macro_f(counts: &ConfusionCounts) -> MacroF {
    let mut per_class = Vec::with_capacity(counts.per_class.len());
    let mut degenerate_classes = 0;
    for c in &counts.per_class {
        let den = 2 * c.tp + c.fp + c.fn_;
        if den == 0 {
            degenerate_classes += 1;
            per_class.push(0.0);
        } else {
            per_class.push(2.0 * c.tp as f64 / den as f64);
        }
    }
    let mean = per_class.iter().sum::<f64>() / per_class.len().max(1) as f64;
    MacroF {
        per_class,
        mean,
        degenerate_classes,
    }
}

/// Mean per-sample Jaccard overlap as an exact fraction; an empty
/// prediction against an empty label set counts as a full match.
pub fn example_accuracy_frac(
    preds: &[PredictionSet],
    labels: &[LabelSet],
    tau: f64,
) -> Result<Frac, MetricsError> {
    if preds.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            preds: preds.len(),
            labels: labels.len(),
        });
    }
    if preds.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut sum = Frac::zero();
    for (p, l) in preds.iter().zip(labels.iter()) {
        let pm = p.mask(tau);
        let union = pm.union_count(l);
        let sample = if union == 0 {
            Frac::new(1, 1)
        } else {
            Frac::new(pm.intersection_count(l) as u128, union as u128)
        };
        sum = sum.add(sample);
    }
    Ok(sum.div_int(preds.len() as u128))
}

pub fn example_accuracy(
    preds: &[PredictionSet],
    labels: &[LabelSet],
    tau: f64,
) -> Result<f64, MetricsError> {
    Ok(example_accuracy_frac(preds, labels, tau)?.to_f64())
}

/// Fraction of samples whose thresholded prediction equals the label set.
pub fn exact_match_ratio(
    preds: &[PredictionSet],
    labels: &[LabelSet],
    tau: f64,
) -> Result<f64, MetricsError> {
    if preds.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            preds: preds.len(),
            labels: labels.len(),
        });
    }
    if preds.is_empty() {
        return Err(MetricsError::Empty);
    }
    let hits = preds
        .iter()
        .zip(labels.iter())
        .filter(|(p, l)| p.mask(tau) == **l)
        .count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Everything the evaluation harness reports for one model/dataset pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub counts: ConfusionCounts,
    pub micro: MicroScores,
    pub macro_f: MacroF,
    pub example_accuracy: f64,
    pub exact_match: f64,
    pub threshold: f64,
}

pub fn compute_report(
    preds: &[PredictionSet],
    labels: &[LabelSet],
    tau: f64,
) -> Result<MetricsReport, MetricsError> {
    let counts = confusion_counts(preds, labels, tau)?;
    let micro = micro_scores(&counts);
    let macro_f = macro_f(&counts);
    let example_accuracy = example_accuracy(preds, labels, tau)?;
    let exact_match = exact_match_ratio(preds, labels, tau)?;
    Ok(MetricsReport {
        counts,
        micro,
        macro_f,
        example_accuracy,
        exact_match,
        threshold: tau,
    })
}

impl MetricsReport {
    /// CSV with one row per class plus a pooled aggregate row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,tp,fp,fn,tn,precision,recall,f_score\n");
        for (c, counts) in self.counts.per_class.iter().enumerate() {
            let p = if counts.tp + counts.fp == 0 {
                0.0
            } else {
                counts.tp as f64 / (counts.tp + counts.fp) as f64
            };
            let r = if counts.tp + counts.fn_ == 0 {
                0.0
            } else {
                counts.tp as f64 / (counts.tp + counts.fn_) as f64
            };
            out.push_str(&format!(
                "{c},{},{},{},{},{:.6},{:.6},{:.6}\n",
                counts.tp, counts.fp, counts.fn_, counts.tn, p, r, self.macro_f.per_class[c]
            ));
        }
        let t = self.counts.pooled();
        out.push_str(&format!(
            "all,{},{},{},{},{:.6},{:.6},{:.6}\n",
            t.tp, t.fp, t.fn_, t.tn, self.micro.precision, self.micro.recall, self.micro.f_score
        ));
        out
    }
}
