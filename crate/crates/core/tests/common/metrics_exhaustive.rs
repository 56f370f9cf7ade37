//! Brute-force equivalence oracle for the multi-label metrics.
//!
//! Every prediction/label combination with up to 3 samples over 3 classes
//! is enumerated (64 + 64² + 64³ = 266,304 cases). The oracle recomputes
//! all scores from first principles via per-sample set arithmetic — pooled
//! |P∩L|, |P−L|, |L−P| sums — a route independent of the per-class
//! bit-counting the implementation uses, and the comparison is exact.

use szoo_core::metrics::{
    self, confusion_counts, example_accuracy_frac, exact_match_ratio, micro_scores, Frac,
    LabelSet, PredictionSet,
};

const CLASSES: usize = 3;

fn pred_from_mask(mask: u64) -> PredictionSet {
    PredictionSet::new(
        (0..CLASSES)
            .map(|c| if mask & (1 << c) != 0 { 0.9 } else { 0.1 })
            .collect(),
    )
    .expect("probabilities valid")
}

struct OracleSums {
    tp: u64,
    fp: u64,
    fn_: u64,
    tn: u64,
    jaccard: Frac,
    exact: u64,
    per_class_f_num_den: Vec<(u64, u64)>,
}

/// First-principles recomputation over (pred, label) mask pairs.
fn oracle(cases: &[(u64, u64)]) -> OracleSums {
    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut fn_ = 0u64;
    let mut tn = 0u64;
    let mut jaccard = Frac::zero();
    let mut exact = 0u64;
    let mut class_tp = [0u64; CLASSES];
    let mut class_fp = [0u64; CLASSES];
    let mut class_fn = [0u64; CLASSES];
    for &(p, l) in cases {
        tp += (p & l).count_ones() as u64;
        fp += (p & !l & 0b111).count_ones() as u64;
        fn_ += (l & !p & 0b111).count_ones() as u64;
        tn += (!p & !l & 0b111).count_ones() as u64;
        let union = (p | l).count_ones() as u128;
        jaccard = jaccard.add(if union == 0 {
            Frac::new(1, 1)
        } else {
            Frac::new((p & l).count_ones() as u128, union)
        });
        if p == l {
            exact += 1;
        }
        for c in 0..CLASSES {
            let (pc, lc) = (p >> c & 1 == 1, l >> c & 1 == 1);
            match (pc, lc) {
                (true, true) => class_tp[c] += 1,
                (true, false) => class_fp[c] += 1,
                (false, true) => class_fn[c] += 1,
                (false, false) => {}
            }
        }
    }
    let per_class_f_num_den = (0..CLASSES)
        .map(|c| (2 * class_tp[c], 2 * class_tp[c] + class_fp[c] + class_fn[c]))
        .collect();
    OracleSums {
        tp,
        fp,
        fn_,
        tn,
        jaccard: jaccard.div_int(cases.len() as u128),
        exact,
        per_class_f_num_den,
    }
}

fn check_cases(cases: &[(u64, u64)]) {
    let preds: Vec<PredictionSet> = cases.iter().map(|&(p, _)| pred_from_mask(p)).collect();
    let labels: Vec<LabelSet> = cases
        .iter()
        .map(|&(_, l)| LabelSet::from_bits(CLASSES, l))
        .collect();
    let want = oracle(cases);
    let counts = confusion_counts(&preds, &labels, 0.5).expect("counts");
    let pooled = counts.pooled();
    assert_eq!(
        (pooled.tp, pooled.fp, pooled.fn_, pooled.tn),
        (want.tp, want.fp, want.fn_, want.tn),
        "pooled counts for {cases:?}"
    );
    // exact rational agreement: same integer numerators/denominators give
    // bit-identical f64 quotients
    let micro = micro_scores(&counts);
    let div = |n: u64, d: u64| if d == 0 { 0.0 } else { n as f64 / d as f64 };
    assert_eq!(micro.precision, div(want.tp, want.tp + want.fp), "{cases:?}");
    assert_eq!(micro.recall, div(want.tp, want.tp + want.fn_), "{cases:?}");
    assert_eq!(
        micro.f_score,
        div(2 * want.tp, 2 * want.tp + want.fp + want.fn_),
        "{cases:?}"
    );
    let macro_f = metrics::macro_f(&counts);
    for (c, &(n, d)) in want.per_class_f_num_den.iter().enumerate() {
        assert_eq!(macro_f.per_class[c], div(n, d), "class {c} of {cases:?}");
    }
    let acc = example_accuracy_frac(&preds, &labels, 0.5).expect("accuracy");
    assert_eq!(acc, want.jaccard, "jaccard for {cases:?}");
    let em = exact_match_ratio(&preds, &labels, 0.5).expect("exact match");
    assert_eq!(em, want.exact as f64 / cases.len() as f64, "{cases:?}");
}

pub fn exhaustive_up_to_three_samples_three_classes() {
    let masks = 1u64 << CLASSES; // 8 predictions x 8 labels per sample
    let mut total = 0usize;
    // one sample
    for p in 0..masks {
        for l in 0..masks {
            check_cases(&[(p, l)]);
            total += 1;
        }
    }
    // two samples
    for a in 0..masks * masks {
        for b in 0..masks * masks {
            let c0 = (a / masks, a % masks);
            let c1 = (b / masks, b % masks);
            check_cases(&[c0, c1]);
            total += 1;
        }
    }
    // three samples
    for a in 0..masks * masks {
        for b in 0..masks * masks {
            for c in 0..masks * masks {
                let c0 = (a / masks, a % masks);
                let c1 = (b / masks, b % masks);
                let c2 = (c / masks, c % masks);
                check_cases(&[c0, c1, c2]);
                total += 1;
            }
        }
    }
    assert_eq!(total, 64 + 64 * 64 + 64 * 64 * 64);
}

pub fn hand_case_is_exactly_two_thirds() {
    // L1={A,B}, P1={A}; L2={B}, P2={B,C}
    let cases = [(0b001u64, 0b011u64), (0b110, 0b010)];
    let preds: Vec<PredictionSet> = cases.iter().map(|&(p, _)| pred_from_mask(p)).collect();
    let labels: Vec<LabelSet> = cases
        .iter()
        .map(|&(_, l)| LabelSet::from_bits(CLASSES, l))
        .collect();
    let m = micro_scores(&confusion_counts(&preds, &labels, 0.5).unwrap());
    assert_eq!(m.precision, 2.0 / 3.0);
    assert_eq!(m.recall, 2.0 / 3.0);
    assert_eq!(m.f_score, 2.0 / 3.0);
}
