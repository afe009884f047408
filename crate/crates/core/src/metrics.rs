//! Sentence BLEU for separation output and set-based multi-label scores.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_N: usize = 4;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Smoothing {
    Off,
    /// A zero n-gram precision becomes `1 / (2 * candidate n-gram count)`.
    #[default]
    Half,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BleuScore {
    /// Clipped n-gram precisions for n = 1..4 (0 where the candidate has no
    /// n-grams of that order).
    pub per_n: [f64; MAX_N],
    pub brevity_penalty: f64,
    pub value: f64,
}

fn ngram_counts<T: Hash + Eq>(seq: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if seq.len() >= n {
        for w in seq.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Sentence BLEU: clipped precisions for n up to `min(4, |candidate|)`,
/// combined geometrically and scaled by the brevity penalty.
pub fn bleu<T: Hash + Eq>(
    candidate: &[T],
    reference: &[T],
    smoothing: Smoothing,
) -> Result<BleuScore> {
    if reference.is_empty() {
        return Err(Error::EmptyInput("bleu reference"));
    }
    let (c, r) = (candidate.len(), reference.len());
    let brevity_penalty = if c >= r {
        1.0
    } else if c == 0 {
        0.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    };
    let mut per_n = [0.0; MAX_N];
    let orders = c.min(MAX_N);
    let mut log_sum = 0.0;
    let mut zero = c == 0;
    for n in 1..=orders {
        let cand = ngram_counts(candidate, n);
        let refc = ngram_counts(reference, n);
        let total = c + 1 - n;
        let clipped: usize = cand
            .iter()
            .map(|(g, &k)| k.min(refc.get(g).copied().unwrap_or(0)))
            .sum();
        per_n[n - 1] = clipped as f64 / total as f64;
        let p = match (clipped, smoothing) {
            (0, Smoothing::Off) => {
                zero = true;
                continue;
            }
            (0, Smoothing::Half) => 1.0 / (2.0 * total as f64),
            _ => per_n[n - 1],
        };
        log_sum += p.ln();
    }
    let value = if zero {
        0.0
    } else {
        brevity_penalty * (log_sum / orders as f64).exp()
    };
    Ok(BleuScore {
        per_n,
        brevity_penalty,
        value,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct BleuReport {
    /// Mean sentence BLEU per class; `None` for classes with no instances.
    pub per_class: Vec<Option<f64>>,
    pub overall: f64,
    pub sentences: Vec<f64>,
}

/// Averages sentence BLEU overall and within each class. An instance counts
/// toward every class in its label set.
pub fn bleu_report<T: Hash + Eq, S: AsRef<[T]>>(
    predictions: &[S],
    references: &[S],
    classes: &[Vec<usize>],
    num_classes: usize,
    smoothing: Smoothing,
) -> Result<BleuReport> {
    if predictions.len() != references.len() {
        return Err(Error::LengthMismatch {
            left: predictions.len(),
            right: references.len(),
        });
    }
    if classes.len() != predictions.len() {
        return Err(Error::LengthMismatch {
            left: classes.len(),
            right: predictions.len(),
        });
    }
    if predictions.is_empty() {
        return Err(Error::EmptyInput("bleu_report"));
    }
    let sentences = predictions
        .iter()
        .zip(references)
        .map(|(p, r)| bleu(p.as_ref(), r.as_ref(), smoothing).map(|s| s.value))
        .collect::<Result<Vec<f64>>>()?;
    let mut sums = vec![(0.0, 0usize); num_classes];
    for (s, cs) in sentences.iter().zip(classes) {
        for &c in cs {
            let slot = sums.get_mut(c).ok_or(Error::LabelOutOfRange {
                index: c,
                classes: num_classes,
            })?;
            slot.0 += s;
            slot.1 += 1;
        }
    }
    Ok(BleuReport {
        per_class: sums
            .iter()
            .map(|&(s, n)| (n > 0).then(|| s / n as f64))
            .collect(),
        overall: sentences.iter().sum::<f64>() / sentences.len() as f64,
        sentences,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassificationScores {
    pub per_class: Vec<ClassScores>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    /// Fraction of instances whose predicted set equals the true set.
    pub accuracy: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn classification_report(
    pred_sets: &[Vec<usize>],
    true_sets: &[Vec<usize>],
    num_classes: usize,
) -> Result<ClassificationScores> {
    if pred_sets.len() != true_sets.len() {
        return Err(Error::LengthMismatch {
            left: pred_sets.len(),
            right: true_sets.len(),
        });
    }
    if pred_sets.is_empty() {
        return Err(Error::EmptyInput("classification_report"));
    }
    let to_mask = |set: &[usize]| -> Result<Vec<bool>> {
        let mut m = vec![false; num_classes];
        for &l in set {
            *m.get_mut(l).ok_or(Error::LabelOutOfRange {
                index: l,
                classes: num_classes,
            })? = true;
        }
        Ok(m)
    };
    let mut tp = vec![0usize; num_classes];
    let mut fp = vec![0usize; num_classes];
    let mut fn_ = vec![0usize; num_classes];
    let mut exact = 0;
    for (p, t) in pred_sets.iter().zip(true_sets) {
        let (p, t) = (to_mask(p)?, to_mask(t)?);
        if p == t {
            exact += 1;
        }
        for l in 0..num_classes {
            match (p[l], t[l]) {
                (true, true) => tp[l] += 1,
                (true, false) => fp[l] += 1,
                (false, true) => fn_[l] += 1,
                _ => {}
            }
        }
    }
    let per_class: Vec<ClassScores> = (0..num_classes)
        .map(|l| {
            let precision = ratio(tp[l], tp[l] + fp[l]);
            let recall = ratio(tp[l], tp[l] + fn_[l]);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassScores {
                precision,
                recall,
                f1,
                support: tp[l] + fn_[l],
            }
        })
        .collect();
    let mean =
        |f: fn(&ClassScores) -> f64| per_class.iter().map(f).sum::<f64>() / num_classes as f64;
    Ok(ClassificationScores {
        macro_precision: mean(|c| c.precision),
        macro_recall: mean(|c| c.recall),
        macro_f1: mean(|c| c.f1),
        accuracy: exact as f64 / pred_sets.len() as f64,
        per_class,
    })
}

/// One machine-readable metric line.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRecord {
    pub scenario: String,
    pub model: String,
    pub class: String,
    pub metric: String,
    pub value: f64,
    pub std: Option<f64>,
}

impl MetricRecord {
    /// `scenario model class metric value std` with `-` for an absent std.
    pub fn to_line(&self) -> String {
        let std = self.std.map_or("-".to_string(), |s| format!("{s:.6}"));
        format!(
            "{}\t{}\t{}\t{}\t{:.6}\t{}",
            self.scenario, self.model, self.class, self.metric, self.value, std
        )
    }

    pub fn parse(line: &str) -> Option<Self> {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 6 {
            return None;
        }
        Some(Self {
            scenario: f[0].into(),
            model: f[1].into(),
            class: f[2].into(),
            metric: f[3].into(),
            value: f[4].parse().ok()?,
            std: if f[5] == "-" {
                None
            } else {
                Some(f[5].parse().ok()?)
            },
        })
    }
}

/// Left-aligned first column, right-aligned rest.
pub fn render_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let cols = header.len();
    let mut width: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (i, c) in r.iter().enumerate().take(cols) {
            width[i] = width[i].max(c.len());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, cells: Vec<&str>| {
        for (i, c) in cells.iter().enumerate() {
            if i == 0 {
                let _ = write!(out, "{c:<w$}", w = width[0]);
            } else {
                let _ = write!(out, "  {c:>w$}", w = width[i]);
            }
        }
        out.push('\n');
    };
    line(&mut out, header.to_vec());
    let total: usize = width.iter().sum::<usize>() + 2 * (cols - 1);
    out.push_str(&"-".repeat(total));
    out.push('\n');
    for r in rows {
        line(&mut out, r.iter().map(String::as_str).collect());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Counting by direct slice comparison, no hashing.
    fn brute_bleu(c: &[u8], r: &[u8], smooth: bool) -> f64 {
        if c.is_empty() {
            return 0.0;
        }
        let orders = c.len().min(4);
        let mut logs = 0.0;
        for n in 1..=orders {
            let cg: Vec<&[u8]> = c.windows(n).collect();
            let rg: Vec<&[u8]> = if r.len() >= n {
                r.windows(n).collect()
            } else {
                vec![]
            };
            let mut clipped = 0;
            let mut done: Vec<&[u8]> = Vec::new();
            for g in &cg {
                if done.contains(g) {
                    continue;
                }
                done.push(g);
                let in_c = cg.iter().filter(|x| *x == g).count();
                let in_r = rg.iter().filter(|x| *x == g).count();
                clipped += in_c.min(in_r);
            }
            let p = if clipped == 0 {
                if !smooth {
                    return 0.0;
                }
                0.5 / cg.len() as f64
            } else {
                clipped as f64 / cg.len() as f64
            };
            logs += p.ln();
        }
        let bp = if c.len() >= r.len() {
            1.0
        } else {
            (1.0 - r.len() as f64 / c.len() as f64).exp()
        };
        bp * (logs / orders as f64).exp()
    }

    #[test]
    fn bleu_examples() {
        let s = bleu(&[1, 2, 3], &[1, 2, 3], Smoothing::Half).unwrap();
        assert_eq!(s.value, 1.0);
        let s = bleu::<u8>(&[], &[1, 2], Smoothing::Half).unwrap();
        assert_eq!(s.value, 0.0);
        let s = bleu(
            &["a", "b", "c", "d"],
            &["a", "b", "c", "d", "e"],
            Smoothing::Half,
        )
        .unwrap();
        assert_eq!(s.per_n, [1.0, 1.0, 1.0, 1.0]);
        assert!((s.brevity_penalty - (-0.25f64).exp()).abs() < 1e-15);
        assert!((s.value - 0.7788007830714049).abs() < 1e-12);
        assert!(matches!(
            bleu::<u8>(&[1], &[], Smoothing::Off),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn smoothing_only_touches_zero_counts() {
        // no shared bigram: p2 = 0 -> 1/(2*3)
        let s = bleu(&[1, 3, 2, 4], &[1, 2, 3, 4], Smoothing::Half).unwrap();
        let want = ((1.0f64).ln() + (1.0f64 / 6.0).ln() + (1.0f64 / 4.0).ln() + 0.5f64.ln()) / 4.0;
        assert!((s.value - want.exp()).abs() < 1e-15);
        assert_eq!(
            bleu(&[1, 3, 2, 4], &[1, 2, 3, 4], Smoothing::Off)
                .unwrap()
                .value,
            0.0
        );
    }

    proptest! {
        #[test]
        fn matches_brute_force(
            c in proptest::collection::vec(0u8..10, 1..=25),
            r in proptest::collection::vec(0u8..10, 1..=25),
        ) {
            for (mode, smooth) in [(Smoothing::Half, true), (Smoothing::Off, false)] {
                let got = bleu(&c, &r, mode).unwrap().value;
                prop_assert!((got - brute_bleu(&c, &r, smooth)).abs() < 1e-12);
                prop_assert!((0.0..=1.0).contains(&got));
            }
        }

        #[test]
        fn invariant_under_relabeling(
            c in proptest::collection::vec(0u8..6, 0..=20),
            r in proptest::collection::vec(0u8..6, 1..=20),
            shift in 1u8..6,
        ) {
            let f = |s: &[u8]| -> Vec<u8> { s.iter().map(|x| (x + shift) % 6 + 100).collect() };
            let a = bleu(&c, &r, Smoothing::Half).unwrap().value;
            let b = bleu(&f(&c), &f(&r), Smoothing::Half).unwrap().value;
            prop_assert_eq!(a, b);
        }

        #[test]
        fn one_exactly_when_equal(
            c in proptest::collection::vec(0u8..4, 0..=12),
            r in proptest::collection::vec(0u8..4, 1..=12),
        ) {
            let v = bleu(&c, &r, Smoothing::Half).unwrap().value;
            prop_assert_eq!(v == 1.0, c == r);
            prop_assert_eq!(bleu(&r, &r, Smoothing::Half).unwrap().value, 1.0);
        }

        #[test]
        fn macro_f1_ignores_class_permutation(
            sets in proptest::collection::vec(
                (proptest::collection::btree_set(0usize..4, 0..3), proptest::collection::btree_set(0usize..4, 1..3)),
                1..30),
            rot in 0usize..4,
        ) {
            let p: Vec<Vec<usize>> = sets.iter().map(|(a, _)| a.iter().copied().collect()).collect();
            let t: Vec<Vec<usize>> = sets.iter().map(|(_, b)| b.iter().copied().collect()).collect();
            let perm = |v: &Vec<Vec<usize>>| -> Vec<Vec<usize>> {
                v.iter().map(|s| s.iter().map(|l| (l + rot) % 4).collect()).collect()
            };
            let a = classification_report(&p, &t, 4).unwrap();
            let b = classification_report(&perm(&p), &perm(&t), 4).unwrap();
            prop_assert!((a.macro_f1 - b.macro_f1).abs() < 1e-12);
            prop_assert_eq!(a.accuracy, b.accuracy);
        }
    }

    #[test]
    fn bleu_report_averages() {
        let preds = vec![vec![1, 2, 3], vec![1, 2], vec![4, 4, 4, 4]];
        let refs = vec![vec![1, 2, 3], vec![1, 2], vec![4, 4, 4, 4]];
        let rep = bleu_report(
            &preds,
            &refs,
            &[vec![0], vec![0, 2], vec![2]],
            3,
            Smoothing::Half,
        )
        .unwrap();
        assert_eq!(rep.per_class, vec![Some(1.0), None, Some(1.0)]);
        assert_eq!(rep.overall, 1.0);

        let preds = vec![vec![1, 2, 3], vec![3, 1]];
        let refs = vec![vec![1, 2, 4], vec![1, 3]];
        let rep = bleu_report(&preds, &refs, &[vec![1], vec![1]], 2, Smoothing::Half).unwrap();
        assert_eq!(rep.per_class[1], Some(rep.overall));
        assert!(bleu_report(&preds, &refs[..1], &[vec![1], vec![1]], 2, Smoothing::Half).is_err());
    }

    #[test]
    fn classification_examples() {
        let t = vec![vec![0], vec![1, 2], vec![2]];
        let s = classification_report(&t, &t, 3).unwrap();
        assert_eq!((s.accuracy, s.macro_f1), (1.0, 1.0));

        // A=0, B=1; class 2 never appears
        let preds = vec![vec![0], vec![0, 1], vec![1], vec![]];
        let truth = vec![vec![0], vec![1], vec![1], vec![0]];
        let s = classification_report(&preds, &truth, 3).unwrap();
        let a = s.per_class[0];
        assert_eq!((a.precision, a.recall, a.f1), (0.5, 0.5, 0.5));
        let b = s.per_class[1];
        assert_eq!((b.precision, b.recall, b.f1), (1.0, 1.0, 1.0));
        let c = s.per_class[2];
        assert_eq!((c.precision, c.recall, c.f1), (0.0, 0.0, 0.0));
        assert_eq!(s.accuracy, 0.5);
        assert!((s.macro_f1 - 0.5).abs() < 1e-15);

        assert!(matches!(
            classification_report(&[vec![3]], &[vec![0]], 3),
            Err(Error::LabelOutOfRange {
                index: 3,
                classes: 3
            })
        ));
    }

    #[test]
    fn record_lines_round_trip() {
        let r = MetricRecord {
            scenario: "No_Sep".into(),
            model: "BiGRU+Q2L".into(),
            class: "overall".into(),
            metric: "accuracy".into(),
            value: 0.884712,
            std: None,
        };
        assert_eq!(
            r.to_line(),
            "No_Sep\tBiGRU+Q2L\toverall\taccuracy\t0.884712\t-"
        );
        assert_eq!(MetricRecord::parse(&r.to_line()), Some(r));
    }

    #[test]
    fn table_alignment() {
        let t = render_table(&["Class", "BLEU"], &[vec!["Sleep".into(), "0.9".into()]]);
        assert_eq!(t, "Class  BLEU\n-----------\nSleep   0.9\n");
    }
}
