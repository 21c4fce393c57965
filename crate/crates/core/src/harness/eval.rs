//! Exact-span entity scoring, micro-averaged.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{Span, TagSequence};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub gold: usize,
    pub predicted: usize,
    pub correct: usize,
}

impl Counts {
    pub fn precision(&self) -> f64 {
        ratio(self.correct, self.predicted)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.correct, self.gold)
    }

    pub fn f1(&self) -> f64 {
        f1_score(self.precision(), self.recall())
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Harmonic mean, `0` when both are zero.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub counts: Counts,
    pub per_type: BTreeMap<String, Counts>,
}

impl EvalResult {
    pub fn from_counts(counts: Counts, per_type: BTreeMap<String, Counts>) -> Self {
        Self {
            precision: counts.precision(),
            recall: counts.recall(),
            f1: counts.f1(),
            counts,
            per_type,
        }
    }

    /// Unweighted mean of per-type F1.
    pub fn macro_f1(&self) -> f64 {
        if self.per_type.is_empty() {
            return 0.0;
        }
        self.per_type.values().map(Counts::f1).sum::<f64>() / self.per_type.len() as f64
    }
}

pub fn entity_f1(gold: &[TagSequence], pred: &[TagSequence]) -> Result<EvalResult> {
    if gold.len() != pred.len() {
        return Err(Error::InvalidArgument(format!(
            "{} gold sentences, {} predicted",
            gold.len(),
            pred.len()
        )));
    }
    let mut total = Counts::default();
    let mut per_type: BTreeMap<String, Counts> = BTreeMap::new();
    for (i, (g, p)) in gold.iter().zip(pred).enumerate() {
        if g.len() != p.len() {
            return Err(Error::InvalidArgument(format!(
                "sentence {i}: {} gold tags, {} predicted",
                g.len(),
                p.len()
            )));
        }
        let gs: BTreeSet<Span> = g.spans().into_iter().collect();
        let ps: BTreeSet<Span> = p.spans().into_iter().collect();
        for s in &gs {
            per_type.entry(s.label.clone()).or_default().gold += 1;
        }
        for s in &ps {
            let c = per_type.entry(s.label.clone()).or_default();
            c.predicted += 1;
            if gs.contains(s) {
                c.correct += 1;
            }
        }
        total.gold += gs.len();
        total.predicted += ps.len();
        total.correct += gs.intersection(&ps).count();
    }
    Ok(EvalResult::from_counts(total, per_type))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Scheme;

    fn seq(n: usize, spans: &[(usize, usize, &str)]) -> TagSequence {
        let s: Vec<Span> = spans.iter().map(|&(a, b, l)| Span::new(a, b, l)).collect();
        TagSequence::from_spans(n, &s, Scheme::Bioes).unwrap()
    }

    #[test]
    fn harmonic_mean_of_published_row() {
        let f = f1_score(0.8604, 0.8598);
        assert!((f * 100.0 - 86.01).abs() < 0.005);
    }

    #[test]
    fn perfect_prediction() {
        let g = vec![seq(5, &[(0, 2, "PER")]), seq(3, &[(2, 3, "LOC")])];
        let r = entity_f1(&g, &g).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn hand_counted_spans() {
        let g = vec![seq(6, &[(0, 2, "PER")])];
        let p = vec![seq(6, &[(0, 2, "PER"), (4, 5, "LOC")])];
        let r = entity_f1(&g, &p).unwrap();
        assert_eq!(r.precision, 0.5);
        assert_eq!(r.recall, 1.0);
        assert!((r.f1 - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.per_type["LOC"].correct, 0);
    }

    #[test]
    fn type_mismatch_is_wrong() {
        let g = vec![seq(3, &[(0, 1, "PER")])];
        let p = vec![seq(3, &[(0, 1, "LOC")])];
        assert_eq!(entity_f1(&g, &p).unwrap().f1, 0.0);
    }

    #[test]
    fn length_mismatch() {
        assert!(entity_f1(&[seq(3, &[])], &[]).is_err());
        assert!(entity_f1(&[seq(3, &[])], &[seq(4, &[])]).is_err());
    }
}
