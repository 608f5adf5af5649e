//! Exact-match accuracy and micro-averaged triple-set F1.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::logical_forms::LogicalForm;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("{preds} predictions for {golds} gold forms")]
    LengthMismatch { preds: usize, golds: usize },
}

fn check_lengths(preds: usize, golds: usize) -> Result<(), MetricsError> {
    if preds != golds {
        return Err(MetricsError::LengthMismatch { preds, golds });
    }
    Ok(())
}

/// Fraction of predictions structurally equal to their gold form. `None`
/// stands for a malformed prediction and never matches. An empty corpus
/// scores 0.
pub fn exact_match_accuracy(
    preds: &[Option<LogicalForm>],
    golds: &[LogicalForm],
) -> Result<f64, MetricsError> {
    check_lengths(preds.len(), golds.len())?;
    if golds.is_empty() {
        return Ok(0.0);
    }
    let hits = preds
        .iter()
        .zip(golds)
        .filter(|(p, g)| p.as_ref() == Some(*g))
        .count();
    Ok(hits as f64 / golds.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExampleCounts {
    pub matched: usize,
    pub predicted: usize,
    pub gold: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub examples: Vec<ExampleCounts>,
}

fn triple_count(form: &LogicalForm) -> usize {
    match form {
        LogicalForm::TripleSet(t) => t.len(),
        LogicalForm::SExpr(_) => 1,
    }
}

fn matched(pred: &LogicalForm, gold: &LogicalForm) -> usize {
    match (pred, gold) {
        (LogicalForm::TripleSet(p), LogicalForm::TripleSet(g)) => p.intersection(g).count(),
        (p, g) => usize::from(p == g),
    }
}

/// Micro-averaged precision, recall and F1 over exact triple matches.
/// A malformed prediction (`None`) counts as an empty set. S-expression
/// forms are treated as a single unit.
pub fn triple_f1(preds: &[Option<LogicalForm>], golds: &[LogicalForm]) -> Result<MatchReport, MetricsError> {
    check_lengths(preds.len(), golds.len())?;
    let examples: Vec<ExampleCounts> = preds
        .iter()
        .zip(golds)
        .map(|(p, g)| match p {
            Some(p) => ExampleCounts {
                matched: matched(p, g),
                predicted: triple_count(p),
                gold: triple_count(g),
            },
            None => ExampleCounts {
                matched: 0,
                predicted: 0,
                gold: triple_count(g),
            },
        })
        .collect();
    let m: usize = examples.iter().map(|e| e.matched).sum();
    let p: usize = examples.iter().map(|e| e.predicted).sum();
    let g: usize = examples.iter().map(|e| e.gold).sum();
    let precision = if p == 0 { 0.0 } else { m as f64 / p as f64 };
    let recall = if g == 0 { 0.0 } else { m as f64 / g as f64 };
    let f1 = if m == 0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(MatchReport {
        f1,
        precision,
        recall,
        examples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::logical_forms::{parse_triples, Triple};
    use proptest::prelude::*;

    fn ts(triples: &[(&str, &str, &str)]) -> LogicalForm {
        LogicalForm::triples(triples.iter().map(|(s, r, o)| Triple::new(*s, *r, *o)))
    }

    #[test]
    fn accuracy_examples() {
        let g = vec![ts(&[("a", "r", "b")]), ts(&[("c", "r", "d")]), ts(&[]), ts(&[("x", "y", "z")])];
        let same: Vec<_> = g.iter().cloned().map(Some).collect();
        assert_eq!(exact_match_accuracy(&same, &g).unwrap(), 1.0);
        let other: Vec<_> = (0..4).map(|_| Some(ts(&[("q", "q", "q")]))).collect();
        assert_eq!(exact_match_accuracy(&other, &g).unwrap(), 0.0);
        let mut three = same.clone();
        three[1] = None;
        assert_eq!(exact_match_accuracy(&three, &g).unwrap(), 0.75);
        assert_eq!(
            exact_match_accuracy(&three[..2], &g),
            Err(MetricsError::LengthMismatch { preds: 2, golds: 4 })
        );
    }

    #[test]
    fn order_of_triples_does_not_matter() {
        let a = parse_triples("<S> a <R> r <O> b <S> c <R> r <O> d").unwrap();
        let b = parse_triples("<S> c <R> r <O> d <S> a <R> r <O> b").unwrap();
        assert_eq!(exact_match_accuracy(&[Some(a)], &[b]).unwrap(), 1.0);
    }

    #[test]
    fn half_right() {
        let pred = ts(&[("a", "r", "b"), ("a", "r", "c")]);
        let gold = ts(&[("a", "r", "b"), ("d", "r", "e")]);
        let r = triple_f1(&[Some(pred)], &[gold]).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (0.5, 0.5, 0.5));
    }

    #[test]
    fn empty_prediction_only_hits_recall() {
        let gold = vec![ts(&[("a", "r", "b"), ("c", "r", "d")]), ts(&[("e", "r", "f")])];
        let preds = vec![Some(ts(&[])), Some(ts(&[("e", "r", "f")]))];
        let r = triple_f1(&preds, &gold).unwrap();
        assert_eq!(r.precision, 1.0);
        assert!((r.recall - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.examples[0], ExampleCounts { matched: 0, predicted: 0, gold: 2 });
    }

    fn arb_set() -> impl Strategy<Value = LogicalForm> {
        prop::collection::btree_set((0..3u8, 0..2u8, 0..3u8), 0..4).prop_map(|s| {
            LogicalForm::triples(
                s.into_iter()
                    .map(|(a, r, b)| Triple::new(format!("e{a}"), format!("r{r}"), format!("e{b}"))),
            )
        })
    }

    proptest! {
        #[test]
        fn symmetry_and_brute_force(pairs in prop::collection::vec((arb_set(), arb_set()), 1..=5)) {
            let preds: Vec<_> = pairs.iter().map(|(p, _)| Some(p.clone())).collect();
            let golds: Vec<_> = pairs.iter().map(|(_, g)| g.clone()).collect();
            let r = triple_f1(&preds, &golds).unwrap();

            // naive pairwise counting
            let (mut m, mut np, mut ng) = (0usize, 0usize, 0usize);
            for (p, g) in &pairs {
                let (pt, gt) = match (p, g) {
                    (LogicalForm::TripleSet(a), LogicalForm::TripleSet(b)) => (a, b),
                    _ => unreachable!(),
                };
                np += pt.len();
                ng += gt.len();
                for x in pt {
                    for y in gt {
                        if x.subject == y.subject && x.relation == y.relation && x.object == y.object {
                            m += 1;
                        }
                    }
                }
            }
            let p = if np == 0 { 0.0 } else { m as f64 / np as f64 };
            let rc = if ng == 0 { 0.0 } else { m as f64 / ng as f64 };
            prop_assert_eq!(r.precision, p);
            prop_assert_eq!(r.recall, rc);
            prop_assert_eq!(r.f1 == 0.0, m == 0);
            prop_assert!((0.0..=1.0).contains(&r.f1));
            prop_assert!(r.f1 <= r.precision.max(r.recall) + 1e-15);
            prop_assert!(r.f1 >= r.precision.min(r.recall) - 1e-15);

            let swapped_preds: Vec<_> = golds.iter().cloned().map(Some).collect();
            let swapped_golds: Vec<_> = pairs.iter().map(|(p, _)| p.clone()).collect();
            let s = triple_f1(&swapped_preds, &swapped_golds).unwrap();
            prop_assert_eq!(s.precision, r.recall);
            prop_assert_eq!(s.recall, r.precision);
            prop_assert!((s.f1 - r.f1).abs() < 1e-15);
        }
    }
}
