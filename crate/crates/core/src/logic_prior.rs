//! Count-based prior over logical forms.
//!
//! A form's probability factorizes over its parts, each scored by its
//! smoothed relative frequency `θ_s = Θ_s / Σ Θ`, where a part enters the
//! table with pseudo-count τ and gains one per observed occurrence. Parts
//! absent from the table score `τ / (total + τ)`.
//!
//! Observation counts are kept as integers so totals are exact and shard
//! tables merge associatively.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use thiserror::Error;

use crate::logical_forms::{LogicalForm, Part};

#[derive(Debug, Error)]
pub enum PriorError {
    #[error("smoothing must be positive and finite, got {0}")]
    NonPositiveSmoothing(f64),
    #[error("cannot score a form with parts against an empty prior table")]
    EmptyTableQuery,
    #[error("cannot merge tables with different smoothing ({0} vs {1})")]
    SmoothingMismatch(f64, f64),
    #[error("part {0:?} cannot be stored (contains a tab or newline)")]
    UnstorablePart(String),
    #[error("malformed prior table at line {line}: {reason}")]
    Corrupt { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriorTable {
    tau: f64,
    counts: BTreeMap<Part, u64>,
    observations: u64,
    /// Iteration that produced this table (0 for the warm-up table).
    version: u32,
}

impl PriorTable {
    pub fn new(tau: f64) -> Result<Self, PriorError> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(PriorError::NonPositiveSmoothing(tau));
        }
        Ok(Self {
            tau,
            counts: BTreeMap::new(),
            observations: 0,
            version: 0,
        })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn version(&self) -> u32 {
        self.version
    }

    pub fn with_version(mut self, version: u32) -> Self {
        self.version = version;
        self
    }

    pub fn set_version(&mut self, version: u32) {
        self.version = version;
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Σ Θ_s over stored parts.
    pub fn total(&self) -> f64 {
        self.counts.len() as f64 * self.tau + self.observations as f64
    }

    /// Θ_s, if the part has been observed.
    pub fn count(&self, part: &Part) -> Option<f64> {
        self.counts.get(part).map(|&n| self.tau + n as f64)
    }

    /// θ_s, if the part has been observed.
    pub fn theta(&self, part: &Part) -> Option<f64> {
        self.count(part).map(|c| c / self.total())
    }

    /// (part, Θ_s) in canonical order.
    pub fn iter(&self) -> impl Iterator<Item = (&Part, f64)> + '_ {
        self.counts.iter().map(|(p, &n)| (p, self.tau + n as f64))
    }

    pub fn observe(&mut self, form: &LogicalForm) {
        self.observe_parts(form.part_occurrences());
    }

    pub fn observe_parts<I: IntoIterator<Item = Part>>(&mut self, parts: I) {
        for part in parts {
            *self.counts.entry(part).or_insert(0) += 1;
            self.observations += 1;
        }
    }

    pub fn logprob(&self, form: &LogicalForm) -> Result<f64, PriorError> {
        self.logprob_parts(&form.part_occurrences())
    }

    /// Σ log θ_s over the given part occurrences, unseen parts scored as
    /// `τ / (total + τ)` each.
    pub fn logprob_parts(&self, parts: &[Part]) -> Result<f64, PriorError> {
        if parts.is_empty() {
            return Ok(0.0);
        }
        let total = self.total();
        if total <= 0.0 {
            return Err(PriorError::EmptyTableQuery);
        }
        let unseen = (self.tau / (total + self.tau)).ln();
        Ok(parts
            .iter()
            .map(|p| match self.counts.get(p) {
                Some(&n) => ((self.tau + n as f64) / total).ln(),
                None => unseen,
            })
            .sum())
    }

    /// Frozen value copy.
    pub fn snapshot(&self) -> PriorTable {
        self.clone()
    }

    /// Adds another table's observations to this one. Equivalent to having
    /// observed both streams into a single table.
    pub fn merge(&mut self, other: &PriorTable) -> Result<(), PriorError> {
        if self.tau.to_bits() != other.tau.to_bits() {
            return Err(PriorError::SmoothingMismatch(self.tau, other.tau));
        }
        for (part, &n) in &other.counts {
            *self.counts.entry(part.clone()).or_insert(0) += n;
        }
        self.observations += other.observations;
        Ok(())
    }

    /// Sorted tab-separated text: a header `tau <τ> total <Σ> version <i>`,
    /// then one `part \t Θ_s` line per stored part.
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<(), PriorError> {
        writeln!(
            out,
            "tau\t{}\ttotal\t{}\tversion\t{}",
            self.tau,
            self.total(),
            self.version
        )?;
        for (part, count) in self.iter() {
            if part.as_str().contains(['\t', '\n', '\r']) {
                return Err(PriorError::UnstorablePart(part.as_str().to_string()));
            }
            writeln!(out, "{}\t{}", part, count)?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<Self, PriorError> {
        let corrupt = |line: usize, reason: &str| PriorError::Corrupt {
            line,
            reason: reason.to_string(),
        };
        let mut lines = input.lines();
        let header = lines.next().ok_or_else(|| corrupt(1, "missing header"))??;
        let fields: Vec<&str> = header.split('\t').collect();
        if fields.len() != 6 || fields[0] != "tau" || fields[2] != "total" || fields[4] != "version"
        {
            return Err(corrupt(1, "expected `tau <t> total <n> version <i>`"));
        }
        let parse_f = |s: &str, line| s.parse::<f64>().map_err(|e| corrupt(line, &e.to_string()));
        let tau = parse_f(fields[1], 1)?;
        let total = parse_f(fields[3], 1)?;
        let version = fields[5]
            .parse::<u32>()
            .map_err(|e| corrupt(1, &e.to_string()))?;

        let mut table = PriorTable::new(tau)?.with_version(version);
        for (i, line) in lines.enumerate() {
            let lineno = i + 2;
            let line = line?;
            let (part, count) = line
                .rsplit_once('\t')
                .ok_or_else(|| corrupt(lineno, "expected `part \\t count`"))?;
            let count = parse_f(count, lineno)?;
            let n = (count - tau).round();
            if n < 1.0 || tau + n != count {
                return Err(corrupt(lineno, "count is not τ plus a positive integer"));
            }
            let part = Part::from_canonical(part);
            if table.counts.insert(part, n as u64).is_some() {
                return Err(corrupt(lineno, "duplicate part"));
            }
            table.observations += n as u64;
        }
        if table.total().to_bits() != total.to_bits() {
            return Err(corrupt(1, "header total disagrees with the stored counts"));
        }
        Ok(table)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), PriorError> {
        let file = std::fs::File::create(path)?;
        let mut out = std::io::BufWriter::new(file);
        self.write_to(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, PriorError> {
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::logical_forms::{parse_sexpr, LogicalForm, Triple};
    use std::collections::HashMap;

    fn part(s: &str) -> Part {
        Part::from_canonical(s)
    }

    fn table_ab() -> PriorTable {
        // τ = 1, observe {a, b} then {a}: Θ = {a: 3, b: 2}, total 5.
        let mut t = PriorTable::new(1.0).unwrap();
        t.observe_parts([part("a"), part("b")]);
        t.observe_parts([part("a")]);
        t
    }

    #[test]
    fn tau_entry_then_increment() {
        let mut t = PriorTable::new(1.0).unwrap();
        t.observe_parts([part("a")]);
        assert_eq!(t.count(&part("a")), Some(2.0));
    }

    #[test]
    fn rejects_non_positive_tau() {
        assert!(matches!(PriorTable::new(0.0), Err(PriorError::NonPositiveSmoothing(_))));
        assert!(matches!(PriorTable::new(-1.0), Err(PriorError::NonPositiveSmoothing(_))));
        assert!(PriorTable::new(f64::NAN).is_err());
    }

    #[test]
    fn hand_counted_table() {
        let t = table_ab();
        assert_eq!(t.count(&part("a")), Some(3.0));
        assert_eq!(t.count(&part("b")), Some(2.0));
        assert_eq!(t.total(), 5.0);
    }

    #[test]
    fn logprob_matches_hand_formula() {
        let t = table_ab();
        assert!((t.logprob_parts(&[part("a")]).unwrap() - 0.6f64.ln()).abs() < 1e-12);
        let expected = (3.0f64 / 5.0).ln() + (1.0f64 / 6.0).ln();
        let got = t.logprob_parts(&[part("a"), part("a_unseen")]).unwrap();
        assert!((got - expected).abs() < 1e-12);
        assert_eq!(t.logprob_parts(&[]).unwrap(), 0.0);
    }

    #[test]
    fn empty_table() {
        let t = PriorTable::new(1.0).unwrap();
        assert_eq!(t.logprob(&LogicalForm::triples([])).unwrap(), 0.0);
        let form = LogicalForm::triples([Triple::new("a", "b", "c")]);
        assert!(matches!(t.logprob(&form), Err(PriorError::EmptyTableQuery)));
    }

    #[test]
    fn empty_triple_set_leaves_table_unchanged() {
        let mut t = table_ab();
        let before = t.clone();
        t.observe(&LogicalForm::triples([]));
        assert_eq!(t, before);
    }

    #[test]
    fn snapshot_is_a_value_copy() {
        let mut t = table_ab();
        let snap = t.snapshot();
        t.observe_parts([part("c")]);
        assert_eq!(snap.total(), 5.0);
        assert_eq!(snap, table_ab().snapshot());
        let empty = PriorTable::new(1.0).unwrap();
        assert!(empty.snapshot().is_empty());
    }

    #[test]
    fn repeated_subtree_counts_twice() {
        let mut t = PriorTable::new(1.0).unwrap();
        t.observe(&parse_sexpr("(and (f $0) (f $0))").unwrap());
        assert_eq!(t.count(&part("(f $0)")), Some(3.0));
    }

    #[test]
    fn merge_matches_single_stream() {
        let mut a = PriorTable::new(0.5).unwrap();
        let mut b = PriorTable::new(0.5).unwrap();
        let mut whole = PriorTable::new(0.5).unwrap();
        a.observe_parts([part("x"), part("y")]);
        b.observe_parts([part("y"), part("z")]);
        whole.observe_parts([part("x"), part("y"), part("y"), part("z")]);
        let mut ab = a.clone();
        ab.merge(&b).unwrap();
        let mut ba = b.clone();
        ba.merge(&a).unwrap();
        assert_eq!(ab, whole);
        assert_eq!(ba, whole);
        let other = PriorTable::new(1.0).unwrap();
        assert!(matches!(a.merge(&other), Err(PriorError::SmoothingMismatch(..))));
    }

    #[test]
    fn text_round_trip_is_exact() {
        let mut t = PriorTable::new(0.1).unwrap().with_version(3);
        t.observe(&parse_sexpr("(lambda $0 e (loc:t ap0 $0))").unwrap());
        t.observe_parts([part("(<S> a <R> b <O> \"c, d\")")]);
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        let back = PriorTable::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.total().to_bits(), t.total().to_bits());
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("tau\t0.1\ttotal\t"));
    }

    #[test]
    fn rejects_tampered_file() {
        let bad = "tau\t1\ttotal\t9\tversion\t0\n(a)\t3\n";
        assert!(matches!(
            PriorTable::read_from(bad.as_bytes()),
            Err(PriorError::Corrupt { line: 1, .. })
        ));
        let bad = "tau\t1\ttotal\t3.5\tversion\t0\n(a)\t3.5\n";
        assert!(matches!(
            PriorTable::read_from(bad.as_bytes()),
            Err(PriorError::Corrupt { line: 2, .. })
        ));
    }

    #[test]
    fn unseen_parts_break_monotonicity() {
        // {a: 2}, form {a, b}: log(2/2) + log(1/3) before, log(3/5) + log(2/5)
        // after. The unseen rule reserves τ against total + τ while seen
        // parts divide by total alone.
        let mut t = PriorTable::new(1.0).unwrap();
        t.observe_parts([part("a")]);
        let form = [part("a"), part("b")];
        let before = t.logprob_parts(&form).unwrap();
        t.observe_parts(form.clone());
        let after = t.logprob_parts(&form).unwrap();
        assert!((before - (1.0f64 / 3.0).ln()).abs() < 1e-12);
        assert!((after - (0.6f64.ln() + 0.4f64.ln())).abs() < 1e-12);
        assert!(after < before);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn corpus() -> impl Strategy<Value = Vec<Vec<String>>> {
            prop::collection::vec(prop::collection::vec("[a-e]", 0..5), 0..=20)
        }

        fn table_of(tau: f64, corpus: &[Vec<String>]) -> PriorTable {
            let mut t = PriorTable::new(tau).unwrap();
            for form in corpus {
                t.observe_parts(form.iter().map(|s| part(s)));
            }
            t
        }

        proptest! {
            #[test]
            fn normalizes_to_one(c in corpus(), tau in 0.01f64..5.0) {
                let t = table_of(tau, &c);
                if !t.is_empty() {
                    let sum: f64 = t.iter().map(|(p, _)| t.theta(p).unwrap()).sum();
                    prop_assert!((sum - 1.0).abs() < 1e-9);
                }
            }

            #[test]
            fn matches_naive_recount(c in corpus(), tau in 0.01f64..5.0) {
                let t = table_of(tau, &c);
                let mut naive: HashMap<&str, u64> = HashMap::new();
                for form in &c {
                    for p in form {
                        *naive.entry(p.as_str()).or_insert(0) += 1;
                    }
                }
                prop_assert_eq!(t.len(), naive.len());
                for (p, count) in t.iter() {
                    prop_assert_eq!(count, tau + naive[p.as_str()] as f64);
                }
                let naive_total: f64 = naive.values().map(|&n| tau + n as f64).sum();
                prop_assert!((t.total() - naive_total).abs() <= 1e-9 * naive_total.max(1.0));
            }

            #[test]
            fn order_free(mut c in corpus(), seed in any::<u64>()) {
                let t = table_of(1.0, &c);
                // deterministic shuffle
                let n = c.len();
                for i in (1..n).rev() {
                    let j = (seed.wrapping_mul(i as u64 + 7) >> 3) as usize % (i + 1);
                    c.swap(i, j);
                }
                prop_assert_eq!(table_of(1.0, &c), t);
            }

            // Holds once every part of the form is in the table; see
            // `unseen_parts_break_monotonicity` for why that precondition is needed.
            #[test]
            fn observing_never_lowers_own_score(c in corpus(), form in prop::collection::vec("[a-g]", 0..5), tau in 0.01f64..5.0) {
                let mut t = table_of(tau, &c);
                let parts: Vec<Part> = form.iter().map(|s| part(s)).collect();
                t.observe_parts(parts.clone());
                let before = t.logprob_parts(&parts).unwrap();
                t.observe_parts(parts.clone());
                let after = t.logprob_parts(&parts).unwrap();
                prop_assert!(after >= before - 1e-12);
            }
        }
    }
}
