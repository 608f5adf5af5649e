//! Synthetic text/triple-set corpora with templated paraphrases.
//!
//! Entities and relations are CamelCase identifiers; both the text and the
//! gold triples use their camel-case-split words, so the structure is fully
//! recoverable from a noiseless sentence. Each relation gets several
//! sentence frames; an example's clauses are joined by "and" in the
//! canonical order of their triples.

use std::collections::{BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Corpus, Pair};
use crate::logical_forms::{split_camel_case_phrase, LogicalForm, Triple};

const FIRST: &[&str] = &[
    "Red", "Blue", "Green", "Stone", "River", "North", "South", "Iron", "Silver", "Oak", "Maple",
    "Cedar", "Golden", "Misty", "Amber", "Crystal",
];
const SECOND: &[&str] = &[
    "Fox", "Lake", "Hill", "Port", "Field", "Bridge", "Harbor", "Tower", "Valley", "Forest",
    "Castle", "Meadow",
];
const RELATIONS: &[&str] = &[
    "birthPlace",
    "capitalCity",
    "foundedBy",
    "leaderName",
    "locatedNear",
    "tradingPartner",
    "ownedBy",
    "sisterCity",
    "rivalTeam",
    "parentCompany",
    "homeGround",
    "coachName",
];
/// `S`, `R` and `O` mark the subject, relation and object slots.
const FRAMES: &[&[&str]] = &[
    &["S", "has", "R", "O"],
    &["the", "R", "of", "S", "is", "O"],
    &["O", "is", "the", "R", "of", "S"],
    &["for", "S", "the", "R", "is", "O"],
    &["S", "lists", "O", "as", "R"],
];
const DISTRACTORS: &[&str] = &["um", "so", "well", "like", "indeed", "quite"];
const CONJUNCTION: &str = "and";
const SPLIT_STREAM: u64 = 0x5eed_0001;

pub const MAX_TRIPLES: usize = 7;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ToyError {
    #[error("vocabulary too small: {0}")]
    VocabularyTooSmall(String),
    #[error("invalid domain spec: {0}")]
    InvalidSpec(String),
    #[error("structure is not expressible in this domain: {0}")]
    ForeignStructure(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub entities: usize,
    pub relations: usize,
    pub min_triples: usize,
    pub max_triples: usize,
    pub templates_per_relation: usize,
    /// Probability that a frame word is replaced by a distractor.
    pub noise_rate: f64,
    pub seed: u64,
}

impl Default for DomainSpec {
    fn default() -> Self {
        Self {
            entities: 20,
            relations: 5,
            min_triples: 1,
            max_triples: 3,
            templates_per_relation: 3,
            noise_rate: 0.0,
            seed: 7,
        }
    }
}

impl DomainSpec {
    pub fn validate(&self) -> Result<(), ToyError> {
        if self.entities < 2 || self.relations < 2 {
            return Err(ToyError::InvalidSpec(format!(
                "need at least 2 entities and 2 relations, got {} and {}",
                self.entities, self.relations
            )));
        }
        if self.min_triples < 1 || self.min_triples > self.max_triples || self.max_triples > MAX_TRIPLES {
            return Err(ToyError::InvalidSpec(format!(
                "triples per example must satisfy 1 <= min <= max <= {MAX_TRIPLES}, got {}..={}",
                self.min_triples, self.max_triples
            )));
        }
        if self.templates_per_relation < 3 || self.templates_per_relation > FRAMES.len() {
            return Err(ToyError::InvalidSpec(format!(
                "templates per relation must lie in 3..={}, got {}",
                FRAMES.len(),
                self.templates_per_relation
            )));
        }
        if !(0.0..=1.0).contains(&self.noise_rate) {
            return Err(ToyError::InvalidSpec(format!("noise rate {} outside [0, 1]", self.noise_rate)));
        }
        if self.entities > FIRST.len() * SECOND.len() {
            return Err(ToyError::VocabularyTooSmall(format!(
                "at most {} entity names available, asked for {}",
                FIRST.len() * SECOND.len(),
                self.entities
            )));
        }
        if self.relations > RELATIONS.len() {
            return Err(ToyError::VocabularyTooSmall(format!(
                "at most {} relations available, asked for {}",
                RELATIONS.len(),
                self.relations
            )));
        }
        Ok(())
    }
}

/// Labeled pair with the frame chosen for each triple, in clause order.
#[derive(Debug, Clone, PartialEq)]
pub struct Realization {
    pub text: String,
    pub frames: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToySplits {
    pub corpus: Corpus,
    pub validation: Vec<Pair>,
    pub test: Vec<Pair>,
}

/// A concrete domain instance: entity and relation inventories and the
/// frames each relation may use.
#[derive(Debug, Clone)]
pub struct ToyDomain {
    spec: DomainSpec,
    /// CamelCase identifiers.
    entities: Vec<String>,
    relations: Vec<String>,
    /// Frame indices per relation.
    templates: Vec<Vec<usize>>,
}

impl ToyDomain {
    pub fn new(spec: DomainSpec) -> Result<Self, ToyError> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut names: Vec<String> = FIRST
            .iter()
            .flat_map(|a| SECOND.iter().map(move |b| format!("{a}{b}")))
            .collect();
        names.shuffle(&mut rng);
        names.truncate(spec.entities);
        names.sort();
        let mut relations: Vec<String> = RELATIONS.iter().map(|r| r.to_string()).collect();
        relations.shuffle(&mut rng);
        relations.truncate(spec.relations);
        relations.sort();
        let templates = relations
            .iter()
            .map(|_| {
                let mut frames: Vec<usize> = (0..FRAMES.len()).collect();
                frames.shuffle(&mut rng);
                frames.truncate(spec.templates_per_relation);
                frames.sort();
                frames
            })
            .collect();
        Ok(Self {
            spec,
            entities: names,
            relations,
            templates,
        })
    }

    pub fn spec(&self) -> &DomainSpec {
        &self.spec
    }

    pub fn entities(&self) -> &[String] {
        &self.entities
    }

    pub fn relations(&self) -> &[String] {
        &self.relations
    }

    /// Frame indices available to the relation named by its split words.
    pub fn templates_for(&self, relation_words: &str) -> Option<&[usize]> {
        self.relations
            .iter()
            .position(|r| split_camel_case_phrase(r) == relation_words)
            .map(|i| self.templates[i].as_slice())
    }

    fn random_triple<R: Rng>(&self, rng: &mut R) -> Triple {
        let s = rng.gen_range(0..self.entities.len());
        let mut o = rng.gen_range(0..self.entities.len() - 1);
        if o >= s {
            o += 1;
        }
        let r = rng.gen_range(0..self.relations.len());
        Triple::new(
            split_camel_case_phrase(&self.entities[s]),
            split_camel_case_phrase(&self.relations[r]),
            split_camel_case_phrase(&self.entities[o]),
        )
    }

    /// Draws a random structure.
    pub fn random_structure<R: Rng>(&self, rng: &mut R) -> LogicalForm {
        let k = rng.gen_range(self.spec.min_triples..=self.spec.max_triples);
        let mut set = BTreeSet::new();
        while set.len() < k {
            set.insert(self.random_triple(rng));
        }
        LogicalForm::TripleSet(set)
    }

    fn clause<R: Rng>(&self, triple: &Triple, frame: usize, noise: f64, rng: &mut R) -> Vec<String> {
        let mut words = Vec::new();
        for &slot in FRAMES[frame] {
            match slot {
                "S" => words.push(triple.subject.clone()),
                "R" => words.push(triple.relation.clone()),
                "O" => words.push(triple.object.clone()),
                w => {
                    if noise > 0.0 && rng.gen_bool(noise) {
                        words.push(DISTRACTORS.choose(rng).unwrap().to_string());
                    } else {
                        words.push(w.to_string());
                    }
                }
            }
        }
        words
    }

    /// Renders `form` with one randomly chosen frame per triple.
    pub fn realize<R: Rng>(&self, form: &LogicalForm, rng: &mut R) -> Result<Realization, ToyError> {
        let mut ordered: Vec<&Triple> = form_triples(form)?.iter().collect();
        ordered.sort_by_key(|t| t.canonical());
        let mut clauses = Vec::new();
        let mut frames = Vec::new();
        for t in ordered {
            let choices = self.templates_for(&t.relation).ok_or_else(|| {
                ToyError::ForeignStructure(format!("unknown relation {:?}", t.relation))
            })?;
            let frame = *choices.choose(rng).unwrap();
            frames.push(frame);
            clauses.push(self.clause(t, frame, self.spec.noise_rate, rng).join(" "));
        }
        Ok(Realization {
            text: clauses.join(&format!(" {CONJUNCTION} ")),
            frames,
        })
    }

    /// Renders `form` with the given frames (one per triple, in canonical
    /// order) and no noise.
    pub fn realize_with(&self, form: &LogicalForm, frames: &[usize]) -> Result<String, ToyError> {
        let mut ordered: Vec<&Triple> = form_triples(form)?.iter().collect();
        ordered.sort_by_key(|t| t.canonical());
        if frames.len() != ordered.len() || frames.iter().any(|&f| f >= FRAMES.len()) {
            return Err(ToyError::ForeignStructure(format!(
                "{} frames for {} triples",
                frames.len(),
                ordered.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Ok(ordered
            .iter()
            .zip(frames)
            .map(|(t, &f)| self.clause(t, f, 0.0, &mut rng).join(" "))
            .collect::<Vec<_>>()
            .join(&format!(" {CONJUNCTION} ")))
    }

    fn match_clause(&self, words: &[&str]) -> Option<(Triple, usize)> {
        let entities: Vec<String> = self.entities.iter().map(|e| split_camel_case_phrase(e)).collect();
        for (ri, rel) in self.relations.iter().enumerate() {
            let rel = split_camel_case_phrase(rel);
            for &frame in &self.templates[ri] {
                for s in &entities {
                    for o in &entities {
                        if s == o {
                            continue;
                        }
                        let mut expected: Vec<&str> = Vec::new();
                        let mut fixed = Vec::new();
                        for &slot in FRAMES[frame] {
                            let text = match slot {
                                "S" => s.as_str(),
                                "R" => rel.as_str(),
                                "O" => o.as_str(),
                                w => {
                                    fixed.push(expected.len());
                                    expected.push(w);
                                    continue;
                                }
                            };
                            expected.extend(text.split_whitespace());
                        }
                        let ok = expected.len() == words.len()
                            && expected.iter().zip(words).enumerate().all(|(i, (e, w))| {
                                e == w || (fixed.contains(&i) && DISTRACTORS.contains(w))
                            });
                        if ok {
                            return Some((Triple::new(s.clone(), rel.clone(), o.clone()), frame));
                        }
                    }
                }
            }
        }
        None
    }

    /// Oracle parser: inverts the templates. Returns the structure and the
    /// frame of each clause, or `None` if some clause fits no template.
    pub fn invert(&self, text: &str) -> Option<(LogicalForm, Vec<usize>)> {
        let words: Vec<&str> = text.split_whitespace().collect();
        let mut triples = BTreeSet::new();
        let mut frames = Vec::new();
        for clause in words.split(|w| *w == CONJUNCTION) {
            let (t, f) = self.match_clause(clause)?;
            triples.insert(t);
            frames.push(f);
        }
        Some((LogicalForm::TripleSet(triples), frames))
    }

    /// Number of distinct structures the spec can produce (saturating).
    pub fn structure_capacity(&self) -> u128 {
        let e = self.entities.len() as u128;
        let t = e * (e - 1) * self.relations.len() as u128;
        let mut total: u128 = 0;
        for k in self.spec.min_triples..=self.spec.max_triples {
            let mut c: u128 = 1;
            for i in 0..k as u128 {
                if t < i + 1 {
                    c = 0;
                    break;
                }
                c = c.saturating_mul(t - i) / (i + 1);
            }
            total = total.saturating_add(c);
        }
        total
    }

    /// Draws the four splits with pairwise-disjoint structures. Unlabeled
    /// examples keep only their text.
    pub fn generate(
        &self,
        n_supervised: usize,
        n_unlabeled: usize,
        n_validation: usize,
        n_test: usize,
    ) -> Result<ToySplits, ToyError> {
        if [n_supervised, n_unlabeled, n_validation, n_test].contains(&0) {
            return Err(ToyError::InvalidSpec("every split needs at least one example".into()));
        }
        let needed = (n_supervised + n_unlabeled + n_validation + n_test) as u128;
        // leave slack so rejection sampling terminates quickly
        if self.structure_capacity() < needed.saturating_mul(2) {
            return Err(ToyError::VocabularyTooSmall(format!(
                "{} distinct structures possible, {} examples requested",
                self.structure_capacity(),
                needed
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.spec.seed ^ SPLIT_STREAM);
        let mut used = HashSet::new();
        let mut draw = |n: usize| -> Vec<Pair> {
            let mut out = Vec::with_capacity(n);
            while out.len() < n {
                let form = self.random_structure(&mut rng);
                if !used.insert(form.linearize()) {
                    continue;
                }
                let text = self
                    .realize(&form, &mut rng)
                    .expect("structures are drawn from the domain")
                    .text;
                out.push(Pair::new(text, form));
            }
            out
        };
        let supervised = draw(n_supervised);
        let unlabeled = draw(n_unlabeled).into_iter().map(|p| p.text).collect();
        let validation = draw(n_validation);
        let test = draw(n_test);
        Ok(ToySplits {
            corpus: Corpus {
                supervised,
                unlabeled,
            },
            validation,
            test,
        })
    }
}

fn form_triples(form: &LogicalForm) -> Result<&BTreeSet<Triple>, ToyError> {
    match form {
        LogicalForm::TripleSet(t) => Ok(t),
        LogicalForm::SExpr(_) => Err(ToyError::ForeignStructure("not a triple set".into())),
    }
}
