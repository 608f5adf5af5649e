//! Formal meaning representations in their linearized, tag-delimited shape.
//!
//! Two target shapes are supported: λ-calculus S-expressions, where
//! parentheses are written as `<SE>` / `</SE>`, and RDF triple sets, where
//! each triple is a `<S> subject <R> relation <O> object` segment.
//!
//! Tokenization is whitespace based once tags have been isolated, so
//! `"<SE>a</SE>"` and `"<SE> a </SE>"` parse identically.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SE_OPEN: &str = "<SE>";
pub const SE_CLOSE: &str = "</SE>";
pub const SUBJECT_TAG: &str = "<S>";
pub const RELATION_TAG: &str = "<R>";
pub const OBJECT_TAG: &str = "<O>";

const TEXT_TO_STRUCTURE_PROMPT: &str = "Text to Graph:";
const STRUCTURE_TO_TEXT_PROMPT: &str = "Graph to Text:";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FormError {
    #[error("unbalanced expression delimiters ({opens} opening, {closes} closing)")]
    UnbalancedDelimiters { opens: usize, closes: usize },
    #[error("empty expression")]
    EmptyExpression,
    #[error("empty input")]
    EmptyInput,
    #[error("tokens outside the root expression: {0:?}")]
    TrailingTokens(String),
    #[error("triple segment is missing the {tag} tag: {segment:?}")]
    MissingTag { tag: &'static str, segment: String },
    #[error("triple segment has an empty {tag} slot: {segment:?}")]
    EmptySlot { tag: &'static str, segment: String },
    #[error("unexpected {tag} tag in triple segment: {segment:?}")]
    UnexpectedTag { tag: &'static str, segment: String },
}

/// Which of the two linearized shapes a corpus uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FormKind {
    Triples,
    Sexpr,
}

impl FormKind {
    pub fn parse(self, text: &str) -> Result<LogicalForm, FormError> {
        match self {
            FormKind::Triples => parse_triples(text),
            FormKind::Sexpr => parse_sexpr(text),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FormKind::Triples => "triples",
            FormKind::Sexpr => "sexpr",
        }
    }
}

impl std::str::FromStr for FormKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "triples" => Ok(FormKind::Triples),
            "sexpr" => Ok(FormKind::Sexpr),
            other => Err(format!("unknown form kind {other:?} (expected triples or sexpr)")),
        }
    }
}

/// A node of an S-expression tree.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Node {
    Atom(String),
    List(Vec<Node>),
}

impl Node {
    pub fn atom(s: impl Into<String>) -> Self {
        Node::Atom(s.into())
    }

    pub fn list(children: Vec<Node>) -> Self {
        Node::List(children)
    }

    fn write_tagged(&self, out: &mut Vec<String>) {
        match self {
            Node::Atom(a) => out.push(a.clone()),
            Node::List(children) => {
                out.push(SE_OPEN.to_string());
                for child in children {
                    child.write_tagged(out);
                }
                out.push(SE_CLOSE.to_string());
            }
        }
    }

    fn write_parenthesized(&self, out: &mut String) {
        match self {
            Node::Atom(a) => out.push_str(a),
            Node::List(children) => {
                out.push('(');
                for (i, child) in children.iter().enumerate() {
                    if i > 0 {
                        out.push(' ');
                    }
                    child.write_parenthesized(out);
                }
                out.push(')');
            }
        }
    }

    /// Parenthesized rendering, e.g. `(loc:t ap0 $0)`.
    pub fn parenthesized(&self) -> String {
        let mut out = String::new();
        self.write_parenthesized(&mut out);
        out
    }

    fn collect_parts(&self, out: &mut Vec<Part>) {
        if let Node::List(children) = self {
            out.push(Part(self.parenthesized()));
            for child in children {
                child.collect_parts(out);
            }
        }
    }

    /// Number of compound (list) nodes in the tree, including this one.
    pub fn internal_nodes(&self) -> usize {
        match self {
            Node::Atom(_) => 0,
            Node::List(children) => 1 + children.iter().map(Node::internal_nodes).sum::<usize>(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub subject: String,
    pub relation: String,
    pub object: String,
}

impl Triple {
    pub fn new(
        subject: impl Into<String>,
        relation: impl Into<String>,
        object: impl Into<String>,
    ) -> Self {
        Self {
            subject: normalize_ws(&subject.into()),
            relation: normalize_ws(&relation.into()),
            object: normalize_ws(&object.into()),
        }
    }

    /// `<S> s <R> r <O> o`
    pub fn linearize(&self) -> String {
        format!(
            "{SUBJECT_TAG} {} {RELATION_TAG} {} {OBJECT_TAG} {}",
            self.subject, self.relation, self.object
        )
    }

    /// The canonical part string, `(<S> s <R> r <O> o)`.
    pub fn canonical(&self) -> String {
        format!("({})", self.linearize())
    }
}

/// A parsed logical form.
///
/// S-expression roots are always lists; triple sets are unordered and
/// duplicate-free.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum LogicalForm {
    SExpr(Node),
    TripleSet(BTreeSet<Triple>),
}

impl LogicalForm {
    pub fn kind(&self) -> FormKind {
        match self {
            LogicalForm::SExpr(_) => FormKind::Sexpr,
            LogicalForm::TripleSet(_) => FormKind::Triples,
        }
    }

    pub fn triples(triples: impl IntoIterator<Item = Triple>) -> Self {
        LogicalForm::TripleSet(triples.into_iter().collect())
    }

    pub fn linearize(&self) -> String {
        linearize(self)
    }

    /// Distinct parts. See [`LogicalForm::part_occurrences`] for the
    /// multiset used when counting.
    pub fn parts(&self) -> BTreeSet<Part> {
        parts(self)
    }

    /// Every part occurrence: a subtree that appears twice in an
    /// S-expression is returned twice. Triple sets have no repeats.
    pub fn part_occurrences(&self) -> Vec<Part> {
        match self {
            LogicalForm::SExpr(root) => {
                let mut out = Vec::new();
                root.collect_parts(&mut out);
                out
            }
            LogicalForm::TripleSet(set) => set.iter().map(|t| Part(t.canonical())).collect(),
        }
    }
}

impl fmt::Display for LogicalForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.linearize())
    }
}

/// One subtree (S-expression) or one triple (triple set), in canonical
/// parenthesized form.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Part(String);

impl Part {
    /// Wraps an already-canonical string. No validation is done; parts read
    /// back from persisted prior tables go through here.
    pub fn from_canonical(s: impl Into<String>) -> Self {
        Part(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Parses the part back into the form it denotes: the subtree itself
    /// for S-expressions, a single-triple set for triples.
    pub fn to_form(&self, kind: FormKind) -> Result<LogicalForm, FormError> {
        match kind {
            FormKind::Sexpr => parse_sexpr(&self.0),
            FormKind::Triples => {
                let inner = self
                    .0
                    .strip_prefix('(')
                    .and_then(|s| s.strip_suffix(')'))
                    .unwrap_or(&self.0);
                parse_triples(inner)
            }
        }
    }
}

impl fmt::Display for Part {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Token {
    Open,
    Close,
    Subject,
    Relation,
    Object,
    Word(String),
}

const TAGS: [(&str, Token); 5] = [
    (SE_OPEN, Token::Open),
    (SE_CLOSE, Token::Close),
    (SUBJECT_TAG, Token::Subject),
    (RELATION_TAG, Token::Relation),
    (OBJECT_TAG, Token::Object),
];

fn tag_at(s: &str) -> Option<(Token, usize)> {
    TAGS.iter()
        .find(|(tag, _)| s.starts_with(tag))
        .map(|(tag, tok)| (tok.clone(), tag.len()))
}

/// Splits text into tags and whitespace-delimited words. A word opening with
/// `"` extends to the matching closing quote, so quoted literals survive as
/// one opaque token (inner whitespace is collapsed to single spaces).
fn lex(text: &str, parens_delimit: bool) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut rest = text;
    loop {
        rest = rest.trim_start();
        if rest.is_empty() {
            break;
        }
        if let Some((tok, len)) = tag_at(rest) {
            tokens.push(tok);
            rest = &rest[len..];
            continue;
        }
        if parens_delimit {
            if let Some(r) = rest.strip_prefix('(') {
                tokens.push(Token::Open);
                rest = r;
                continue;
            }
            if let Some(r) = rest.strip_prefix(')') {
                tokens.push(Token::Close);
                rest = r;
                continue;
            }
        }
        let mut end = 0;
        if let Some(quoted) = rest.strip_prefix('"') {
            if let Some(close) = quoted.find('"') {
                end = close + 2;
            }
        }
        while end < rest.len() {
            let tail = &rest[end..];
            let c = tail.chars().next().unwrap();
            if c.is_whitespace()
                || tag_at(tail).is_some()
                || (parens_delimit && (c == '(' || c == ')'))
            {
                break;
            }
            end += c.len_utf8();
        }
        tokens.push(Token::Word(normalize_ws(&rest[..end])));
        rest = &rest[end..];
    }
    tokens
}

fn normalize_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn render_tokens(tokens: &[Token]) -> String {
    tokens
        .iter()
        .map(|t| match t {
            Token::Open => SE_OPEN,
            Token::Close => SE_CLOSE,
            Token::Subject => SUBJECT_TAG,
            Token::Relation => RELATION_TAG,
            Token::Object => OBJECT_TAG,
            Token::Word(w) => w.as_str(),
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Parses a tag-delimited S-expression such as
/// `<SE> lambda $0 e <SE> loc:t ap0 $0 </SE> </SE>`.
///
/// Literal parentheses are accepted as synonyms for the tags, so canonical
/// part strings like `(loc:t ap0 $0)` parse as well. Triple tags inside an
/// S-expression are treated as plain atoms.
pub fn parse_sexpr(text: &str) -> Result<LogicalForm, FormError> {
    let tokens = lex(text, true);
    if tokens.is_empty() {
        return Err(FormError::EmptyInput);
    }
    let opens = tokens.iter().filter(|t| **t == Token::Open).count();
    let closes = tokens.iter().filter(|t| **t == Token::Close).count();
    if opens != closes {
        return Err(FormError::UnbalancedDelimiters { opens, closes });
    }
    if tokens[0] != Token::Open {
        return Err(FormError::TrailingTokens(render_tokens(&tokens)));
    }

    let mut stack: Vec<Vec<Node>> = Vec::new();
    let mut root = None;
    for (i, tok) in tokens.iter().enumerate() {
        if root.is_some() {
            return Err(FormError::TrailingTokens(render_tokens(&tokens[i..])));
        }
        match tok {
            Token::Open => stack.push(Vec::new()),
            Token::Close => {
                let children = stack
                    .pop()
                    .ok_or(FormError::UnbalancedDelimiters { opens, closes })?;
                if children.is_empty() {
                    return Err(FormError::EmptyExpression);
                }
                let node = Node::List(children);
                match stack.last_mut() {
                    Some(parent) => parent.push(node),
                    None => root = Some(node),
                }
            }
            other => {
                let atom = render_tokens(std::slice::from_ref(other));
                stack
                    .last_mut()
                    .ok_or(FormError::UnbalancedDelimiters { opens, closes })?
                    .push(Node::Atom(atom));
            }
        }
    }
    root.map(LogicalForm::SExpr)
        .ok_or(FormError::UnbalancedDelimiters { opens, closes })
}

/// Parses a sequence of `<S> .. <R> .. <O> ..` segments into a triple set.
/// The empty string is the empty set.
pub fn parse_triples(text: &str) -> Result<LogicalForm, FormError> {
    let tokens = lex(text, false);
    let mut segments: Vec<&[Token]> = Vec::new();
    let mut start = 0;
    for (i, tok) in tokens.iter().enumerate() {
        if *tok == Token::Subject && i > start {
            segments.push(&tokens[start..i]);
            start = i;
        }
    }
    if start < tokens.len() {
        segments.push(&tokens[start..]);
    }

    let mut set = BTreeSet::new();
    for seg in segments {
        set.insert(parse_segment(seg)?);
    }
    Ok(LogicalForm::TripleSet(set))
}

fn parse_segment(seg: &[Token]) -> Result<Triple, FormError> {
    let segment = || render_tokens(seg);
    let order = [
        (Token::Subject, SUBJECT_TAG),
        (Token::Relation, RELATION_TAG),
        (Token::Object, OBJECT_TAG),
    ];
    let mut slots: [Vec<&str>; 3] = Default::default();
    let mut current: Option<usize> = None;
    for tok in seg {
        match tok {
            Token::Word(w) => match current {
                Some(slot) => slots[slot].push(w),
                None => {
                    return Err(FormError::MissingTag {
                        tag: SUBJECT_TAG,
                        segment: segment(),
                    })
                }
            },
            Token::Open | Token::Close => {
                return Err(FormError::UnexpectedTag {
                    tag: if *tok == Token::Open { SE_OPEN } else { SE_CLOSE },
                    segment: segment(),
                })
            }
            tag => {
                let idx = order.iter().position(|(t, _)| t == tag).unwrap();
                let expected = current.map_or(0, |c| c + 1);
                if idx < expected {
                    return Err(FormError::UnexpectedTag {
                        tag: order[idx].1,
                        segment: segment(),
                    });
                }
                if idx > expected {
                    return Err(FormError::MissingTag {
                        tag: order[expected].1,
                        segment: segment(),
                    });
                }
                current = Some(idx);
            }
        }
    }
    match current {
        Some(2) => {}
        other => {
            return Err(FormError::MissingTag {
                tag: order[other.map_or(0, |c| c + 1)].1,
                segment: segment(),
            })
        }
    }
    for (slot, (_, tag)) in slots.iter().zip(order.iter()) {
        if slot.is_empty() {
            return Err(FormError::EmptySlot {
                tag,
                segment: segment(),
            });
        }
    }
    Ok(Triple {
        subject: slots[0].join(" "),
        relation: slots[1].join(" "),
        object: slots[2].join(" "),
    })
}

/// Deterministic linear form. Triples are emitted in lexicographic order of
/// their canonical strings; the empty triple set linearizes to `""`.
pub fn linearize(form: &LogicalForm) -> String {
    match form {
        LogicalForm::SExpr(root) => {
            let mut out = Vec::new();
            root.write_tagged(&mut out);
            out.join(" ")
        }
        LogicalForm::TripleSet(set) => {
            let mut triples: Vec<(String, &Triple)> =
                set.iter().map(|t| (t.canonical(), t)).collect();
            triples.sort();
            triples
                .iter()
                .map(|(_, t)| t.linearize())
                .collect::<Vec<_>>()
                .join(" ")
        }
    }
}

/// All compound subexpressions (root included, atoms excluded) or all
/// individual triples.
pub fn parts(form: &LogicalForm) -> BTreeSet<Part> {
    form.part_occurrences().into_iter().collect()
}

/// Splits a camel-cased token into words: `isPartOf` -> `is Part Of`.
/// Capital runs stay together up to the last capital before a lowercase
/// letter, so `NASAHeadquarters` -> `NASA Headquarters`.
pub fn split_camel_case(token: &str) -> Vec<String> {
    let chars: Vec<char> = token.chars().collect();
    let mut words = Vec::new();
    let mut current = String::new();
    for (i, &c) in chars.iter().enumerate() {
        if i > 0 && c.is_uppercase() {
            let prev = chars[i - 1];
            let next_lower = chars.get(i + 1).is_some_and(|n| n.is_lowercase());
            if prev.is_lowercase() || (prev.is_uppercase() && next_lower) {
                words.push(std::mem::take(&mut current));
            }
        }
        current.push(c);
    }
    if !current.is_empty() {
        words.push(current);
    }
    words
}

/// Camel-case splitting applied to every whitespace token of a phrase.
pub fn split_camel_case_phrase(text: &str) -> String {
    text.split_whitespace()
        .flat_map(split_camel_case)
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    TextToStructure,
    StructureToText,
}

impl Direction {
    pub fn prompt(self) -> &'static str {
        match self {
            Direction::TextToStructure => TEXT_TO_STRUCTURE_PROMPT,
            Direction::StructureToText => STRUCTURE_TO_TEXT_PROMPT,
        }
    }
}

pub fn apply_prompt(direction: Direction, body: &str) -> String {
    format!("{} {}", direction.prompt(), body)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sexpr(text: &str) -> Node {
        match parse_sexpr(text).unwrap() {
            LogicalForm::SExpr(n) => n,
            other => panic!("expected sexpr, got {other:?}"),
        }
    }

    fn part_set(items: &[&str]) -> BTreeSet<Part> {
        items.iter().map(|s| Part::from_canonical(*s)).collect()
    }

    #[test]
    fn parses_atis_lambda() {
        let root = sexpr("<SE> lambda $0 e <SE> loc:t ap0 $0 </SE> </SE>");
        assert_eq!(
            root,
            Node::list(vec![
                Node::atom("lambda"),
                Node::atom("$0"),
                Node::atom("e"),
                Node::list(vec![Node::atom("loc:t"), Node::atom("ap0"), Node::atom("$0")]),
            ])
        );
    }

    #[test]
    fn parses_single_atom_expression() {
        assert_eq!(sexpr("<SE> a </SE>"), Node::list(vec![Node::atom("a")]));
        assert_eq!(sexpr("<SE>a</SE>"), Node::list(vec![Node::atom("a")]));
    }

    #[test]
    fn sexpr_errors() {
        assert_eq!(
            parse_sexpr("<SE> a <SE> b"),
            Err(FormError::UnbalancedDelimiters { opens: 2, closes: 0 })
        );
        assert_eq!(parse_sexpr("<SE></SE>"), Err(FormError::EmptyExpression));
        assert_eq!(parse_sexpr("<SE> a <SE> </SE> </SE>"), Err(FormError::EmptyExpression));
        assert_eq!(parse_sexpr("   "), Err(FormError::EmptyInput));
        assert!(matches!(
            parse_sexpr("</SE> a <SE>"),
            Err(FormError::UnbalancedDelimiters { .. }) | Err(FormError::TrailingTokens(_))
        ));
        assert!(matches!(
            parse_sexpr("<SE> a </SE> <SE> b </SE>"),
            Err(FormError::TrailingTokens(_))
        ));
        assert!(matches!(parse_sexpr("x <SE> a </SE>"), Err(FormError::TrailingTokens(_))));
    }

    #[test]
    fn parses_webnlg_triple_with_quoted_object() {
        let form =
            parse_triples("<S> Aarhus Airport <R> city served <O> \"Aarhus, Denmark\"").unwrap();
        assert_eq!(
            form,
            LogicalForm::triples([Triple::new("Aarhus Airport", "city served", "\"Aarhus, Denmark\"")])
        );
    }

    #[test]
    fn quoted_object_is_opaque() {
        let form = parse_triples("<S> a <R> b <O> \"x <S> y\"").unwrap();
        assert_eq!(form, LogicalForm::triples([Triple::new("a", "b", "\"x <S> y\"")]));
    }

    #[test]
    fn duplicate_triples_collapse() {
        let form = parse_triples("<S> a <R> b <O> c <S> a <R> b <O> c").unwrap();
        match form {
            LogicalForm::TripleSet(s) => assert_eq!(s.len(), 1),
            _ => unreachable!(),
        }
    }

    #[test]
    fn triple_errors() {
        assert!(matches!(
            parse_triples("<S> x <O> y"),
            Err(FormError::MissingTag { tag: RELATION_TAG, .. })
        ));
        assert!(matches!(
            parse_triples("<S> x <R> y"),
            Err(FormError::MissingTag { tag: OBJECT_TAG, .. })
        ));
        assert!(matches!(
            parse_triples("x <R> y <O> z"),
            Err(FormError::MissingTag { tag: SUBJECT_TAG, .. })
        ));
        assert!(matches!(
            parse_triples("<S> <R> y <O> z"),
            Err(FormError::EmptySlot { tag: SUBJECT_TAG, .. })
        ));
        assert!(matches!(
            parse_triples("<S> x <R> y <O>"),
            Err(FormError::EmptySlot { tag: OBJECT_TAG, .. })
        ));
        assert!(matches!(
            parse_triples("<S> x <R> y <R> w <O> z"),
            Err(FormError::UnexpectedTag { .. })
        ));
        assert!(matches!(
            parse_triples("<S> x <R> y <O> <SE> z"),
            Err(FormError::UnexpectedTag { .. })
        ));
    }

    #[test]
    fn linearize_examples() {
        let form = parse_sexpr("(lambda $0 e (loc:t ap0 $0))").unwrap();
        assert_eq!(linearize(&form), "<SE> lambda $0 e <SE> loc:t ap0 $0 </SE> </SE>");
        assert_eq!(linearize(&LogicalForm::triples([])), "");
        let a = Triple::new("b", "r", "c");
        let b = Triple::new("a", "r", "c");
        assert_eq!(
            linearize(&LogicalForm::triples([a.clone(), b.clone()])),
            linearize(&LogicalForm::triples([b, a]))
        );
    }

    #[test]
    fn linearize_orders_by_canonical_string() {
        // Field order would put "a" before "a -x"; the canonical strings
        // compare '<' against '-' at that position.
        let plain = Triple::new("a", "r", "o");
        let dashed = Triple::new("a -x", "r", "o");
        assert!(plain < dashed);
        let text = linearize(&LogicalForm::triples([plain, dashed]));
        assert_eq!(text, "<S> a -x <R> r <O> o <S> a <R> r <O> o");
    }

    #[test]
    fn parts_of_atis_examples() {
        let form = parse_sexpr("(lambda $0 e (loc:t ap0 $0))").unwrap();
        assert_eq!(
            parts(&form),
            part_set(&["(loc:t ap0 $0)", "(lambda $0 e (loc:t ap0 $0))"])
        );
        let form = parse_sexpr("(and (flight $0) (from $0 ci1))").unwrap();
        let p = parts(&form);
        assert!(p.contains(&Part::from_canonical("(flight $0)")));
        assert!(p.contains(&Part::from_canonical("(from $0 ci1)")));
        assert!(p.contains(&Part::from_canonical("(and (flight $0) (from $0 ci1))")));
        assert_eq!(p.len(), 3);
    }

    #[test]
    fn parts_of_triples_are_the_triples() {
        let form =
            parse_triples("<S> Aarhus Airport <R> city served <O> \"Aarhus, Denmark\"").unwrap();
        assert_eq!(
            parts(&form),
            part_set(&["(<S> Aarhus Airport <R> city served <O> \"Aarhus, Denmark\")"])
        );
        assert!(parts(&LogicalForm::triples([])).is_empty());
    }

    #[test]
    fn repeated_subtrees_are_counted_per_occurrence() {
        let form = parse_sexpr("(and (f $0) (f $0))").unwrap();
        assert_eq!(form.part_occurrences().len(), 3);
        assert_eq!(parts(&form).len(), 2);
    }

    #[test]
    fn parts_round_trip_through_the_parser() {
        let form = parse_sexpr("(lambda $0 e (and (flight $0) (to $0 ci0)))").unwrap();
        for part in parts(&form) {
            let back = part.to_form(FormKind::Sexpr).unwrap();
            assert_eq!(back.part_occurrences()[0], part);
        }
        let form = parse_triples("<S> a b <R> c <O> d <S> e <R> f <O> g").unwrap();
        for part in parts(&form) {
            let back = part.to_form(FormKind::Triples).unwrap();
            assert_eq!(parts(&back).into_iter().next().unwrap(), part);
        }
    }

    #[test]
    fn camel_case() {
        assert_eq!(split_camel_case("AarhusAirport"), ["Aarhus", "Airport"]);
        assert_eq!(split_camel_case("isPartOf"), ["is", "Part", "Of"]);
        assert_eq!(split_camel_case("NASA"), ["NASA"]);
        assert_eq!(split_camel_case("NASAHeadquarters"), ["NASA", "Headquarters"]);
        assert_eq!(split_camel_case("city"), ["city"]);
        assert!(split_camel_case("").is_empty());
        assert_eq!(split_camel_case_phrase("cityServed AarhusAirport"), "city Served Aarhus Airport");
    }

    #[test]
    fn prompts() {
        assert_eq!(apply_prompt(Direction::TextToStructure, "x"), "Text to Graph: x");
        assert_eq!(apply_prompt(Direction::StructureToText, "z"), "Graph to Text: z");
        assert_eq!(apply_prompt(Direction::TextToStructure, ""), "Text to Graph: ");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn atom() -> impl Strategy<Value = Node> {
            "[a-z$:=_0-9]{1,6}".prop_map(Node::Atom)
        }

        fn tree() -> impl Strategy<Value = Node> {
            let leaf = prop::collection::vec(atom(), 1..4).prop_map(Node::List);
            leaf.prop_recursive(4, 32, 4, |inner| {
                prop::collection::vec(prop_oneof![atom(), inner], 1..5).prop_map(Node::List)
            })
        }

        fn slot() -> impl Strategy<Value = String> {
            prop_oneof![
                "[A-Za-z0-9]{1,5}( [A-Za-z0-9]{1,5}){0,2}",
                "\"[A-Za-z ,]{0,8}\"",
            ]
        }

        fn triple_set() -> impl Strategy<Value = LogicalForm> {
            prop::collection::vec((slot(), slot(), slot()), 0..6).prop_map(|v| {
                LogicalForm::triples(v.into_iter().map(|(s, r, o)| Triple::new(s, r, o)))
            })
        }

        proptest! {
            #[test]
            fn sexpr_round_trip(root in tree()) {
                let form = LogicalForm::SExpr(root.clone());
                let text = linearize(&form);
                prop_assert_eq!(parse_sexpr(&text).unwrap(), form);
                prop_assert_eq!(parse_sexpr(&root.parenthesized()).unwrap(), LogicalForm::SExpr(root));
            }

            #[test]
            fn triples_round_trip(form in triple_set()) {
                let text = linearize(&form);
                prop_assert_eq!(parse_triples(&text).unwrap(), form);
            }

            #[test]
            fn sexpr_parts_count_internal_nodes(root in tree()) {
                let n = root.internal_nodes();
                let form = LogicalForm::SExpr(root);
                prop_assert_eq!(form.part_occurrences().len(), n);
                prop_assert!(parts(&form).len() <= n);
            }

            #[test]
            fn triple_parts_count(form in triple_set()) {
                let k = match &form { LogicalForm::TripleSet(s) => s.len(), _ => unreachable!() };
                prop_assert_eq!(parts(&form).len(), k);
            }

            #[test]
            fn camel_split_idempotent(token in "[A-Za-z]{0,12}") {
                let words = split_camel_case(&token);
                prop_assert_eq!(words.concat(), token);
                let rejoined = words.join(" ");
                let again: Vec<String> = rejoined.split(' ').filter(|w| !w.is_empty())
                    .flat_map(split_camel_case).collect();
                prop_assert_eq!(again, words);
            }
        }
    }
}
