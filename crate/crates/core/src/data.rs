//! Triple ingestion: TSV loading, vocabularies, integer encoding, the
//! filtered-evaluation index, dataset statistics and relation categories.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: expected 3 tab-separated fields, found {columns}")]
    Malformed { path: PathBuf, line: usize, columns: usize },
    #[error("{path}:{line}: empty label in field {field}")]
    EmptyLabel { path: PathBuf, line: usize, field: usize },
    #[error("cannot build a vocabulary from zero triples")]
    Empty,
    #[error("unknown {kind} label {label:?} at triple {position}")]
    UnknownLabel {
        kind: &'static str,
        label: String,
        position: usize,
    },
    #[error("duplicate triple at positions {first} and {second}")]
    Duplicate { first: usize, second: usize },
}

/// A labelled `(head, relation, tail)` fact as read from disk.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RawTriple {
    pub head: String,
    pub relation: String,
    pub tail: String,
}

impl RawTriple {
    pub fn new(head: impl Into<String>, relation: impl Into<String>, tail: impl Into<String>) -> Self {
        Self {
            head: head.into(),
            relation: relation.into(),
            tail: tail.into(),
        }
    }
}

/// An integer-encoded triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub head: usize,
    pub relation: usize,
    pub tail: usize,
}

impl Triple {
    #[inline]
    pub const fn new(head: usize, relation: usize, tail: usize) -> Self {
        Self { head, relation, tail }
    }
}

impl From<(usize, usize, usize)> for Triple {
    fn from((head, relation, tail): (usize, usize, usize)) -> Self {
        Self::new(head, relation, tail)
    }
}

/// Reads a tab-separated triple file. Blank lines are skipped; every other
/// line must hold exactly three non-empty tab-separated fields.
pub fn load_triples(path: impl AsRef<Path>) -> Result<Vec<RawTriple>, DataError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_triples(&text, path)
}

fn parse_triples(text: &str, path: &Path) -> Result<Vec<RawTriple>, DataError> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(DataError::Malformed {
                path: path.to_path_buf(),
                line: idx + 1,
                columns: fields.len(),
            });
        }
        for (field, value) in fields.iter().enumerate() {
            if value.trim().is_empty() {
                return Err(DataError::EmptyLabel {
                    path: path.to_path_buf(),
                    line: idx + 1,
                    field: field + 1,
                });
            }
        }
        out.push(RawTriple::new(fields[0].trim(), fields[1].trim(), fields[2].trim()));
    }
    Ok(out)
}

/// Dense, bijective label ↔ id maps for entities and relations.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocab {
    entities: Vec<String>,
    relations: Vec<String>,
    entity_ids: HashMap<String, usize>,
    relation_ids: HashMap<String, usize>,
}

impl Vocab {
    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn entity_id(&self, label: &str) -> Option<usize> {
        self.entity_ids.get(label).copied()
    }

    pub fn relation_id(&self, label: &str) -> Option<usize> {
        self.relation_ids.get(label).copied()
    }

    pub fn entity_label(&self, id: usize) -> Option<&str> {
        self.entities.get(id).map(String::as_str)
    }

    pub fn relation_label(&self, id: usize) -> Option<&str> {
        self.relations.get(id).map(String::as_str)
    }

    pub fn entities(&self) -> &[String] {
        &self.entities
    }

    pub fn relations(&self) -> &[String] {
        &self.relations
    }

    fn intern_entity(&mut self, label: &str) {
        if !self.entity_ids.contains_key(label) {
            self.entity_ids.insert(label.to_owned(), self.entities.len());
            self.entities.push(label.to_owned());
        }
    }

    fn intern_relation(&mut self, label: &str) {
        if !self.relation_ids.contains_key(label) {
            self.relation_ids.insert(label.to_owned(), self.relations.len());
            self.relations.push(label.to_owned());
        }
    }
}

/// Assigns ids in order of first appearance across `splits`, visiting each
/// triple as head, relation, tail.
pub fn build_vocab(splits: &[&[RawTriple]]) -> Result<Vocab, DataError> {
    if splits.iter().all(|s| s.is_empty()) {
        return Err(DataError::Empty);
    }
    let mut vocab = Vocab::default();
    for triple in splits.iter().flat_map(|s| s.iter()) {
        vocab.intern_entity(&triple.head);
        vocab.intern_relation(&triple.relation);
        vocab.intern_entity(&triple.tail);
    }
    Ok(vocab)
}

/// A split of id triples, duplicate-free.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EncodedSplit {
    pub triples: Vec<Triple>,
}

impl EncodedSplit {
    /// Wraps pre-encoded triples, rejecting duplicates.
    pub fn new(triples: Vec<Triple>) -> Result<Self, DataError> {
        let mut seen = HashMap::with_capacity(triples.len());
        for (pos, t) in triples.iter().enumerate() {
            if let Some(first) = seen.insert(*t, pos) {
                return Err(DataError::Duplicate { first, second: pos });
            }
        }
        Ok(Self { triples })
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Triple> {
        self.triples.iter()
    }
}

pub fn encode(raw: &[RawTriple], vocab: &Vocab) -> Result<EncodedSplit, DataError> {
    let unknown = |kind, label: &str, position| DataError::UnknownLabel {
        kind,
        label: label.to_owned(),
        position,
    };
    let triples = raw
        .iter()
        .enumerate()
        .map(|(pos, t)| {
            Ok(Triple::new(
                vocab
                    .entity_id(&t.head)
                    .ok_or_else(|| unknown("entity", &t.head, pos))?,
                vocab
                    .relation_id(&t.relation)
                    .ok_or_else(|| unknown("relation", &t.relation, pos))?,
                vocab
                    .entity_id(&t.tail)
                    .ok_or_else(|| unknown("entity", &t.tail, pos))?,
            ))
        })
        .collect::<Result<Vec<_>, DataError>>()?;
    EncodedSplit::new(triples)
}

/// Inverse of [`encode`]. Panics on ids outside the vocabulary.
pub fn decode(split: &EncodedSplit, vocab: &Vocab) -> Vec<RawTriple> {
    split
        .iter()
        .map(|t| {
            RawTriple::new(
                vocab.entities[t.head].clone(),
                vocab.relations[t.relation].clone(),
                vocab.entities[t.tail].clone(),
            )
        })
        .collect()
}

/// Every known-true triple, indexed for both query directions.
#[derive(Debug, Clone, Default)]
pub struct FilterIndex {
    known_tails: HashMap<(usize, usize), HashSet<usize>>,
    known_heads: HashMap<(usize, usize), HashSet<usize>>,
    len: usize,
}

impl FilterIndex {
    pub fn build(splits: &[&EncodedSplit]) -> Self {
        let mut index = Self::default();
        for t in splits.iter().flat_map(|s| s.iter()) {
            if index
                .known_tails
                .entry((t.head, t.relation))
                .or_default()
                .insert(t.tail)
            {
                index.len += 1;
            }
            index
                .known_heads
                .entry((t.relation, t.tail))
                .or_default()
                .insert(t.head);
        }
        index
    }

    /// Tails `t` with `(head, relation, t)` known to be true.
    pub fn known_tails(&self, head: usize, relation: usize) -> Option<&HashSet<usize>> {
        self.known_tails.get(&(head, relation))
    }

    /// Heads `h` with `(h, relation, tail)` known to be true.
    pub fn known_heads(&self, relation: usize, tail: usize) -> Option<&HashSet<usize>> {
        self.known_heads.get(&(relation, tail))
    }

    pub fn contains(&self, t: Triple) -> bool {
        self.known_tails(t.head, t.relation)
            .is_some_and(|s| s.contains(&t.tail))
    }

    /// Number of distinct indexed triples.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Train/valid/test splits encoded under one vocabulary.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub vocab: Vocab,
    pub train: EncodedSplit,
    pub valid: EncodedSplit,
    pub test: EncodedSplit,
}

impl Dataset {
    pub fn from_raw(train: &[RawTriple], valid: &[RawTriple], test: &[RawTriple]) -> Result<Self, DataError> {
        let vocab = build_vocab(&[train, valid, test])?;
        Ok(Self {
            train: encode(train, &vocab)?,
            valid: encode(valid, &vocab)?,
            test: encode(test, &vocab)?,
            vocab,
        })
    }

    /// Loads `train.txt`, `valid.txt` and `test.txt` from `dir`.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self, DataError> {
        let dir = dir.as_ref();
        let train = load_triples(dir.join("train.txt"))?;
        let valid = load_triples(dir.join("valid.txt"))?;
        let test = load_triples(dir.join("test.txt"))?;
        Self::from_raw(&train, &valid, &test)
    }

    pub fn filter_index(&self) -> FilterIndex {
        FilterIndex::build(&[&self.train, &self.valid, &self.test])
    }

    pub fn stats(&self) -> StatsReport {
        dataset_stats(&self.vocab, &self.train, &self.valid, &self.test)
    }

    pub fn num_entities(&self) -> usize {
        self.vocab.num_entities()
    }

    pub fn num_relations(&self) -> usize {
        self.vocab.num_relations()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsReport {
    pub entities: usize,
    pub relations: usize,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

pub fn dataset_stats(vocab: &Vocab, train: &EncodedSplit, valid: &EncodedSplit, test: &EncodedSplit) -> StatsReport {
    StatsReport {
        entities: vocab.num_entities(),
        relations: vocab.num_relations(),
        train: train.len(),
        valid: valid.len(),
        test: test.len(),
    }
}

impl StatsReport {
    pub fn to_table(&self) -> String {
        let rows = [
            ("entities", self.entities),
            ("relations", self.relations),
            ("train", self.train),
            ("valid", self.valid),
            ("test", self.test),
        ];
        let width = rows.iter().map(|(_, v)| v.to_string().len()).max().unwrap_or(1);
        rows.iter().map(|(k, v)| format!("{k:<10} {v:>width$}\n")).collect()
    }
}

/// Relation cardinality class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RelationCategory {
    #[serde(rename = "1-to-1")]
    OneToOne,
    #[serde(rename = "1-to-N")]
    OneToN,
    #[serde(rename = "N-to-1")]
    NToOne,
    #[serde(rename = "N-to-N")]
    NToN,
}

impl RelationCategory {
    pub const ALL: [RelationCategory; 4] = [Self::OneToOne, Self::OneToN, Self::NToOne, Self::NToN];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::OneToOne => "1-to-1",
            Self::OneToN => "1-to-N",
            Self::NToOne => "N-to-1",
            Self::NToN => "N-to-N",
        }
    }
}

impl fmt::Display for RelationCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Average-cardinality threshold separating "1" from "N".
pub const CATEGORY_THRESHOLD: f64 = 1.5;

/// Average distinct tails per `(h, r)` and heads per `(r, t)` for one relation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cardinality {
    pub tails_per_head: f64,
    pub heads_per_tail: f64,
}

impl Cardinality {
    pub fn category(self) -> RelationCategory {
        let many_tails = self.tails_per_head >= CATEGORY_THRESHOLD;
        let many_heads = self.heads_per_tail >= CATEGORY_THRESHOLD;
        match (many_tails, many_heads) {
            (false, false) => RelationCategory::OneToOne,
            (true, false) => RelationCategory::OneToN,
            (false, true) => RelationCategory::NToOne,
            (true, true) => RelationCategory::NToN,
        }
    }
}

/// Per-relation cardinalities over the training triples. Relations absent
/// from `train` get `None`.
pub fn relation_cardinalities(train: &EncodedSplit, num_relations: usize) -> Vec<Option<Cardinality>> {
    let mut tails: HashMap<(usize, usize), HashSet<usize>> = HashMap::new();
    let mut heads: HashMap<(usize, usize), HashSet<usize>> = HashMap::new();
    for t in train.iter() {
        tails.entry((t.relation, t.head)).or_default().insert(t.tail);
        heads.entry((t.relation, t.tail)).or_default().insert(t.head);
    }
    // (sum of set sizes, number of keys) per relation
    let mut tph = vec![(0usize, 0usize); num_relations];
    let mut hpt = vec![(0usize, 0usize); num_relations];
    for ((r, _), set) in &tails {
        tph[*r].0 += set.len();
        tph[*r].1 += 1;
    }
    for ((r, _), set) in &heads {
        hpt[*r].0 += set.len();
        hpt[*r].1 += 1;
    }
    tph.iter()
        .zip(&hpt)
        .map(|(&(ts, tn), &(hs, hn))| {
            (tn > 0).then(|| Cardinality {
                tails_per_head: ts as f64 / tn as f64,
                heads_per_tail: hs as f64 / hn as f64,
            })
        })
        .collect()
}

/// Category for every relation id in `0..num_relations`. Relations that
/// never occur in training carry no cardinality evidence and are labelled
/// 1-to-1.
pub fn categorize_relations(train: &EncodedSplit, num_relations: usize) -> Vec<RelationCategory> {
    relation_cardinalities(train, num_relations)
        .into_iter()
        .map(|c| c.map_or(RelationCategory::OneToOne, Cardinality::category))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Vec<RawTriple>, DataError> {
        parse_triples(text, Path::new("mem.txt"))
    }

    #[test]
    fn parses_single_line() {
        assert_eq!(
            parse("Q42\tP31\tQ5\n").unwrap(),
            vec![RawTriple::new("Q42", "P31", "Q5")]
        );
    }

    #[test]
    fn empty_file_is_empty_list() {
        assert!(parse("").unwrap().is_empty());
    }

    #[test]
    fn space_separated_is_rejected_with_line() {
        match parse("a b c\n") {
            Err(DataError::Malformed { line, columns, .. }) => {
                assert_eq!(line, 1);
                assert_eq!(columns, 1);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_field_is_rejected() {
        assert!(matches!(
            parse("a\t \tc\n"),
            Err(DataError::EmptyLabel { line: 1, field: 2, .. })
        ));
    }

    #[test]
    fn crlf_and_blank_lines() {
        let t = parse("a\tr\tb\r\n\n c \tr\td\n").unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t[1].head, "c");
    }

    #[test]
    fn load_missing_file_names_path() {
        let err = load_triples("/nonexistent/test.txt").unwrap_err();
        assert!(err.to_string().contains("/nonexistent/test.txt"));
    }

    #[test]
    fn vocab_counts_single_triple() {
        let raw = vec![RawTriple::new("a", "r", "b")];
        let v = build_vocab(&[&raw]).unwrap();
        assert_eq!((v.num_entities(), v.num_relations()), (2, 1));
        assert_eq!(v.entity_id("a"), Some(0));
        assert_eq!(v.entity_id("b"), Some(1));
    }

    #[test]
    fn vocab_rejects_empty() {
        assert!(matches!(build_vocab(&[&[], &[]]), Err(DataError::Empty)));
    }

    #[test]
    fn vocab_covers_all_splits() {
        let train = vec![RawTriple::new("a", "r", "b")];
        let test = vec![RawTriple::new("c", "s", "a")];
        let v = build_vocab(&[&train, &[], &test]).unwrap();
        assert_eq!(v.entity_id("c"), Some(2));
        assert_eq!(v.relation_id("s"), Some(1));
    }

    #[test]
    fn encode_direct_lookup() {
        let raw = vec![RawTriple::new("a", "r", "b")];
        let v = build_vocab(&[&raw]).unwrap();
        assert_eq!(encode(&raw, &v).unwrap().triples, vec![Triple::new(0, 0, 1)]);
    }

    #[test]
    fn encode_unknown_label() {
        let v = build_vocab(&[&[RawTriple::new("a", "r", "b")]]).unwrap();
        let err = encode(&[RawTriple::new("a", "r", "z")], &v).unwrap_err();
        assert!(matches!(&err, DataError::UnknownLabel { label, position: 0, .. } if label == "z"));
        assert!(err.to_string().contains("\"z\""));
    }

    #[test]
    fn encode_duplicate_reports_both_positions() {
        let raw = vec![
            RawTriple::new("a", "r", "b"),
            RawTriple::new("b", "r", "a"),
            RawTriple::new("a", "r", "b"),
        ];
        let v = build_vocab(&[&raw]).unwrap();
        assert!(matches!(
            encode(&raw, &v),
            Err(DataError::Duplicate { first: 0, second: 2 })
        ));
    }

    #[test]
    fn filter_single_triple() {
        let s = EncodedSplit::new(vec![Triple::new(0, 0, 1)]).unwrap();
        let empty = EncodedSplit::default();
        let f = FilterIndex::build(&[&s, &empty, &empty]);
        assert_eq!(f.known_tails(0, 0).unwrap(), &HashSet::from([1]));
        assert_eq!(f.known_heads(0, 1).unwrap(), &HashSet::from([0]));
        assert_eq!(f.len(), 1);
    }

    #[test]
    fn filter_accumulates_tails() {
        let s = EncodedSplit::new(vec![Triple::new(0, 0, 1), Triple::new(0, 0, 2)]).unwrap();
        let f = FilterIndex::build(&[&s]);
        assert_eq!(f.known_tails(0, 0).unwrap(), &HashSet::from([1, 2]));
        assert!(f.contains(Triple::new(0, 0, 2)));
        assert!(!f.contains(Triple::new(0, 0, 0)));
    }

    #[test]
    fn filter_counts_cross_split_duplicates_once() {
        let a = EncodedSplit::new(vec![Triple::new(0, 0, 1)]).unwrap();
        let b = EncodedSplit::new(vec![Triple::new(0, 0, 1), Triple::new(1, 0, 0)]).unwrap();
        assert_eq!(FilterIndex::build(&[&a, &b]).len(), 2);
    }

    #[test]
    fn stats_of_synthetic_kg() {
        let train = vec![RawTriple::new("a", "r", "b"), RawTriple::new("b", "r", "c")];
        let valid = vec![RawTriple::new("c", "s", "a")];
        let ds = Dataset::from_raw(&train, &valid, &[]).unwrap();
        let s = ds.stats();
        assert_eq!(
            s,
            StatsReport {
                entities: 3,
                relations: 2,
                train: 2,
                valid: 1,
                test: 0
            }
        );
        let json = serde_json::to_value(s).unwrap();
        assert_eq!(json["valid"], 1);
        assert!(s.to_table().contains("entities"));
    }

    fn split(ts: &[(usize, usize, usize)]) -> EncodedSplit {
        EncodedSplit::new(ts.iter().map(|&t| t.into()).collect()).unwrap()
    }

    #[test]
    fn single_triple_relation_is_one_to_one() {
        let c = categorize_relations(&split(&[(0, 0, 1)]), 1);
        assert_eq!(c, vec![RelationCategory::OneToOne]);
    }

    #[test]
    fn one_to_n_by_hand() {
        // (h=0, r) -> {1,2,3}: tph = 3/1; each (r, t) has one head: hpt = 1
        let train = split(&[(0, 0, 1), (0, 0, 2), (0, 0, 3)]);
        let card = relation_cardinalities(&train, 1)[0].unwrap();
        assert_eq!(card.tails_per_head, 3.0);
        assert_eq!(card.heads_per_tail, 1.0);
        assert_eq!(card.category(), RelationCategory::OneToN);
    }

    #[test]
    fn n_to_n_by_hand() {
        // pairs (0,r),(2,r) each reach {1,3}; tails 1 and 3 each have heads {0,2}
        let train = split(&[(0, 0, 1), (2, 0, 1), (0, 0, 3), (2, 0, 3)]);
        let card = relation_cardinalities(&train, 1)[0].unwrap();
        assert_eq!((card.tails_per_head, card.heads_per_tail), (2.0, 2.0));
        assert_eq!(card.category(), RelationCategory::NToN);
    }

    #[test]
    fn n_to_one_and_absent_relation() {
        let train = split(&[(0, 0, 5), (1, 0, 5), (2, 0, 5)]);
        let cats = categorize_relations(&train, 2);
        assert_eq!(cats, vec![RelationCategory::NToOne, RelationCategory::OneToOne]);
    }

    #[test]
    fn threshold_is_inclusive() {
        let c = Cardinality {
            tails_per_head: 1.5,
            heads_per_tail: 1.49,
        };
        assert_eq!(c.category(), RelationCategory::OneToN);
    }
}
