//! Vocabularies, triples, quads and the indexed triple store.
//!
//! Interchange format is tab-separated UTF-8, one record per line:
//! `subject<TAB>relation<TAB>object[<TAB>confidence]`. Lines starting with
//! `#` and blank lines are ignored.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntityId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RelationId(pub u32);

impl EntityId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl RelationId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Bijective label <-> dense id interning.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocab {
    labels: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern(&mut self, label: &str) -> u32 {
        if let Some(&id) = self.index.get(label) {
            return id;
        }
        let id = self.labels.len() as u32;
        self.labels.push(label.to_owned());
        self.index.insert(label.to_owned(), id);
        id
    }

    pub fn get(&self, label: &str) -> Option<u32> {
        self.index.get(label).copied()
    }

    pub fn label(&self, id: u32) -> &str {
        &self.labels[id as usize]
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

impl FromIterator<String> for Vocab {
    fn from_iter<I: IntoIterator<Item = String>>(iter: I) -> Self {
        let mut vocab = Vocab::new();
        for label in iter {
            vocab.intern(&label);
        }
        vocab
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub subject: EntityId,
    pub relation: RelationId,
    pub object: EntityId,
}

impl Triple {
    pub fn new(subject: EntityId, relation: RelationId, object: EntityId) -> Self {
        Self {
            subject,
            relation,
            object,
        }
    }
}

/// A triple with a confidence in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quad {
    pub triple: Triple,
    pub confidence: f64,
}

impl Quad {
    pub fn new(triple: Triple, confidence: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::InvalidArgument(format!(
                "confidence {confidence} outside [0, 1]"
            )));
        }
        Ok(Self { triple, confidence })
    }

    pub fn tau(&self) -> Triple {
        self.triple
    }
}

/// Drops the confidence of a quad.
pub fn tau(q: &Quad) -> Triple {
    q.triple
}

/// Number of quads in which `e` appears as subject or object. A self-loop counts once.
pub fn connectivity(e: EntityId, quads: &[Quad]) -> usize {
    quads
        .iter()
        .filter(|q| q.triple.subject == e || q.triple.object == e)
        .count()
}

/// Entity and relation vocabularies plus a deduplicated, indexed quad store.
#[derive(Clone, Debug, Default)]
pub struct KnowledgeGraph {
    entities: Vocab,
    relations: Vocab,
    quads: Vec<Quad>,
    by_triple: HashMap<Triple, usize>,
    by_subject: HashMap<EntityId, Vec<usize>>,
    by_object: HashMap<EntityId, Vec<usize>>,
    by_pair: HashMap<(EntityId, EntityId), Vec<usize>>,
}

impl KnowledgeGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_vocabularies(entities: Vocab, relations: Vocab) -> Self {
        Self {
            entities,
            relations,
            ..Self::default()
        }
    }

    /// An empty graph sharing this graph's vocabularies.
    pub fn empty_like(&self) -> Self {
        Self::with_vocabularies(self.entities.clone(), self.relations.clone())
    }

    pub fn entities(&self) -> &Vocab {
        &self.entities
    }

    pub fn relations(&self) -> &Vocab {
        &self.relations
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn intern_entity(&mut self, label: &str) -> EntityId {
        EntityId(self.entities.intern(label))
    }

    pub fn intern_relation(&mut self, label: &str) -> RelationId {
        RelationId(self.relations.intern(label))
    }

    pub fn entity_id(&self, label: &str) -> Option<EntityId> {
        self.entities.get(label).map(EntityId)
    }

    pub fn relation_id(&self, label: &str) -> Option<RelationId> {
        self.relations.get(label).map(RelationId)
    }

    pub fn entity_label(&self, e: EntityId) -> &str {
        self.entities.label(e.0)
    }

    pub fn relation_label(&self, r: RelationId) -> &str {
        self.relations.label(r.0)
    }

    pub fn quads(&self) -> &[Quad] {
        &self.quads
    }

    pub fn len(&self) -> usize {
        self.quads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.quads.is_empty()
    }

    pub fn contains(&self, t: &Triple) -> bool {
        self.by_triple.contains_key(t)
    }

    pub fn confidence(&self, t: &Triple) -> Option<f64> {
        self.by_triple.get(t).map(|&i| self.quads[i].confidence)
    }

    /// Inserts a quad, keeping the maximum confidence on duplicate triples.
    /// Returns true when the triple was not present before.
    pub fn insert(&mut self, quad: Quad) -> bool {
        let t = quad.triple;
        debug_assert!(t.subject.index() < self.entities.len());
        debug_assert!(t.object.index() < self.entities.len());
        debug_assert!(t.relation.index() < self.relations.len());
        if let Some(&i) = self.by_triple.get(&t) {
            let stored = &mut self.quads[i];
            if quad.confidence > stored.confidence {
                stored.confidence = quad.confidence;
            }
            return false;
        }
        let i = self.quads.len();
        self.quads.push(quad);
        self.by_triple.insert(t, i);
        self.by_subject.entry(t.subject).or_default().push(i);
        self.by_object.entry(t.object).or_default().push(i);
        self.by_pair
            .entry((t.subject, t.object))
            .or_default()
            .push(i);
        true
    }

    pub fn insert_labels(
        &mut self,
        subject: &str,
        relation: &str,
        object: &str,
        confidence: f64,
    ) -> Result<Triple> {
        let triple = Triple::new(
            self.intern_entity(subject),
            self.intern_relation(relation),
            self.intern_entity(object),
        );
        self.insert(Quad::new(triple, confidence)?);
        Ok(triple)
    }

    pub fn by_subject(&self, e: EntityId) -> impl Iterator<Item = &Quad> {
        self.index_iter(self.by_subject.get(&e))
    }

    pub fn by_object(&self, e: EntityId) -> impl Iterator<Item = &Quad> {
        self.index_iter(self.by_object.get(&e))
    }

    /// Quads with exactly this (subject, object) pair.
    pub fn by_pair(&self, subject: EntityId, object: EntityId) -> impl Iterator<Item = &Quad> {
        self.index_iter(self.by_pair.get(&(subject, object)))
    }

    fn index_iter<'a>(&'a self, slots: Option<&'a Vec<usize>>) -> impl Iterator<Item = &'a Quad> {
        slots
            .into_iter()
            .flat_map(|v| v.iter())
            .map(move |&i| &self.quads[i])
    }

    /// Index-backed equivalent of [`connectivity`].
    pub fn connectivity(&self, e: EntityId) -> usize {
        let out = self.by_subject.get(&e).map_or(0, Vec::len);
        let inc = self.by_object.get(&e).map_or(0, Vec::len);
        let loops = self.by_pair.get(&(e, e)).map_or(0, Vec::len);
        out + inc - loops
    }

    pub fn triple_labels(&self, t: &Triple) -> (&str, &str, &str) {
        (
            self.entity_label(t.subject),
            self.relation_label(t.relation),
            self.entity_label(t.object),
        )
    }

    /// Maps a triple from another graph's vocabulary onto this one, if all labels are known here.
    pub fn translate(&self, other: &KnowledgeGraph, t: &Triple) -> Option<Triple> {
        let (s, r, o) = other.triple_labels(t);
        Some(Triple::new(
            self.entity_id(s)?,
            self.relation_id(r)?,
            self.entity_id(o)?,
        ))
    }

    /// Parses quad records and adds them to this graph.
    pub fn extend_from_reader<R: Read>(&mut self, reader: R, default_confidence: f64) -> Result<usize> {
        if !(0.0..=1.0).contains(&default_confidence) {
            return Err(Error::InvalidArgument(format!(
                "default confidence {default_confidence} outside [0, 1]"
            )));
        }
        let mut records = 0;
        for (n, line) in BufReader::new(reader).lines().enumerate() {
            let lineno = n + 1;
            let line = line.map_err(|e| Error::parse(lineno, e.to_string()))?;
            let line = line.strip_suffix('\r').unwrap_or(&line);
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let confidence = match fields.len() {
                3 => default_confidence,
                4 => parse_confidence(fields[3]).map_err(|m| Error::parse(lineno, m))?,
                k => {
                    return Err(Error::parse(
                        lineno,
                        format!("expected 3 or 4 tab-separated fields, found {k}"),
                    ))
                }
            };
            if fields[..3].iter().any(|f| f.is_empty()) {
                return Err(Error::parse(lineno, "empty field"));
            }
            self.insert_labels(fields[0], fields[1], fields[2], confidence)?;
            records += 1;
        }
        Ok(records)
    }

    pub fn read_quads<R: Read>(reader: R, default_confidence: f64) -> Result<Self> {
        let mut kg = KnowledgeGraph::new();
        kg.extend_from_reader(reader, default_confidence)?;
        Ok(kg)
    }

    pub fn extend_from_path(&mut self, path: impl AsRef<Path>, default_confidence: f64) -> Result<usize> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        self.extend_from_reader(file, default_confidence)
    }

    /// Writes `subject, relation, object, confidence` records in stored order.
    pub fn write_quads<W: Write>(&self, writer: W) -> Result<()> {
        write_quad_records(self, self.quads.iter().copied(), writer)
    }

    /// Writes records without the confidence column.
    pub fn write_triples<W: Write>(&self, writer: W) -> std::io::Result<()> {
        let mut w = BufWriter::new(writer);
        for q in &self.quads {
            let (s, r, o) = self.triple_labels(&q.triple);
            writeln!(w, "{s}\t{r}\t{o}")?;
        }
        w.flush()
    }

    pub fn save_quads(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_quads(file)
    }

    /// Quads sorted by (subject, relation, object) id.
    pub fn sorted_quads(&self) -> Vec<Quad> {
        let mut quads = self.quads.clone();
        quads.sort_by_key(|q| q.triple);
        quads
    }
}

impl fmt::Display for Triple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<{}, {}, {}>", self.subject.0, self.relation.0, self.object.0)
    }
}

fn parse_confidence(field: &str) -> std::result::Result<f64, String> {
    let value: f64 = field
        .trim()
        .parse()
        .map_err(|_| format!("confidence `{field}` is not a number"))?;
    if !(0.0..=1.0).contains(&value) {
        return Err(format!("confidence {value} outside [0, 1]"));
    }
    Ok(value)
}

/// Writes quads (labels resolved through `kg`) in the order given.
pub fn write_quad_records<W: Write>(
    kg: &KnowledgeGraph,
    quads: impl IntoIterator<Item = Quad>,
    writer: W,
) -> Result<()> {
    let mut w = BufWriter::new(writer);
    let io = |e| Error::io("<quad writer>", e);
    for q in quads {
        let (s, r, o) = kg.triple_labels(&q.triple);
        writeln!(w, "{s}\t{r}\t{o}\t{}", q.confidence).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Loads a triple or quad file; three-field lines receive `default_confidence`.
pub fn load_quads(path: impl AsRef<Path>, default_confidence: f64) -> Result<KnowledgeGraph> {
    let mut kg = KnowledgeGraph::new();
    kg.extend_from_path(path, default_confidence)?;
    Ok(kg)
}

/// Loads a quad file on top of an existing vocabulary so ids stay comparable across files.
pub fn load_quads_with_vocab(
    path: impl AsRef<Path>,
    default_confidence: f64,
    vocab_source: &KnowledgeGraph,
) -> Result<KnowledgeGraph> {
    let mut kg = vocab_source.empty_like();
    kg.extend_from_path(path, default_confidence)?;
    Ok(kg)
}

/// Train / validation / test partition of a graph's quads. All three share the source vocabulary.
#[derive(Clone, Debug)]
pub struct DatasetSplit {
    pub train: KnowledgeGraph,
    pub validation: KnowledgeGraph,
    pub test: KnowledgeGraph,
}

/// Deterministic shuffled split. Train receives `floor(n * train)`, validation
/// `floor(n * valid)`, test `floor(n * test)`; leftover quads go to validation
/// then test, alternating.
pub fn split(kg: &KnowledgeGraph, fractions: (f64, f64, f64), seed: u64) -> Result<DatasetSplit> {
    let (ft, fv, fs) = fractions;
    if [ft, fv, fs].iter().any(|f| !f.is_finite() || *f <= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "split fractions must be positive, got {fractions:?}"
        )));
    }
    if (ft + fv + fs - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split fractions must sum to 1, got {}",
            ft + fv + fs
        )));
    }
    let mut quads = kg.sorted_quads();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    quads.shuffle(&mut rng);

    let n = quads.len();
    let mut n_train = (n as f64 * ft).floor() as usize;
    let mut n_valid = (n as f64 * fv).floor() as usize;
    let mut n_test = (n as f64 * fs).floor() as usize;
    n_train = n_train.min(n);
    n_valid = n_valid.min(n - n_train);
    n_test = n_test.min(n - n_train - n_valid);
    let mut leftover = n - n_train - n_valid - n_test;
    let mut to_valid = true;
    while leftover > 0 {
        if to_valid {
            n_valid += 1;
        } else {
            n_test += 1;
        }
        to_valid = !to_valid;
        leftover -= 1;
    }
    debug_assert_eq!(n_train + n_valid + n_test, n);

    let mut out = DatasetSplit {
        train: kg.empty_like(),
        validation: kg.empty_like(),
        test: kg.empty_like(),
    };
    for (i, q) in quads.into_iter().enumerate() {
        let target = if i < n_train {
            &mut out.train
        } else if i < n_train + n_valid {
            &mut out.validation
        } else {
            &mut out.test
        };
        target.insert(q);
    }
    Ok(out)
}
