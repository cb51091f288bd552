//! Distant supervision: entity matching over a corpus, context sets for
//! co-occurring entity pairs, and bag labeling from a training KB.

pub mod gazetteer;
pub mod text;

use std::collections::{BTreeSet, HashMap, HashSet};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Deserialize;

pub use gazetteer::{EntityLinker, Gazetteer, Mention};

use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph, RelationId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

/// A sentence window containing two entity mentions, `span1` strictly before `span2`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Context {
    pub doc_id: String,
    pub tokens: Vec<String>,
    pub span1: Span,
    pub span2: Span,
    pub e1: EntityId,
    pub e2: EntityId,
}

impl Context {
    pub fn is_valid(&self) -> bool {
        self.span1.start < self.span1.end
            && self.span1.end <= self.span2.start
            && self.span2.start < self.span2.end
            && self.span2.end <= self.tokens.len()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Document {
    pub id: String,
    pub text: String,
}

/// Corpus parse result; unreadable lines are counted, not fatal.
#[derive(Clone, Debug, Default)]
pub struct Corpus {
    pub documents: Vec<Document>,
    pub skipped: usize,
}

#[derive(Deserialize)]
struct JsonDocument {
    id: String,
    text: String,
}

/// Reads JSON lines (`{"id": ..., "text": ...}`) or plain text with one
/// document per line (id = 1-based line number). Lines starting with `{`
/// are parsed as JSON.
pub fn read_corpus<R: Read>(reader: R) -> Result<Corpus> {
    let mut corpus = Corpus::default();
    let mut reader = BufReader::new(reader);
    let mut buf = Vec::new();
    let mut lineno = 0;
    loop {
        buf.clear();
        let n = reader
            .read_until(b'\n', &mut buf)
            .map_err(|e| Error::io("<corpus>", e))?;
        if n == 0 {
            break;
        }
        lineno += 1;
        let Ok(line) = std::str::from_utf8(&buf) else {
            warn!("corpus line {lineno}: invalid UTF-8, skipped");
            corpus.skipped += 1;
            continue;
        };
        let line = line.trim_end_matches(['\n', '\r']);
        if line.trim().is_empty() {
            continue;
        }
        if line.trim_start().starts_with('{') {
            match serde_json::from_str::<JsonDocument>(line) {
                Ok(doc) => corpus.documents.push(Document {
                    id: sanitize_id(&doc.id),
                    text: doc.text,
                }),
                Err(e) => {
                    warn!("corpus line {lineno}: {e}, skipped");
                    corpus.skipped += 1;
                }
            }
        } else {
            corpus.documents.push(Document {
                id: lineno.to_string(),
                text: line.to_owned(),
            });
        }
    }
    Ok(corpus)
}

/// Writes documents as JSON lines readable by [`read_corpus`].
pub fn write_corpus<W: Write>(documents: &[Document], writer: W) -> Result<()> {
    let mut w = BufWriter::new(writer);
    let io = |e| Error::io("<corpus>", e);
    for d in documents {
        let line = serde_json::json!({ "id": d.id, "text": d.text });
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)
}

fn sanitize_id(id: &str) -> String {
    id.replace(['\t', '\n', '\r'], " ")
}

/// Context sets keyed by entity pair.
///
/// A pair's key is oriented by the textual order of the pair's first
/// occurrence in the corpus; contexts seen later in the other order are
/// filed under the same key. Lookups are order-insensitive.
#[derive(Clone, Debug, Default)]
pub struct ContextIndex {
    contexts: Vec<Context>,
    pairs: Vec<(EntityId, EntityId)>,
    by_pair: HashMap<(EntityId, EntityId), Vec<usize>>,
    by_entity: HashMap<EntityId, Vec<usize>>,
}

impl ContextIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, context: Context) {
        let idx = self.contexts.len();
        let (a, b) = (context.e1, context.e2);
        let key = if self.by_pair.contains_key(&(b, a)) {
            (b, a)
        } else {
            (a, b)
        };
        let slot = self.by_pair.entry(key).or_default();
        if slot.is_empty() {
            self.pairs.push(key);
        }
        slot.push(idx);
        self.by_entity.entry(a).or_default().push(idx);
        if b != a {
            self.by_entity.entry(b).or_default().push(idx);
        }
        self.contexts.push(context);
    }

    pub fn len(&self) -> usize {
        self.contexts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contexts.is_empty()
    }

    pub fn contexts(&self) -> &[Context] {
        &self.contexts
    }

    /// Canonical pair keys in first-seen order.
    pub fn pairs(&self) -> &[(EntityId, EntityId)] {
        &self.pairs
    }

    /// The canonical key for an unordered pair, if it co-occurs.
    pub fn canonical(&self, a: EntityId, b: EntityId) -> Option<(EntityId, EntityId)> {
        if self.by_pair.contains_key(&(a, b)) {
            Some((a, b))
        } else if self.by_pair.contains_key(&(b, a)) {
            Some((b, a))
        } else {
            None
        }
    }

    /// All contexts mentioning both entities, in either order.
    pub fn contexts_for_pair(&self, a: EntityId, b: EntityId) -> Vec<&Context> {
        self.canonical(a, b)
            .map(|key| self.by_pair[&key].iter().map(|&i| &self.contexts[i]).collect())
            .unwrap_or_default()
    }

    pub fn context_ids_for_pair(&self, key: (EntityId, EntityId)) -> &[usize] {
        self.by_pair.get(&key).map_or(&[], Vec::as_slice)
    }

    pub fn contexts_for_entity(&self, e: EntityId) -> Vec<&Context> {
        self.by_entity
            .get(&e)
            .map(|v| v.iter().map(|&i| &self.contexts[i]).collect())
            .unwrap_or_default()
    }

    /// Debug dump: `doc_id, e1, e2, span1, span2, tokens` (spans as `start:end`,
    /// tokens space-joined).
    pub fn write_dump<W: Write>(&self, kg: &KnowledgeGraph, writer: W) -> Result<()> {
        let mut w = BufWriter::new(writer);
        let io = |e| Error::io("<context dump>", e);
        for c in &self.contexts {
            writeln!(
                w,
                "{}\t{}\t{}\t{}:{}\t{}:{}\t{}",
                c.doc_id,
                kg.entity_label(c.e1),
                kg.entity_label(c.e2),
                c.span1.start,
                c.span1.end,
                c.span2.start,
                c.span2.end,
                c.tokens.join(" ")
            )
            .map_err(io)?;
        }
        w.flush().map_err(io)
    }

    /// Inverse of [`ContextIndex::write_dump`]; entity labels resolve through `kg`.
    pub fn read_dump<R: Read>(kg: &KnowledgeGraph, reader: R) -> Result<Self> {
        let mut index = ContextIndex::new();
        for (n, line) in BufReader::new(reader).lines().enumerate() {
            let lineno = n + 1;
            let line = line.map_err(|e| Error::parse(lineno, e.to_string()))?;
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 6 {
                return Err(Error::parse(lineno, format!("expected 6 fields, found {}", f.len())));
            }
            let entity = |label: &str| {
                kg.entity_id(label)
                    .ok_or_else(|| Error::parse(lineno, format!("unknown entity `{label}`")))
            };
            let span = |s: &str| -> Result<Span> {
                let (a, b) = s
                    .split_once(':')
                    .ok_or_else(|| Error::parse(lineno, format!("bad span `{s}`")))?;
                let parse = |x: &str| {
                    x.parse::<usize>()
                        .map_err(|_| Error::parse(lineno, format!("bad span `{s}`")))
                };
                Ok(Span::new(parse(a)?, parse(b)?))
            };
            let context = Context {
                doc_id: f[0].to_owned(),
                e1: entity(f[1])?,
                e2: entity(f[2])?,
                span1: span(f[3])?,
                span2: span(f[4])?,
                tokens: f[5].split(' ').filter(|t| !t.is_empty()).map(str::to_owned).collect(),
            };
            if !context.is_valid() {
                return Err(Error::parse(lineno, "spans out of order or out of bounds"));
            }
            index.insert(context);
        }
        Ok(index)
    }
}

/// Per-sentence contexts: for every unordered pair of distinct entities
/// mentioned, one context built from their first mentions.
pub fn sentence_contexts(
    doc_id: &str,
    tokens: &[String],
    mentions: &[Mention],
    window: usize,
) -> Vec<Context> {
    let mut firsts: Vec<Mention> = Vec::new();
    let mut seen = HashSet::new();
    for m in mentions {
        if seen.insert(m.entity) {
            firsts.push(*m);
        }
    }
    let mut out = Vec::new();
    for i in 0..firsts.len() {
        for j in i + 1..firsts.len() {
            let (m1, m2) = (firsts[i], firsts[j]);
            let lo = m1.start.saturating_sub(window);
            let hi = (m2.end + window).min(tokens.len());
            out.push(Context {
                doc_id: doc_id.to_owned(),
                tokens: tokens[lo..hi].to_vec(),
                span1: Span::new(m1.start - lo, m1.end - lo),
                span2: Span::new(m2.start - lo, m2.end - lo),
                e1: m1.entity,
                e2: m2.entity,
            });
        }
    }
    out
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct IndexStats {
    pub documents: usize,
    pub sentences: usize,
    pub skipped: usize,
}

/// Links entities in every sentence and collects pair contexts. `window` is
/// the number of tokens kept before the first and after the second mention.
/// Documents are processed in parallel and merged in input order.
pub fn build_context_index(
    corpus: &Corpus,
    linker: &dyn EntityLinker,
    window: usize,
) -> Result<(ContextIndex, IndexStats)> {
    if window == 0 {
        return Err(Error::InvalidArgument("context window must be >= 1".into()));
    }
    let per_doc: Vec<(usize, Vec<Context>)> = corpus
        .documents
        .par_iter()
        .map(|doc| {
            let mut contexts = Vec::new();
            let sents = text::sentences(&doc.text);
            for sentence in &sents {
                let tokens = text::tokenize(sentence);
                let mentions = linker.link(&tokens);
                contexts.extend(sentence_contexts(&doc.id, &tokens, &mentions, window));
            }
            (sents.len(), contexts)
        })
        .collect();

    let mut index = ContextIndex::new();
    let mut stats = IndexStats {
        documents: corpus.documents.len(),
        skipped: corpus.skipped,
        ..IndexStats::default()
    };
    for (n_sentences, contexts) in per_doc {
        stats.sentences += n_sentences;
        for c in contexts {
            index.insert(c);
        }
    }
    Ok((index, stats))
}

/// Entity-pair bag with its distant labels; empty `positive_relations` is an NA bag.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledBag {
    pub pair: (EntityId, EntityId),
    pub contexts: Vec<Context>,
    pub positive_relations: BTreeSet<RelationId>,
}

impl LabeledBag {
    pub fn is_na(&self) -> bool {
        self.positive_relations.is_empty()
    }
}

/// Distant labeling. Pairs related (subject → object, in key order) in
/// `kg_train` become positive bags carrying all their relations. Pairs with
/// no relation in either direction are NA candidates, of which
/// `round(na_ratio * positives)` are sampled. Pairs related only in the
/// reverse direction are left out.
pub fn label_bags(
    index: &ContextIndex,
    kg_train: &KnowledgeGraph,
    na_ratio: f64,
    seed: u64,
) -> Result<Vec<LabeledBag>> {
    if !na_ratio.is_finite() || na_ratio < 0.0 {
        return Err(Error::InvalidArgument(format!("na_ratio must be >= 0, got {na_ratio}")));
    }
    let mut positives = Vec::new();
    let mut unrelated = Vec::new();
    for (pos, &(a, b)) in index.pairs().iter().enumerate() {
        let rels: BTreeSet<RelationId> = kg_train.by_pair(a, b).map(|q| q.triple.relation).collect();
        if !rels.is_empty() {
            positives.push((pos, rels));
        } else if kg_train.by_pair(b, a).next().is_none() {
            unrelated.push(pos);
        }
    }
    let n_na = ((na_ratio * positives.len() as f64).round() as usize).min(unrelated.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    unrelated.shuffle(&mut rng);
    let mut chosen_na: Vec<usize> = unrelated.into_iter().take(n_na).collect();
    chosen_na.sort_unstable();

    let mut bags: Vec<(usize, BTreeSet<RelationId>)> = positives;
    bags.extend(chosen_na.into_iter().map(|p| (p, BTreeSet::new())));
    bags.sort_by_key(|(p, _)| *p);

    Ok(bags
        .into_iter()
        .map(|(pos, rels)| {
            let key = index.pairs()[pos];
            LabeledBag {
                pair: key,
                contexts: index
                    .context_ids_for_pair(key)
                    .iter()
                    .map(|&i| index.contexts()[i].clone())
                    .collect(),
                positive_relations: rels,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kb(lines: &str) -> KnowledgeGraph {
        KnowledgeGraph::read_quads(lines.as_bytes(), 1.0).unwrap()
    }

    fn corpus(docs: &[&str]) -> Corpus {
        Corpus {
            documents: docs
                .iter()
                .enumerate()
                .map(|(i, t)| Document {
                    id: format!("d{i}"),
                    text: t.to_string(),
                })
                .collect(),
            skipped: 0,
        }
    }

    fn index_for(kg: &KnowledgeGraph, docs: &[&str]) -> ContextIndex {
        let g = Gazetteer::build(kg).unwrap();
        build_context_index(&corpus(docs), &g, 10).unwrap().0
    }

    #[test]
    fn one_pair_one_context() {
        let kg = kb("Alice\tknows\tBob\n");
        let idx = index_for(&kg, &["Alice met Bob yesterday."]);
        let (a, b) = (kg.entity_id("Alice").unwrap(), kg.entity_id("Bob").unwrap());
        assert_eq!(idx.contexts_for_pair(a, b).len(), 1);
        assert_eq!(idx.contexts_for_pair(b, a).len(), 1);
    }

    #[test]
    fn three_mentions_three_contexts() {
        let kg = kb("A\tr\tB\nB\tr\tC\n");
        let idx = index_for(&kg, &["A and B and C."]);
        assert_eq!(idx.len(), 3);
        assert_eq!(idx.pairs().len(), 3);
    }

    #[test]
    fn contexts_accumulate_across_sentences() {
        let kg = kb("A\tr\tB\n");
        let idx = index_for(&kg, &["A saw B. Later B saw A."]);
        let (a, b) = (kg.entity_id("A").unwrap(), kg.entity_id("B").unwrap());
        assert_eq!(idx.contexts_for_pair(a, b).len(), 2);
        assert_eq!(idx.pairs(), &[(a, b)]);
        assert_eq!(idx.contexts_for_entity(a).len(), 2);
    }

    #[test]
    fn repeated_entity_counts_once() {
        let kg = kb("A\tr\tB\n");
        let idx = index_for(&kg, &["A and A and B."]);
        assert_eq!(idx.len(), 1);
    }

    #[test]
    fn window_truncates_context() {
        let kg = kb("A\tr\tB\n");
        let g = Gazetteer::build(&kg).unwrap();
        let (idx, _) =
            build_context_index(&corpus(&["w1 w2 w3 A x y B z1 z2 z3"]), &g, 1).unwrap();
        let c = &idx.contexts()[0];
        assert_eq!(c.tokens, vec!["w3", "A", "x", "y", "B", "z1"]);
        assert_eq!(c.span1, Span::new(1, 2));
        assert_eq!(c.span2, Span::new(4, 5));
        assert!(c.is_valid());
    }

    #[test]
    fn zero_window_rejected() {
        let kg = kb("A\tr\tB\n");
        let g = Gazetteer::build(&kg).unwrap();
        assert!(build_context_index(&corpus(&["A B"]), &g, 0).is_err());
    }

    #[test]
    fn corpus_reader_handles_json_plain_and_garbage() {
        let text = b"{\"id\": \"x1\", \"text\": \"A saw B.\"}\nplain line\n{bad json\n\xff\xfe\n";
        let c = read_corpus(&text[..]).unwrap();
        assert_eq!(c.documents.len(), 2);
        assert_eq!(c.documents[0].id, "x1");
        assert_eq!(c.documents[1].id, "2");
        assert_eq!(c.skipped, 2);
    }

    #[test]
    fn dump_roundtrip() {
        let kg = kb("New York\tr\tB\n");
        let idx = index_for(&kg, &["In New York , B rules. B left New York!"]);
        let mut buf = Vec::new();
        idx.write_dump(&kg, &mut buf).unwrap();
        let back = ContextIndex::read_dump(&kg, &buf[..]).unwrap();
        assert_eq!(back.contexts(), idx.contexts());
        assert_eq!(back.pairs(), idx.pairs());
    }

    #[test]
    fn multi_relation_bag() {
        let kg = kb("A\tr1\tB\nA\tr2\tB\n");
        let idx = index_for(&kg, &["A with B."]);
        let bags = label_bags(&idx, &kg, 1.0, 0).unwrap();
        assert_eq!(bags.len(), 1);
        let names: Vec<&str> = bags[0]
            .positive_relations
            .iter()
            .map(|&r| kg.relation_label(r))
            .collect();
        assert_eq!(names, vec!["r1", "r2"]);
    }

    #[test]
    fn na_excluded_at_zero_ratio() {
        let kg = kb("A\tr\tB\nC\tr\tD\n");
        let idx = index_for(&kg, &["A with C."]);
        assert!(label_bags(&idx, &kg, 0.0, 0).unwrap().is_empty());
    }

    #[test]
    fn na_ratio_arithmetic() {
        // 10 related pairs (pi, qi) and 50 unrelated pairs (ui, vi).
        let mut lines = String::new();
        let mut docs = Vec::new();
        for i in 0..10 {
            lines.push_str(&format!("p{i}\tr\tq{i}\n"));
            docs.push(format!("p{i} near q{i}."));
        }
        for i in 0..50 {
            lines.push_str(&format!("u{i}\tr\tx{i}\nv{i}\tr\ty{i}\n"));
            docs.push(format!("u{i} near v{i}."));
        }
        let kg = kb(&lines);
        let doc_refs: Vec<&str> = docs.iter().map(String::as_str).collect();
        let idx = index_for(&kg, &doc_refs);
        let bags = label_bags(&idx, &kg, 1.0, 11).unwrap();
        let na = bags.iter().filter(|b| b.is_na()).count();
        assert_eq!(bags.len() - na, 10);
        assert_eq!(na, 10);
        let again = label_bags(&idx, &kg, 1.0, 11).unwrap();
        assert_eq!(bags, again);
    }

    #[test]
    fn reverse_only_pair_is_not_na() {
        let kg = kb("B\tr\tA\n");
        let idx = index_for(&kg, &["A then B."]);
        assert!(label_bags(&idx, &kg, 10.0, 0).unwrap().is_empty());
    }
}
