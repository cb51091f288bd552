//! Synthetic benchmark: a typed world with compositional relations, a
//! templated corpus that states world facts and injected false facts, and the
//! files needed to run and score the pipeline end to end.
//!
//! Every entity has a latent type and a latent community. Each relation has a
//! domain and a range type. The lower half of the relations chain the types,
//! and each upper relation is the composition of two lower ones, both in its
//! signature and at the fact level. Objects mostly share the subject's
//! community. Popularity is Zipf-distributed, so connectivity is heavy-tailed.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::path::{Path, PathBuf};

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph, Quad, RelationId, Triple};
use crate::supervision::{write_corpus, Document};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub entities: usize,
    pub relations: usize,
    /// Fraction of fact-stating sentences that state a false fact.
    pub noise: f64,
    pub seed: u64,
    /// Sampled base facts per entity before composition and deduplication.
    pub facts_per_entity: f64,
    /// Fraction of world facts released in the KB file.
    pub kb_fraction: f64,
    /// Probability that a world fact is stated in the corpus at all.
    pub mention_rate: f64,
    /// Probability that a statement uses the template shared with the sibling relation.
    pub ambiguity: f64,
    /// Fraction of false facts whose object has the right type.
    pub hard_noise: f64,
    /// Co-occurrence-only sentences per fact-stating sentence.
    pub distractor_rate: f64,
    pub zipf_exponent: f64,
    pub sentences_per_document: usize,
    pub communities: usize,
    /// Probability that a base fact's object shares the subject's community.
    pub homophily: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            entities: 300,
            relations: 8,
            noise: 0.3,
            seed: 1,
            facts_per_entity: 5.0,
            kb_fraction: 0.9,
            mention_rate: 0.85,
            ambiguity: 0.3,
            hard_noise: 0.25,
            distractor_rate: 0.5,
            zipf_exponent: 0.9,
            sentences_per_document: 5,
            communities: 6,
            homophily: 0.85,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64, hi_open: bool| {
            let ok = v >= 0.0 && if hi_open { v < 1.0 } else { v <= 1.0 };
            if ok {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{name} = {v} out of range")))
            }
        };
        if self.entities < 10 {
            return Err(Error::InvalidArgument("synth needs at least 10 entities".into()));
        }
        if self.relations == 0 {
            return Err(Error::InvalidArgument("synth needs at least one relation".into()));
        }
        if self.sentences_per_document == 0 {
            return Err(Error::InvalidArgument("sentences_per_document must be positive".into()));
        }
        unit("noise", self.noise, true)?;
        unit("kb_fraction", self.kb_fraction, false)?;
        unit("mention_rate", self.mention_rate, false)?;
        unit("ambiguity", self.ambiguity, false)?;
        unit("hard_noise", self.hard_noise, false)?;
        unit("homophily", self.homophily, false)?;
        if self.communities == 0 {
            return Err(Error::InvalidArgument("communities must be positive".into()));
        }
        if !(self.facts_per_entity > 0.0 && self.distractor_rate >= 0.0 && self.zipf_exponent >= 0.0) {
            return Err(Error::InvalidArgument("rates must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SynthDataset {
    /// Released KB: a sample of the world facts.
    pub kb: KnowledgeGraph,
    /// Every world fact.
    pub truth: KnowledgeGraph,
    /// False facts stated in the corpus.
    pub negatives: KnowledgeGraph,
    pub documents: Vec<Document>,
    /// Latent type of every entity; each relation has one domain and one range type.
    pub types: Vec<usize>,
    /// Latent community of every entity; objects mostly share the subject's community.
    pub communities: Vec<usize>,
    pub stats: SynthStats,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct SynthStats {
    pub world_facts: usize,
    pub kb_facts: usize,
    pub false_facts: usize,
    pub fact_sentences: usize,
    pub false_sentences: usize,
    pub distractor_sentences: usize,
    pub documents: usize,
}

#[derive(Clone, Debug)]
pub struct SynthFiles {
    pub kb: PathBuf,
    pub truth: PathBuf,
    pub corpus: PathBuf,
    pub negatives: PathBuf,
}

impl SynthDataset {
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<SynthFiles> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let files = SynthFiles {
            kb: dir.join("kb.tsv"),
            truth: dir.join("truth.tsv"),
            corpus: dir.join("corpus.jsonl"),
            negatives: dir.join("negatives.tsv"),
        };
        for (kg, path) in [
            (&self.kb, &files.kb),
            (&self.truth, &files.truth),
            (&self.negatives, &files.negatives),
        ] {
            let f = File::create(path).map_err(|e| Error::io(path, e))?;
            kg.write_triples(f).map_err(|e| Error::io(path, e))?;
        }
        let f = File::create(&files.corpus).map_err(|e| Error::io(&files.corpus, e))?;
        write_corpus(&self.documents, f)?;
        Ok(files)
    }
}

const ENTITY_SYLLABLES: [&str; 24] = [
    "ka", "lo", "mir", "ta", "ven", "dor", "sa", "ri", "bel", "no", "gu", "zan", "pe", "lin", "ox", "ra", "mu", "tes",
    "vi", "hal", "or", "en", "qua", "dri",
];
const VERB_SYLLABLES: [&str; 12] = ["plo", "vra", "skir", "mek", "flen", "tru", "gax", "bri", "zol", "prem", "kwi", "strom"];
const PREFIXES: [&str; 6] = ["", "", "reportedly ,", "in a statement ,", "last year ,", "sources say"];
const SUFFIXES: [&str; 5] = [".", ".", "for years .", "according to the archive .", "once again ."];
const MIDDLES: [&str; 4] = ["{kw}", "{kw} the", "was said to {kw}", "has long {kw}"];
const DISTRACTORS: [&str; 4] = [
    "and {o} appeared at the same event .",
    "was photographed near {o} .",
    "and {o} were both listed in the report .",
    "shared a table with {o} at the dinner .",
];

fn pseudo_word(rng: &mut ChaCha8Rng, syllables: &[&str], parts: usize) -> String {
    (0..parts).map(|_| *syllables.choose(rng).expect("non-empty")).collect()
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    c.next()
        .map(|f| f.to_uppercase().chain(c).collect())
        .unwrap_or_default()
}

fn reserved_words() -> HashSet<String> {
    PREFIXES
        .iter()
        .chain(&SUFFIXES)
        .chain(&MIDDLES)
        .chain(&DISTRACTORS)
        .flat_map(|t| t.split_whitespace())
        .map(str::to_owned)
        .collect()
}

/// Popularity-weighted sampling, globally or within a group of entities.
struct Sampler {
    global: WeightedIndex<f64>,
    groups: BTreeMap<usize, (Vec<usize>, WeightedIndex<f64>)>,
}

impl Sampler {
    fn new(weights: &[f64], group_of: &[usize]) -> Self {
        let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, &g) in group_of.iter().enumerate() {
            members.entry(g).or_default().push(i);
        }
        let groups = members
            .into_iter()
            .map(|(g, m)| {
                let w: Vec<f64> = m.iter().map(|&i| weights[i]).collect();
                (g, (m, WeightedIndex::new(w).expect("positive weights")))
            })
            .collect();
        Self {
            global: WeightedIndex::new(weights).expect("positive weights"),
            groups,
        }
    }

    fn any(&self, rng: &mut ChaCha8Rng) -> usize {
        self.global.sample(rng)
    }

    fn has(&self, g: usize) -> bool {
        self.groups.contains_key(&g)
    }

    fn sample(&self, g: usize, rng: &mut ChaCha8Rng) -> usize {
        let (members, dist) = &self.groups[&g];
        members[dist.sample(rng)]
    }
}

/// Generates the benchmark; identical configs give identical datasets.
pub fn generate(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.entities;
    let num_rel = cfg.relations;

    let reserved = reserved_words();
    let mut used: HashSet<String> = HashSet::new();
    let mut names = Vec::with_capacity(n);
    while names.len() < n {
        let first = pseudo_word(&mut rng, &ENTITY_SYLLABLES, 2);
        let parts = 2 + rng.gen_range(0..2);
        let last = pseudo_word(&mut rng, &ENTITY_SYLLABLES, parts);
        let name = format!("{} {}", capitalize(&first), capitalize(&last));
        if first == last || reserved.contains(&first) || reserved.contains(&last) || !used.insert(name.clone()) {
            continue;
        }
        names.push(name);
    }
    let entity_words: HashSet<String> = names
        .iter()
        .flat_map(|s| s.split_whitespace())
        .map(|w| w.to_lowercase())
        .collect();
    let mut verbs: Vec<String> = Vec::new();
    while verbs.len() < num_rel + num_rel.div_ceil(2) {
        let v = pseudo_word(&mut rng, &VERB_SYLLABLES, 2) + "s";
        if !reserved.contains(&v) && !entity_words.contains(&v) && !verbs.contains(&v) {
            verbs.push(v);
        }
    }
    let keyword = |r: usize| &verbs[r];
    let shared_keyword = |r: usize| &verbs[num_rel + r / 2];

    let mut world = KnowledgeGraph::new();
    for name in &names {
        world.intern_entity(name);
    }
    for r in 0..num_rel {
        world.intern_relation(&format!("rel{r}"));
    }

    // Base relations chain the types; composed relations skip one type.
    let num_base = num_rel.div_ceil(2);
    let num_types = num_base;
    let mut types: Vec<usize> = (0..n).map(|i| i % num_types).collect();
    types.shuffle(&mut rng);
    let communities: Vec<usize> = (0..n).map(|_| rng.gen_range(0..cfg.communities)).collect();
    let mut rank: Vec<usize> = (0..n).collect();
    rank.shuffle(&mut rng);
    let weights: Vec<f64> = rank.iter().map(|&r| 1.0 / ((r + 1) as f64).powf(cfg.zipf_exponent)).collect();
    let by_type = Sampler::new(&weights, &types);
    let group: Vec<usize> = (0..n).map(|i| types[i] * cfg.communities + communities[i]).collect();
    let by_group = Sampler::new(&weights, &group);

    let mut signature: Vec<(usize, usize)> = Vec::with_capacity(num_rel);
    let mut composed_of: Vec<Option<(usize, usize)>> = Vec::with_capacity(num_rel);
    for r in 0..num_rel {
        if r < num_base {
            signature.push((r, (r + 1) % num_types));
            composed_of.push(None);
        } else {
            let a = (r - num_base) % num_base;
            let b = (a + 1) % num_base;
            signature.push((signature[a].0, signature[b].1));
            composed_of.push(Some((a, b)));
        }
    }
    let object_for = |s: usize, range: usize, rng: &mut ChaCha8Rng| {
        let g = range * cfg.communities + communities[s];
        if rng.gen_bool(cfg.homophily) && by_group.has(g) {
            by_group.sample(g, rng)
        } else {
            by_type.sample(range, rng)
        }
    };

    let mut facts: Vec<Triple> = Vec::new();
    let mut fact_set: HashSet<Triple> = HashSet::new();
    let mut add = |t: Triple, facts: &mut Vec<Triple>| {
        if t.subject != t.object && fact_set.insert(t) {
            facts.push(t);
        }
    };
    let base_draws = (cfg.facts_per_entity * n as f64).round() as usize;
    for _ in 0..base_draws {
        let r = rng.gen_range(0..num_base);
        let (domain, range) = signature[r];
        let s = by_type.sample(domain, &mut rng);
        let o = object_for(s, range, &mut rng);
        add(triple(s, r, o), &mut facts);
    }
    let base_facts = facts.clone();
    let mut out_edges: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for t in &base_facts {
        out_edges
            .entry((t.subject.index(), t.relation.index()))
            .or_default()
            .push(t.object.index());
    }
    for (r, comp) in composed_of.iter().enumerate() {
        let Some((a, b)) = *comp else { continue };
        for (&(x, ra), mids) in &out_edges {
            if ra != a {
                continue;
            }
            let ends: Vec<usize> = mids
                .iter()
                .filter_map(|&y| out_edges.get(&(y, b)))
                .flatten()
                .copied()
                .collect();
            if let Some(&z) = ends.choose(&mut rng) {
                if rng.gen_bool(0.7) {
                    add(triple(x, r, z), &mut facts);
                }
            }
        }
    }

    let mut truth = world.empty_like();
    let mut kb = world.empty_like();
    for &t in &facts {
        truth.insert(Quad { triple: t, confidence: 1.0 });
        if rng.gen_bool(cfg.kb_fraction) {
            kb.insert(Quad { triple: t, confidence: 1.0 });
        }
    }

    let mentions = |rng: &mut ChaCha8Rng| 1 + (0..3).take_while(|_| rng.gen_bool(0.5)).count();
    let mut statements: Vec<Triple> = Vec::new();
    for &t in &facts {
        if rng.gen_bool(cfg.mention_rate) {
            statements.extend(std::iter::repeat_n(t, mentions(&mut rng)));
        }
    }
    let fact_sentences = statements.len();
    let target_false = (cfg.noise / (1.0 - cfg.noise) * fact_sentences as f64).round() as usize;
    let mut negatives = world.empty_like();
    let mut false_sentences = 0;
    let mut attempts = 0;
    while false_sentences < target_false && attempts < 100 * (target_false + 1) {
        attempts += 1;
        let r = rng.gen_range(0..num_rel);
        let (s, o) = if rng.gen_bool(cfg.hard_noise) {
            // Well-typed but outside the subject's community.
            let (domain, range) = signature[r];
            let s = by_type.sample(domain, &mut rng);
            let o = by_type.sample(range, &mut rng);
            if communities[o] == communities[s] {
                continue;
            }
            (s, o)
        } else {
            (by_type.any(&mut rng), by_type.any(&mut rng))
        };
        let t = triple(s, r, o);
        if s == o || fact_set.contains(&t) || negatives.contains(&t) {
            continue;
        }
        negatives.insert(Quad { triple: t, confidence: 1.0 });
        let m = mentions(&mut rng).min(target_false - false_sentences);
        statements.extend(std::iter::repeat_n(t, m));
        false_sentences += m;
    }

    let related: HashSet<(usize, usize)> = facts
        .iter()
        .chain(negatives.quads().iter().map(|q| &q.triple))
        .flat_map(|t| {
            let (s, o) = (t.subject.index(), t.object.index());
            [(s, o), (o, s)]
        })
        .collect();
    let mut sentences: Vec<String> = Vec::with_capacity(statements.len() * 2);
    for t in &statements {
        let r = t.relation.index();
        let kw = if num_rel > 1 && (r ^ 1) < num_rel && rng.gen_bool(cfg.ambiguity) {
            shared_keyword(r)
        } else {
            keyword(r)
        };
        let middle = MIDDLES.choose(&mut rng).expect("non-empty").replace("{kw}", kw);
        let prefix = PREFIXES.choose(&mut rng).expect("non-empty");
        let suffix = SUFFIXES.choose(&mut rng).expect("non-empty");
        let s = &names[t.subject.index()];
        let o = &names[t.object.index()];
        let mut sentence = String::new();
        if !prefix.is_empty() {
            sentence.push_str(prefix);
            sentence.push(' ');
        }
        sentence.push_str(&format!("{s} {middle} {o} {suffix}"));
        sentences.push(sentence);
    }
    let target_distractors = (cfg.distractor_rate * statements.len() as f64).round() as usize;
    let mut distractor_sentences = 0;
    attempts = 0;
    while distractor_sentences < target_distractors && attempts < 100 * (target_distractors + 1) {
        attempts += 1;
        let s = by_type.any(&mut rng);
        let o = by_type.any(&mut rng);
        if s == o || related.contains(&(s, o)) {
            continue;
        }
        let body = DISTRACTORS.choose(&mut rng).expect("non-empty").replace("{o}", &names[o]);
        sentences.push(format!("{} {body}", names[s]));
        distractor_sentences += 1;
    }
    sentences.shuffle(&mut rng);

    let documents: Vec<Document> = sentences
        .chunks(cfg.sentences_per_document)
        .enumerate()
        .map(|(i, chunk)| Document {
            id: format!("doc{i:05}"),
            text: chunk.join(" "),
        })
        .collect();

    let stats = SynthStats {
        world_facts: truth.len(),
        kb_facts: kb.len(),
        false_facts: negatives.len(),
        fact_sentences,
        false_sentences,
        distractor_sentences,
        documents: documents.len(),
    };
    Ok(SynthDataset {
        kb,
        truth,
        negatives,
        documents,
        types,
        communities,
        stats,
    })
}

fn triple(s: usize, r: usize, o: usize) -> Triple {
    Triple::new(EntityId(s as u32), RelationId(r as u32), EntityId(o as u32))
}
