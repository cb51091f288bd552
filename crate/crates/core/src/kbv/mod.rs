//! Knowledge base validation with a ProjE-style softmax network trained on
//! confidence-weighted targets.
//!
//! For a query `(e, r)` the combination layer is
//! `h = tanh(D_e * emb(e) + D_r * emb(r) + b_c)` (element-wise), and each
//! candidate `c` gets logit `emb(c) . h + b_p[c]`; a softmax over the
//! candidate set gives the prediction vector `v`. The loss against the target
//! vector `s` (each entry the confidence of the corresponding training quad,
//! zero when absent) is `-sum_i s_i ln v_i`, averaged over query instances.
//!
//! Each relation has a forward and an inverse embedding row so a triple can be
//! queried from either argument.

mod io;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kg::{EntityId, Quad, RelationId, Triple};
use crate::math::{dot, softmax};

/// Floor applied inside the logarithm of the loss.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct KbvConfig {
    pub dim: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub negatives: usize,
    pub min_count: usize,
    pub seed: u64,
    /// Train on all-ones targets regardless of quad confidence (plain multi-hot cross-entropy).
    pub ignore_confidence: bool,
}

/// Defaults favour a small embedding: with wider embeddings the softmax memorizes
/// training answers and held-out true triples score below corrupted ones.
impl Default for KbvConfig {
    fn default() -> Self {
        Self {
            dim: 4,
            learning_rate: 0.05,
            epochs: 50,
            negatives: 64,
            min_count: 3,
            seed: 0,
            ignore_confidence: false,
        }
    }
}

/// The entity has no embedding (unknown or below the occurrence threshold).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MissingEmbedding {
    pub entity: EntityId,
}

impl fmt::Display for MissingEmbedding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "entity {} has no embedding", self.entity.0)
    }
}

/// Entities kept for embedding, with their training occurrence counts.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingVocab {
    entities: Vec<EntityId>,
    counts: Vec<usize>,
    rows: HashMap<EntityId, usize>,
    pub min_count: usize,
}

impl EmbeddingVocab {
    fn from_parts(entities: Vec<EntityId>, counts: Vec<usize>, min_count: usize) -> Self {
        let rows = entities.iter().enumerate().map(|(i, &e)| (e, i)).collect();
        Self {
            entities,
            counts,
            rows,
            min_count,
        }
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn row(&self, e: EntityId) -> Option<usize> {
        self.rows.get(&e).copied()
    }

    pub fn contains(&self, e: EntityId) -> bool {
        self.rows.contains_key(&e)
    }

    pub fn entities(&self) -> &[EntityId] {
        &self.entities
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }
}

/// Keeps every entity that occurs (as subject or object; a self-loop counts
/// once) in at least `min_count` quads. Rows follow ascending entity id.
pub fn build_vocab(quads: &[Quad], min_count: usize) -> Result<EmbeddingVocab> {
    if min_count == 0 {
        return Err(Error::InvalidArgument("min_count must be >= 1".into()));
    }
    let mut counts: BTreeMap<EntityId, usize> = BTreeMap::new();
    for q in quads {
        let t = q.triple;
        *counts.entry(t.subject).or_default() += 1;
        if t.object != t.subject {
            *counts.entry(t.object).or_default() += 1;
        }
    }
    let (entities, kept): (Vec<EntityId>, Vec<usize>) =
        counts.into_iter().filter(|&(_, c)| c >= min_count).unzip();
    if entities.is_empty() {
        return Err(Error::EmptyVocabulary(format!(
            "no entity occurs in {min_count} or more quads; lower min_count"
        )));
    }
    Ok(EmbeddingVocab::from_parts(entities, kept, min_count))
}

/// A query direction: `(subject, r, ?)` or `(object, r^-1, ?)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    Forward,
    Inverse,
}

/// One training or evaluation query with its candidate set and aligned
/// confidence targets (zero for sampled negatives).
#[derive(Clone, Debug, PartialEq)]
pub struct Query {
    pub entity: EntityId,
    pub relation: RelationId,
    pub direction: Direction,
    pub candidates: Vec<EntityId>,
    pub targets: Vec<f64>,
}

#[derive(Clone, Debug)]
struct RowQuery {
    entity: usize,
    relation: usize,
    candidates: Vec<usize>,
    targets: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KbvModel {
    pub vocab: EmbeddingVocab,
    pub num_relations: usize,
    pub dim: usize,
    /// `|kept E| x d`, row-major.
    pub entity: Vec<f64>,
    /// `2|R| x d`; rows `0..|R|` forward, `|R|..2|R|` inverse.
    pub relation: Vec<f64>,
    pub d_e: Vec<f64>,
    pub d_r: Vec<f64>,
    pub b_c: Vec<f64>,
    /// Per-entity candidate bias.
    pub b_p: Vec<f64>,
    pub config: KbvConfig,
}

/// Gradient of the loss, stored sparsely by embedding row.
#[derive(Clone, Debug, Default)]
pub struct Gradient {
    pub entity: HashMap<usize, Vec<f64>>,
    pub relation: HashMap<usize, Vec<f64>>,
    pub d_e: Vec<f64>,
    pub d_r: Vec<f64>,
    pub b_c: Vec<f64>,
    pub b_p: HashMap<usize, f64>,
}

impl Gradient {
    fn new(dim: usize) -> Self {
        Self {
            d_e: vec![0.0; dim],
            d_r: vec![0.0; dim],
            b_c: vec![0.0; dim],
            ..Self::default()
        }
    }

    /// Dense gradient in [`KbvModel::parameters`] order.
    pub fn to_flat(&self, model: &KbvModel) -> Vec<f64> {
        let d = model.dim;
        let mut out = vec![0.0; model.parameter_count()];
        for (&row, g) in &self.entity {
            out[row * d..(row + 1) * d].copy_from_slice(g);
        }
        let mut off = model.entity.len();
        for (&row, g) in &self.relation {
            out[off + row * d..off + (row + 1) * d].copy_from_slice(g);
        }
        off += model.relation.len();
        for block in [&self.d_e, &self.d_r, &self.b_c] {
            out[off..off + d].copy_from_slice(block);
            off += d;
        }
        for (&row, &g) in &self.b_p {
            out[off + row] = g;
        }
        out
    }
}

fn cross_entropy_terms(v: &[f64], s: &[f64]) -> f64 {
    -s.iter()
        .zip(v)
        .filter(|(&si, _)| si != 0.0)
        .map(|(si, &vi)| si * vi.max(LOG_FLOOR).ln())
        .sum::<f64>()
}

/// Confidence-weighted cross-entropy of one prediction vector: `-sum s_i ln v_i`.
pub fn query_loss(v: &[f64], s: &[f64]) -> f64 {
    assert_eq!(v.len(), s.len(), "prediction and target lengths differ");
    cross_entropy_terms(v, s)
}

impl KbvModel {
    /// Parameters drawn uniformly from `[-6/sqrt(d), 6/sqrt(d)]`; biases start at zero.
    pub fn init(vocab: EmbeddingVocab, num_relations: usize, config: KbvConfig) -> Self {
        let d = config.dim;
        let bound = 6.0 / (d as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut uniform = |n: usize| -> Vec<f64> {
            (0..n).map(|_| rng.gen_range(-bound..=bound)).collect()
        };
        let n = vocab.len();
        let entity = uniform(n * d);
        let relation = uniform(2 * num_relations * d);
        let d_e = uniform(d);
        let d_r = uniform(d);
        Self {
            vocab,
            num_relations,
            dim: d,
            entity,
            relation,
            d_e,
            d_r,
            b_c: vec![0.0; d],
            b_p: vec![0.0; n],
            config,
        }
    }

    /// A model with every parameter zero.
    pub fn zeros(vocab: EmbeddingVocab, num_relations: usize, config: KbvConfig) -> Self {
        let d = config.dim;
        let n = vocab.len();
        Self {
            vocab,
            num_relations,
            dim: d,
            entity: vec![0.0; n * d],
            relation: vec![0.0; 2 * num_relations * d],
            d_e: vec![0.0; d],
            d_r: vec![0.0; d],
            b_c: vec![0.0; d],
            b_p: vec![0.0; n],
            config,
        }
    }

    fn entity_row(&self, row: usize) -> &[f64] {
        &self.entity[row * self.dim..(row + 1) * self.dim]
    }

    fn relation_row(&self, row: usize) -> &[f64] {
        &self.relation[row * self.dim..(row + 1) * self.dim]
    }

    fn relation_index(&self, r: RelationId, direction: Direction) -> Option<usize> {
        let r = r.index();
        if r >= self.num_relations {
            return None;
        }
        Some(match direction {
            Direction::Forward => r,
            Direction::Inverse => self.num_relations + r,
        })
    }

    fn entity_index(&self, e: EntityId) -> std::result::Result<usize, MissingEmbedding> {
        self.vocab.row(e).ok_or(MissingEmbedding { entity: e })
    }

    fn combination(&self, entity: usize, relation: usize) -> Vec<f64> {
        let e = self.entity_row(entity);
        let r = self.relation_row(relation);
        (0..self.dim)
            .map(|k| (self.d_e[k] * e[k] + self.d_r[k] * r[k] + self.b_c[k]).tanh())
            .collect()
    }

    fn predict_rows(&self, entity: usize, relation: usize, candidates: &[usize]) -> (Vec<f64>, Vec<f64>) {
        let h = self.combination(entity, relation);
        let logits: Vec<f64> = candidates
            .iter()
            .map(|&c| dot(self.entity_row(c), &h) + self.b_p[c])
            .collect();
        (h, softmax(&logits))
    }

    fn rows_for(
        &self,
        entity: EntityId,
        relation: RelationId,
        direction: Direction,
        candidates: &[EntityId],
    ) -> std::result::Result<(usize, usize, Vec<usize>), MissingEmbedding> {
        let e = self.entity_index(entity)?;
        let r = self
            .relation_index(relation, direction)
            .ok_or(MissingEmbedding { entity })?;
        let c = candidates
            .iter()
            .map(|&c| self.entity_index(c))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok((e, r, c))
    }

    /// Prediction vector for `(e1, r, ?)` over `candidates`.
    pub fn forward(
        &self,
        e1: EntityId,
        r: RelationId,
        candidates: &[EntityId],
    ) -> std::result::Result<Vec<f64>, MissingEmbedding> {
        self.forward_dir(e1, r, Direction::Forward, candidates)
    }

    pub fn forward_dir(
        &self,
        entity: EntityId,
        r: RelationId,
        direction: Direction,
        candidates: &[EntityId],
    ) -> std::result::Result<Vec<f64>, MissingEmbedding> {
        let (e, rel, c) = self.rows_for(entity, r, direction, candidates)?;
        Ok(self.predict_rows(e, rel, &c).1)
    }

    fn row_query(&self, q: &Query) -> std::result::Result<RowQuery, MissingEmbedding> {
        let (entity, relation, candidates) =
            self.rows_for(q.entity, q.relation, q.direction, &q.candidates)?;
        Ok(RowQuery {
            entity,
            relation,
            candidates,
            targets: q.targets.clone(),
        })
    }

    /// Mean query loss over a batch.
    pub fn loss(&self, batch: &[Query]) -> std::result::Result<f64, MissingEmbedding> {
        if batch.is_empty() {
            return Ok(0.0);
        }
        let mut total = 0.0;
        for q in batch {
            let rq = self.row_query(q)?;
            let (_, v) = self.predict_rows(rq.entity, rq.relation, &rq.candidates);
            total += query_loss(&v, &rq.targets);
        }
        Ok(total / batch.len() as f64)
    }

    /// Mean batch loss and its gradient with respect to every parameter.
    pub fn loss_and_gradient(
        &self,
        batch: &[Query],
    ) -> std::result::Result<(f64, Gradient), MissingEmbedding> {
        let mut grad = Gradient::new(self.dim);
        let mut total = 0.0;
        let scale = 1.0 / batch.len().max(1) as f64;
        for q in batch {
            let rq = self.row_query(q)?;
            total += self.accumulate(&rq, scale, &mut grad);
        }
        Ok((total * scale, grad))
    }

    /// Adds `scale * dL/dtheta` for one query into `grad`; returns the unscaled loss.
    fn accumulate(&self, q: &RowQuery, scale: f64, grad: &mut Gradient) -> f64 {
        let d = self.dim;
        let (h, v) = self.predict_rows(q.entity, q.relation, &q.candidates);
        let loss = cross_entropy_terms(&v, &q.targets);

        // dL/dlogit_j = S' v_j - s_j [v_j >= floor], S' = sum of targets on unclamped entries.
        let unclamped: f64 = q
            .targets
            .iter()
            .zip(&v)
            .filter(|(_, &vi)| vi >= LOG_FLOOR)
            .map(|(s, _)| s)
            .sum();
        let g_logit: Vec<f64> = v
            .iter()
            .zip(&q.targets)
            .map(|(&vj, &sj)| {
                let own = if vj >= LOG_FLOOR { sj } else { 0.0 };
                scale * (unclamped * vj - own)
            })
            .collect();

        let mut g_h = vec![0.0; d];
        for (&c, &g) in q.candidates.iter().zip(&g_logit) {
            if g == 0.0 {
                continue;
            }
            *grad.b_p.entry(c).or_default() += g;
            let row = self.entity_row(c);
            let gc = grad.entity.entry(c).or_insert_with(|| vec![0.0; d]);
            for k in 0..d {
                gc[k] += g * h[k];
                g_h[k] += g * row[k];
            }
        }
        let e = self.entity_row(q.entity);
        let r = self.relation_row(q.relation);
        let ge = grad.entity.entry(q.entity).or_insert_with(|| vec![0.0; d]);
        let mut g_pre = vec![0.0; d];
        for k in 0..d {
            g_pre[k] = g_h[k] * (1.0 - h[k] * h[k]);
            ge[k] += g_pre[k] * self.d_e[k];
        }
        let gr = grad.relation.entry(q.relation).or_insert_with(|| vec![0.0; d]);
        for k in 0..d {
            gr[k] += g_pre[k] * self.d_r[k];
            grad.d_e[k] += g_pre[k] * e[k];
            grad.d_r[k] += g_pre[k] * r[k];
            grad.b_c[k] += g_pre[k];
        }
        loss
    }

    fn apply(&mut self, grad: &Gradient, lr: f64) {
        let d = self.dim;
        for (&row, g) in &grad.entity {
            for (w, gk) in self.entity[row * d..(row + 1) * d].iter_mut().zip(g) {
                *w -= lr * gk;
            }
        }
        for (&row, g) in &grad.relation {
            for (w, gk) in self.relation[row * d..(row + 1) * d].iter_mut().zip(g) {
                *w -= lr * gk;
            }
        }
        for (p, g) in [
            (&mut self.d_e, &grad.d_e),
            (&mut self.d_r, &grad.d_r),
            (&mut self.b_c, &grad.b_c),
        ] {
            for (w, gk) in p.iter_mut().zip(g) {
                *w -= lr * gk;
            }
        }
        for (&row, &g) in &grad.b_p {
            self.b_p[row] -= lr * g;
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.entity.len() + self.relation.len() + 3 * self.dim + self.b_p.len()
    }

    /// All parameters, flattened: entity, relation, D_e, D_r, b_c, b_p.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for block in [&self.entity, &self.relation, &self.d_e, &self.d_r, &self.b_c, &self.b_p] {
            out.extend_from_slice(block);
        }
        out
    }

    pub fn set_parameter(&mut self, mut index: usize, value: f64) {
        for block in [
            &mut self.entity,
            &mut self.relation,
            &mut self.d_e,
            &mut self.d_r,
            &mut self.b_c,
            &mut self.b_p,
        ] {
            if index < block.len() {
                block[index] = value;
                return;
            }
            index -= block.len();
        }
        panic!("parameter index out of range");
    }

    pub fn is_finite(&self) -> bool {
        self.parameters().iter().all(|v| v.is_finite())
    }

    /// Probability of the triple's object given `(subject, r)` and of its
    /// subject given `(object, r^-1)`, each over the full kept vocabulary,
    /// averaged.
    pub fn score_triple(&self, t: &Triple) -> std::result::Result<f64, MissingEmbedding> {
        let s = self.entity_index(t.subject)?;
        let o = self.entity_index(t.object)?;
        let fwd = self
            .relation_index(t.relation, Direction::Forward)
            .ok_or(MissingEmbedding { entity: t.subject })?;
        let inv = self
            .relation_index(t.relation, Direction::Inverse)
            .ok_or(MissingEmbedding { entity: t.object })?;
        let all: Vec<usize> = (0..self.vocab.len()).collect();
        let (_, v_fwd) = self.predict_rows(s, fwd, &all);
        let (_, v_inv) = self.predict_rows(o, inv, &all);
        Ok(((v_fwd[o] + v_inv[s]) / 2.0).clamp(0.0, 1.0))
    }

    pub fn score_triples(&self, triples: &[Triple]) -> Vec<std::result::Result<f64, MissingEmbedding>> {
        triples.par_iter().map(|t| self.score_triple(t)).collect()
    }
}

/// Trained model plus the mean training loss of each epoch.
#[derive(Clone, Debug)]
pub struct TrainedKbv {
    pub model: KbvModel,
    pub loss_trace: Vec<f64>,
}

type QueryKey = (usize, usize);

/// Trains the validation network on quads. Every quad contributes a forward
/// query `(e1, r, ?)` and an inverse query `(e2, r^-1, ?)` per epoch; each
/// query's candidates are all its positive answers (targets = their
/// confidences) plus `negatives` distinct uniformly sampled non-answers.
pub fn train_kbv(quads: &[Quad], num_relations: usize, config: &KbvConfig) -> Result<TrainedKbv> {
    if config.dim == 0 {
        return Err(Error::InvalidArgument("embedding dimension must be >= 1".into()));
    }
    let vocab = build_vocab(quads, config.min_count)?;
    let mut model = KbvModel::init(vocab, num_relations, config.clone());

    let mut answers: BTreeMap<QueryKey, BTreeMap<usize, f64>> = BTreeMap::new();
    let mut instances: Vec<QueryKey> = Vec::new();
    for q in quads {
        let t = q.triple;
        if t.relation.index() >= num_relations {
            return Err(Error::InvalidArgument(format!(
                "relation id {} outside range {num_relations}",
                t.relation.0
            )));
        }
        let (Some(s), Some(o)) = (model.vocab.row(t.subject), model.vocab.row(t.object)) else {
            continue;
        };
        let conf = if config.ignore_confidence { 1.0 } else { q.confidence };
        let fwd = (s, t.relation.index());
        let inv = (o, num_relations + t.relation.index());
        for (key, answer) in [(fwd, o), (inv, s)] {
            let slot = answers.entry(key).or_default().entry(answer).or_insert(0.0);
            *slot = slot.max(conf);
            instances.push(key);
        }
    }
    if instances.is_empty() {
        return Err(Error::NoTrainingData(
            "no quad has both arguments in the embedding vocabulary".into(),
        ));
    }

    let n = model.vocab.len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut trace = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        instances.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for &key in &instances {
            let positives = &answers[&key];
            let mut candidates: Vec<usize> = positives.keys().copied().collect();
            let mut targets: Vec<f64> = positives.values().copied().collect();
            let negs = sample_negatives(&mut rng, n, positives, config.negatives);
            targets.extend(std::iter::repeat_n(0.0, negs.len()));
            candidates.extend(negs);
            let rq = RowQuery {
                entity: key.0,
                relation: key.1,
                candidates,
                targets,
            };
            let mut grad = Gradient::new(model.dim);
            epoch_loss += model.accumulate(&rq, 1.0, &mut grad);
            model.apply(&grad, config.learning_rate);
        }
        trace.push(epoch_loss / instances.len() as f64);
    }
    if !model.is_finite() {
        return Err(Error::InvalidArgument(
            "validation network diverged (non-finite parameters); lower the learning rate".into(),
        ));
    }
    Ok(TrainedKbv {
        model,
        loss_trace: trace,
    })
}

fn sample_negatives(
    rng: &mut ChaCha8Rng,
    n: usize,
    positives: &BTreeMap<usize, f64>,
    k: usize,
) -> Vec<usize> {
    let available = n - positives.len();
    if k >= available {
        return (0..n).filter(|c| !positives.contains_key(c)).collect();
    }
    // rejection sampling stalls when most non-answers are needed
    if 2 * k >= available {
        let pool: Vec<usize> = (0..n).filter(|c| !positives.contains_key(c)).collect();
        return pool.choose_multiple(rng, k).copied().collect();
    }
    let mut chosen = Vec::with_capacity(k);
    let mut seen = HashSet::with_capacity(k);
    while chosen.len() < k {
        let c = rng.gen_range(0..n);
        if !positives.contains_key(&c) && seen.insert(c) {
            chosen.push(c);
        }
    }
    chosen
}

pub use io::{read_model, write_model};

#[cfg(test)]
mod tests {
    use super::*;

    fn quad(s: u32, r: u32, o: u32, c: f64) -> Quad {
        Quad::new(Triple::new(EntityId(s), RelationId(r), EntityId(o)), c).unwrap()
    }

    #[test]
    fn vocab_threshold() {
        // entity 0 in 3 quads, entity 1 in 2, entities 2..4 in 1
        let quads = vec![quad(0, 0, 1, 1.0), quad(0, 0, 1, 1.0), quad(0, 0, 2, 1.0), quad(3, 0, 4, 1.0)];
        let v = build_vocab(&quads, 3).unwrap();
        assert!(v.contains(EntityId(0)));
        assert!(!v.contains(EntityId(1)));
        let v = build_vocab(&quads, 1).unwrap();
        assert_eq!(v.len(), 5);
        assert!(build_vocab(&quads, 4).is_err());
        assert!(build_vocab(&quads, 0).is_err());
    }

    #[test]
    fn self_loop_counts_once_in_vocab() {
        let quads = vec![quad(0, 0, 0, 1.0), quad(0, 0, 1, 1.0)];
        let v = build_vocab(&quads, 2).unwrap();
        assert_eq!(v.entities(), &[EntityId(0)]);
        assert_eq!(v.counts(), &[2]);
    }

    fn tiny_vocab(n: u32) -> EmbeddingVocab {
        let quads: Vec<Quad> = (0..n).map(|i| quad(i, 0, (i + 1) % n, 1.0)).collect();
        build_vocab(&quads, 1).unwrap()
    }

    #[test]
    fn zero_model_uniform_and_singleton() {
        let m = KbvModel::zeros(tiny_vocab(4), 1, KbvConfig { dim: 3, ..KbvConfig::default() });
        let v = m
            .forward(EntityId(0), RelationId(0), &[EntityId(0), EntityId(1), EntityId(2), EntityId(3)])
            .unwrap();
        assert!(v.iter().all(|&x| (x - 0.25).abs() < 1e-15));
        let v = m.forward(EntityId(0), RelationId(0), &[EntityId(2)]).unwrap();
        assert_eq!(v, vec![1.0]);
    }

    #[test]
    fn missing_embedding_is_a_value() {
        let m = KbvModel::zeros(tiny_vocab(3), 1, KbvConfig { dim: 2, ..KbvConfig::default() });
        assert_eq!(
            m.forward(EntityId(9), RelationId(0), &[EntityId(0)]),
            Err(MissingEmbedding { entity: EntityId(9) })
        );
        assert!(m
            .score_triple(&Triple::new(EntityId(0), RelationId(0), EntityId(9)))
            .is_err());
    }

    #[test]
    fn hand_computed_forward() {
        // d = 2, three entities
        let mut m = KbvModel::zeros(tiny_vocab(3), 1, KbvConfig { dim: 2, ..KbvConfig::default() });
        m.entity = vec![0.5, -1.0, 1.0, 2.0, -0.3, 0.4];
        m.relation = vec![0.2, 0.7, 0.0, 0.0];
        m.d_e = vec![1.5, -0.5];
        m.d_r = vec![2.0, 1.0];
        m.b_c = vec![0.1, -0.2];
        m.b_p = vec![0.0, 0.3, -0.1];
        // h = tanh(D_e*e0 + D_r*r0 + b_c)
        let h0 = (1.5f64 * 0.5 + 2.0 * 0.2 + 0.1).tanh(); // tanh(1.25)
        let h1 = (-0.5f64 * -1.0 + 1.0 * 0.7 - 0.2).tanh(); // tanh(1.0)
        let z = [
            0.5 * h0 - 1.0 * h1 + 0.0,
            1.0 * h0 + 2.0 * h1 + 0.3,
            -0.3 * h0 + 0.4 * h1 - 0.1,
        ];
        let ez: Vec<f64> = z.iter().map(|x| x.exp()).collect();
        let sum: f64 = ez.iter().sum();
        let v = m
            .forward(EntityId(0), RelationId(0), &[EntityId(0), EntityId(1), EntityId(2)])
            .unwrap();
        for (a, b) in v.iter().zip(ez.iter().map(|e| e / sum)) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn loss_examples() {
        let v = vec![0.25; 4];
        assert!((query_loss(&v, &[0.0, 1.0, 0.0, 0.0]) - 4f64.ln()).abs() < 1e-15);
        assert_eq!(query_loss(&v, &[0.0; 4]), 0.0);
        let l = query_loss(&[0.5, 0.25, 0.25], &[0.0, 0.7, 0.3]);
        assert!((l - 1.3862943611198906).abs() < 1e-12);
    }

    #[test]
    fn loss_scales_with_targets() {
        let v = [0.1, 0.6, 0.3];
        let s = [0.2, 0.5, 0.9];
        let c = 2.5;
        let scaled: Vec<f64> = s.iter().map(|x| x * c).collect();
        assert!((query_loss(&v, &scaled) - c * query_loss(&v, &s)).abs() < 1e-12);
    }

    #[test]
    fn loss_is_clamped() {
        assert!(query_loss(&[0.0, 1.0], &[1.0, 0.0]).is_finite());
    }

    #[test]
    fn training_is_deterministic() {
        let quads: Vec<Quad> = (0..12).map(|i| quad(i, i % 2, (i + 3) % 12, 0.8)).collect();
        let cfg = KbvConfig {
            dim: 4,
            epochs: 5,
            negatives: 3,
            min_count: 1,
            seed: 5,
            ..KbvConfig::default()
        };
        let a = train_kbv(&quads, 2, &cfg).unwrap();
        let b = train_kbv(&quads, 2, &cfg).unwrap();
        assert_eq!(a.loss_trace, b.loss_trace);
        assert_eq!(a.model, b.model);
        assert_eq!(a.model.entity.len(), a.model.vocab.len() * 4);
    }

    #[test]
    fn confidence_one_matches_multi_hot() {
        let quads: Vec<Quad> = (0..12).map(|i| quad(i, i % 2, (i + 5) % 12, 1.0)).collect();
        let cfg = KbvConfig {
            dim: 4,
            epochs: 5,
            negatives: 3,
            min_count: 1,
            seed: 5,
            ..KbvConfig::default()
        };
        let weighted = train_kbv(&quads, 2, &cfg).unwrap();
        let plain = train_kbv(&quads, 2, &KbvConfig { ignore_confidence: true, ..cfg }).unwrap();
        assert_eq!(weighted.loss_trace, plain.loss_trace);
    }

    #[test]
    fn training_without_vocab_errors() {
        let quads = vec![quad(0, 0, 1, 1.0)];
        assert!(train_kbv(&quads, 1, &KbvConfig::default()).is_err());
    }

    #[test]
    fn negatives_are_distinct_non_answers() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pos = BTreeMap::from([(2usize, 1.0), (5, 0.5)]);
        let negs = sample_negatives(&mut rng, 10, &pos, 4);
        assert_eq!(negs.len(), 4);
        let set: HashSet<_> = negs.iter().collect();
        assert_eq!(set.len(), 4);
        assert!(!negs.contains(&2) && !negs.contains(&5));
        let all = sample_negatives(&mut rng, 10, &pos, 100);
        assert_eq!(all.len(), 8);
    }
}
