//! Lightweight distantly supervised relation extractor.
//!
//! A multinomial logistic model over hashed piecewise n-gram features scores
//! each context; a pair's confidence for a relation is the max over its
//! contexts. Training uses the same max-pooled aggregate at bag level.

pub mod features;

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use features::{featurize_context, ContextFeatures, DEFAULT_HASH_DIM};

use crate::binio;
use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph, Quad, RelationId, Triple};
use crate::math::softmax;
use crate::supervision::{Context, ContextIndex, LabeledBag};

const LOG_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct ReConfig {
    pub hash_dim: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ReConfig {
    fn default() -> Self {
        Self {
            hash_dim: DEFAULT_HASH_DIM,
            learning_rate: 0.5,
            epochs: 30,
            l2: 1e-6,
            batch_size: 16,
            seed: 0,
        }
    }
}

/// Per-context scorer. Output has `num_relations() + 1` probabilities; the
/// last entry is the NA class.
pub trait RelationScorer: Sync {
    fn num_relations(&self) -> usize;
    fn score(&self, context: &Context) -> Vec<f64>;
}

/// Softmax linear model; `weights` is row-major `hash_dim x (|R| + 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReModel {
    pub num_relations: usize,
    pub hash_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub config: ReConfig,
}

impl ReModel {
    pub fn zeros(num_relations: usize, config: ReConfig) -> Self {
        let classes = num_relations + 1;
        Self {
            num_relations,
            hash_dim: config.hash_dim,
            weights: vec![0.0; config.hash_dim * classes],
            bias: vec![0.0; classes],
            config,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_relations + 1
    }

    pub fn na_class(&self) -> usize {
        self.num_relations
    }

    pub fn row(&self, feature: u32) -> &[f64] {
        let c = self.num_classes();
        &self.weights[feature as usize * c..(feature as usize + 1) * c]
    }

    fn row_mut(&mut self, feature: u32) -> &mut [f64] {
        let c = self.num_classes();
        &mut self.weights[feature as usize * c..(feature as usize + 1) * c]
    }

    pub fn logits(&self, f: &ContextFeatures) -> Vec<f64> {
        let mut z = self.bias.clone();
        for &i in &f.indices {
            for (zc, w) in z.iter_mut().zip(self.row(i)) {
                *zc += w;
            }
        }
        z
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|v| v.is_finite())
    }

    /// Sparse binary dump: header, bias, then only the non-zero weight rows.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        binio::write_magic(w, b"KBRE", 1)?;
        binio::write_u64(w, self.num_relations as u64)?;
        binio::write_u64(w, self.hash_dim as u64)?;
        binio::write_f64s(
            w,
            &[self.config.learning_rate, self.config.l2],
        )?;
        binio::write_u64(w, self.config.epochs as u64)?;
        binio::write_u64(w, self.config.batch_size as u64)?;
        binio::write_u64(w, self.config.seed)?;
        binio::write_f64s(w, &self.bias)?;
        let rows: Vec<u32> = (0..self.hash_dim as u32)
            .filter(|&i| self.row(i).iter().any(|&v| v != 0.0))
            .collect();
        binio::write_u32s(w, &rows)?;
        for &i in &rows {
            for v in self.row(i) {
                w.write_all(&v.to_le_bytes()).map_err(|e| Error::Format(e.to_string()))?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        binio::read_magic(r, b"KBRE", 1)?;
        let num_relations = binio::read_u64(r)? as usize;
        let hash_dim = binio::read_u64(r)? as usize;
        let rates = binio::read_f64s(r)?;
        if rates.len() != 2 {
            return Err(Error::Format("bad extractor header".into()));
        }
        let config = ReConfig {
            hash_dim,
            learning_rate: rates[0],
            l2: rates[1],
            epochs: binio::read_u64(r)? as usize,
            batch_size: binio::read_u64(r)? as usize,
            seed: binio::read_u64(r)?,
        };
        let mut model = ReModel::zeros(num_relations, config);
        model.bias = binio::read_f64s(r)?;
        if model.bias.len() != model.num_classes() {
            return Err(Error::Format("bias length mismatch".into()));
        }
        let rows = binio::read_u32s(r)?;
        let mut b = [0u8; 8];
        for i in rows {
            if i as usize >= hash_dim {
                return Err(Error::Format(format!("row {i} out of range")));
            }
            for v in model.row_mut(i) {
                r.read_exact(&mut b).map_err(|e| Error::Format(e.to_string()))?;
                *v = f64::from_le_bytes(b);
            }
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
        self.write_to(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut r = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
        Self::read_from(&mut r)
    }
}

impl RelationScorer for ReModel {
    fn num_relations(&self) -> usize {
        self.num_relations
    }

    fn score(&self, context: &Context) -> Vec<f64> {
        score_context(self, &featurize_context(context, self.hash_dim))
    }
}

/// Class distribution over `|R| + 1` classes for one context.
pub fn score_context(model: &ReModel, f: &ContextFeatures) -> Vec<f64> {
    softmax(&model.logits(f))
}

#[derive(Debug, Default)]
struct SparseGrad {
    rows: HashMap<u32, Vec<f64>>,
    bias: Vec<f64>,
}

impl SparseGrad {
    fn new(classes: usize) -> Self {
        Self {
            rows: HashMap::new(),
            bias: vec![0.0; classes],
        }
    }
}

/// Max-pooled, renormalized bag loss; accumulates its gradient when asked.
///
/// With pooled `M_c = max_k p_kc`, `S = sum_c M_c` and targets `P`, the loss
/// is `-(1/|P|) sum_{r in P} log(M_r / S)`.
fn bag_loss(
    model: &ReModel,
    feats: &[ContextFeatures],
    targets: &[usize],
    grad: Option<&mut SparseGrad>,
) -> f64 {
    let classes = model.num_classes();
    let probs: Vec<Vec<f64>> = feats.iter().map(|f| score_context(model, f)).collect();
    let mut argmax = vec![0usize; classes];
    let mut pooled = vec![f64::NEG_INFINITY; classes];
    for (k, p) in probs.iter().enumerate() {
        for c in 0..classes {
            if p[c] > pooled[c] {
                pooled[c] = p[c];
                argmax[c] = k;
            }
        }
    }
    let total: f64 = pooled.iter().sum();
    let weight = 1.0 / targets.len() as f64;
    let mut loss = 0.0;
    let mut active = Vec::with_capacity(targets.len());
    for &r in targets {
        let q = pooled[r] / total;
        if q < LOG_FLOOR {
            loss -= weight * LOG_FLOOR.ln();
        } else {
            loss -= weight * q.ln();
            active.push(r);
        }
    }
    let Some(grad) = grad else {
        return loss;
    };
    // dL/dM_c
    let mut g_pooled = vec![active.len() as f64 * weight / total; classes];
    for &r in &active {
        g_pooled[r] -= weight / pooled[r];
    }
    // dL/dz_k for each context through its argmax classes
    let mut g_logits = vec![vec![0.0; classes]; feats.len()];
    for c in 0..classes {
        let k = argmax[c];
        let p = &probs[k];
        let gc = g_pooled[c] * p[c];
        if gc == 0.0 {
            continue;
        }
        for j in 0..classes {
            let delta = if j == c { 1.0 } else { 0.0 };
            g_logits[k][j] += gc * (delta - p[j]);
        }
    }
    for (f, gz) in feats.iter().zip(&g_logits) {
        for (b, g) in grad.bias.iter_mut().zip(gz) {
            *b += g;
        }
        for &i in &f.indices {
            let row = grad.rows.entry(i).or_insert_with(|| vec![0.0; classes]);
            for (w, g) in row.iter_mut().zip(gz) {
                *w += g;
            }
        }
    }
    loss
}

fn bag_targets(bag: &LabeledBag, na_class: usize, num_relations: usize) -> Result<Vec<usize>> {
    if bag.is_na() {
        return Ok(vec![na_class]);
    }
    bag.positive_relations
        .iter()
        .map(|r| {
            if r.index() < num_relations {
                Ok(r.index())
            } else {
                Err(Error::InvalidArgument(format!(
                    "relation id {} outside model range {num_relations}",
                    r.0
                )))
            }
        })
        .collect()
}

/// Mean bag loss over a training set (the monitored objective).
pub fn mean_bag_loss(model: &ReModel, bags: &[LabeledBag]) -> Result<f64> {
    let mut total = 0.0;
    for bag in bags {
        let feats: Vec<_> = bag
            .contexts
            .iter()
            .map(|c| featurize_context(c, model.hash_dim))
            .collect();
        let targets = bag_targets(bag, model.na_class(), model.num_relations)?;
        total += bag_loss(model, &feats, &targets, None);
    }
    Ok(total / bags.len().max(1) as f64)
}

/// Mini-batch SGD on the max-pooled bag loss. Returns the model and the
/// mean training loss measured after each epoch.
pub fn train_re(
    bags: &[LabeledBag],
    num_relations: usize,
    config: &ReConfig,
) -> Result<(ReModel, Vec<f64>)> {
    if bags.is_empty() {
        return Err(Error::NoTrainingData("no labeled bags".into()));
    }
    if bags.iter().all(LabeledBag::is_na) {
        return Err(Error::NoTrainingData("no positive bags".into()));
    }
    if config.hash_dim == 0 || config.batch_size == 0 {
        return Err(Error::InvalidArgument("hash_dim and batch_size must be positive".into()));
    }
    let mut model = ReModel::zeros(num_relations, config.clone());
    let prepared: Vec<(Vec<ContextFeatures>, Vec<usize>)> = bags
        .iter()
        .filter(|b| !b.contexts.is_empty())
        .map(|b| {
            let feats = b
                .contexts
                .iter()
                .map(|c| featurize_context(c, config.hash_dim))
                .collect();
            Ok((feats, bag_targets(b, model.na_class(), num_relations)?))
        })
        .collect::<Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let mut trace = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let mut grad = SparseGrad::new(model.num_classes());
            for &i in batch {
                let (feats, targets) = &prepared[i];
                bag_loss(&model, feats, targets, Some(&mut grad));
            }
            let step = config.learning_rate / batch.len() as f64;
            for (b, g) in model.bias.iter_mut().zip(&grad.bias) {
                *b -= step * g;
            }
            let decay = config.learning_rate * config.l2;
            for (i, g) in grad.rows {
                for (w, gj) in model.row_mut(i).iter_mut().zip(&g) {
                    *w -= step * gj + decay * *w;
                }
            }
        }
        let loss: f64 = prepared
            .iter()
            .map(|(f, t)| bag_loss(&model, f, t, None))
            .sum::<f64>()
            / prepared.len() as f64;
        trace.push(loss);
    }
    if !model.is_finite() {
        return Err(Error::InvalidArgument(
            "extractor diverged (non-finite parameters); lower the learning rate".into(),
        ));
    }
    Ok((model, trace))
}

/// Max over contexts of each relation's probability (NA excluded).
pub fn pair_relation_scores(scorer: &dyn RelationScorer, contexts: &[&Context]) -> Vec<f64> {
    let mut pooled = vec![0.0; scorer.num_relations()];
    for c in contexts {
        let p = scorer.score(c);
        for (m, &v) in pooled.iter_mut().zip(&p) {
            if v > *m {
                *m = v;
            }
        }
    }
    pooled
}

/// Emits `<e1, r, e2, s>` for every co-occurring pair (in key order) and every
/// relation with pooled confidence `s >= min_confidence`. Quads are sorted by
/// `(e1, r, e2)` id.
pub fn extract(
    scorer: &dyn RelationScorer,
    index: &ContextIndex,
    vocab: &KnowledgeGraph,
    min_confidence: f64,
) -> Result<KnowledgeGraph> {
    if !(0.0..=1.0).contains(&min_confidence) {
        return Err(Error::InvalidArgument(format!(
            "min_confidence {min_confidence} outside [0, 1]"
        )));
    }
    if scorer.num_relations() != vocab.num_relations() {
        return Err(Error::DimensionMismatch {
            expected: vocab.num_relations(),
            actual: scorer.num_relations(),
        });
    }
    let mut quads: Vec<Quad> = index
        .pairs()
        .par_iter()
        .flat_map_iter(|&(a, b): &(EntityId, EntityId)| {
            let contexts: Vec<&Context> = index
                .context_ids_for_pair((a, b))
                .iter()
                .map(|&i| &index.contexts()[i])
                .collect();
            pair_relation_scores(scorer, &contexts)
                .into_iter()
                .enumerate()
                .filter(|&(_, s)| s >= min_confidence)
                .map(move |(r, s)| Quad {
                    triple: Triple::new(a, RelationId(r as u32), b),
                    confidence: s.clamp(0.0, 1.0),
                })
                .collect::<Vec<_>>()
        })
        .collect();
    quads.sort_by_key(|q| q.triple);
    let mut kg = vocab.empty_like();
    for q in quads {
        kg.insert(q);
    }
    Ok(kg)
}
