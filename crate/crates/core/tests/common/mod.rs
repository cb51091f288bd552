#![allow(dead_code)]

use std::collections::HashSet;

use kbpop::kbv::{build_vocab, Direction, KbvConfig, KbvModel, Query};
use kbpop::kg::{EntityId, Quad, RelationId, Triple};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn triple(s: u32, r: u32, o: u32) -> Triple {
    Triple::new(EntityId(s), RelationId(r), EntityId(o))
}

pub fn quad(s: u32, r: u32, o: u32, c: f64) -> Quad {
    Quad::new(triple(s, r, o), c).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random scored quads over distinct triples, with a boolean truth per quad.
/// Scores are drawn from `levels` distinct values so ties are common.
pub fn random_instance(rng: &mut ChaCha8Rng, n: usize, levels: u32) -> (Vec<Quad>, Vec<bool>) {
    let quads: Vec<Quad> = (0..n as u32)
        .map(|i| quad(i, 0, i + 1, rng.gen_range(0..levels) as f64 / levels as f64))
        .collect();
    let truth = (0..n).map(|_| rng.gen_bool(0.4)).collect();
    (quads, truth)
}

/// Toy graph with two deterministic patterns over 30 entities: `next` maps
/// `i` to `i + 1` and `prev` is its exact reverse.
pub fn two_pattern_graph() -> Vec<Quad> {
    let n = 30;
    let mut quads = Vec::new();
    for i in 0..n {
        quads.push(quad(i, 0, (i + 1) % n, 1.0));
        quads.push(quad((i + 1) % n, 1, i, 1.0));
    }
    quads
}

/// Quadratic enumeration: for each distinct threshold, count every scored triple at or above it.
pub fn brute_force(scored: &[Quad], truth: &HashSet<Triple>, total_true: usize) -> (Vec<(f64, f64)>, f64) {
    let mut thresholds: Vec<f64> = scored.iter().map(|q| q.confidence).collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let points: Vec<(f64, f64)> = thresholds
        .iter()
        .map(|&t| {
            let above: Vec<&Quad> = scored.iter().filter(|q| q.confidence >= t).collect();
            let tp = above.iter().filter(|q| truth.contains(&q.triple)).count();
            (tp as f64 / total_true as f64, tp as f64 / above.len() as f64)
        })
        .collect();
    let mut auc = 0.0;
    let (mut r0, mut p0) = (0.0, points[0].1);
    for &(r, p) in &points {
        auc += (r - r0) * (p + p0) / 2.0;
        r0 = r;
        p0 = p;
    }
    (points, auc)
}

pub fn small_model(seed: u64, n: u32, dim: usize, relations: usize) -> KbvModel {
    let quads: Vec<Quad> = (0..n).map(|i| quad(i, 0, (i + 1) % n, 1.0)).collect();
    let vocab = build_vocab(&quads, 1).unwrap();
    let mut m = KbvModel::init(
        vocab,
        relations,
        KbvConfig {
            dim,
            seed,
            ..KbvConfig::default()
        },
    );
    // move the biases off zero so their gradients are exercised too
    let mut r = rng(seed ^ 0xb1a5);
    for b in m.b_c.iter_mut().chain(m.b_p.iter_mut()) {
        *b = r.gen_range(-0.5..0.5);
    }
    m
}

pub fn random_query(r: &mut impl Rng, n: u32, relations: u32) -> Query {
    let mut pool: Vec<u32> = (0..n).collect();
    pool.shuffle(r);
    let k = r.gen_range(1..=n.min(6) as usize);
    let candidates: Vec<EntityId> = pool[..k].iter().map(|&e| EntityId(e)).collect();
    let targets = (0..k)
        .map(|_| if r.gen_bool(0.5) { r.gen_range(0.0..1.0) } else { 0.0 })
        .collect();
    Query {
        entity: EntityId(r.gen_range(0..n)),
        relation: RelationId(r.gen_range(0..relations)),
        direction: if r.gen_bool(0.5) { Direction::Forward } else { Direction::Inverse },
        candidates,
        targets,
    }
}

/// Worst relative error between analytic and central-difference gradients
/// (step 1e-5) over every parameter of a random model with `d <= 8`, `|E| <= 20`.
pub fn gradient_check(seed: u64) -> f64 {
    let step = 1e-5;
    let mut r = rng(seed);
    let n = r.gen_range(3..=20);
    let dim = r.gen_range(1..=8);
    let model = small_model(seed, n, dim, 2);
    let batch: Vec<Query> = (0..3).map(|_| random_query(&mut r, n, 2)).collect();
    let (_, grad) = model.loss_and_gradient(&batch).unwrap();
    let analytic = grad.to_flat(&model);
    let params = model.parameters();
    let mut worst: f64 = 0.0;
    for i in 0..params.len() {
        let mut plus = model.clone();
        plus.set_parameter(i, params[i] + step);
        let mut minus = model.clone();
        minus.set_parameter(i, params[i] - step);
        let numeric = (plus.loss(&batch).unwrap() - minus.loss(&batch).unwrap()) / (2.0 * step);
        let diff = (analytic[i] - numeric).abs();
        // gradients that vanish to rounding level carry no relative information
        if diff < 1e-9 {
            continue;
        }
        worst = worst.max(diff / analytic[i].abs().max(numeric.abs()));
    }
    worst
}
