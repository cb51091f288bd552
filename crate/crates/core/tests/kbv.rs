mod common;

use common::{gradient_check, rng, small_model, triple, two_pattern_graph};
use kbpop::kbv::{query_loss, train_kbv, KbvConfig, KbvModel};
use kbpop::kg::{EntityId, Quad, RelationId};
use rand::seq::SliceRandom;
use rand::Rng;

#[test]
fn gradient_matches_central_differences() {
    for seed in 0..20u64 {
        let worst = gradient_check(seed);
        assert!(worst < 1e-4, "seed {seed}: relative error {worst}");
    }
}

fn reference_cross_entropy(logits: &[f64], target: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    lse - logits[target]
}

#[test]
fn one_hot_loss_matches_standard_cross_entropy() {
    let mut r = rng(11);
    for _ in 0..100 {
        let k = r.gen_range(1..12);
        let logits: Vec<f64> = (0..k).map(|_| r.gen_range(-5.0..5.0)).collect();
        let target = r.gen_range(0..k);
        let mut s = vec![0.0; k];
        s[target] = 1.0;
        let v = kbpop::math::softmax(&logits);
        let ours = query_loss(&v, &s);
        assert!((ours - reference_cross_entropy(&logits, target)).abs() < 1e-9);
    }
}

#[test]
fn eq2_hand_example() {
    let l = query_loss(&[0.5, 0.25, 0.25], &[0.0, 0.7, 0.3]);
    assert!((l - 1.386294).abs() < 1e-6);
}

#[test]
fn prediction_is_permutation_equivariant() {
    let model = small_model(3, 10, 4, 1);
    let cands: Vec<EntityId> = (0..10).map(EntityId).collect();
    let v = model.forward(EntityId(2), RelationId(0), &cands).unwrap();
    let mut r = rng(9);
    for _ in 0..10 {
        let mut perm: Vec<usize> = (0..10).collect();
        perm.shuffle(&mut r);
        let permuted: Vec<EntityId> = perm.iter().map(|&i| cands[i]).collect();
        let w = model.forward(EntityId(2), RelationId(0), &permuted).unwrap();
        for (j, &i) in perm.iter().enumerate() {
            assert!((w[j] - v[i]).abs() < 1e-14);
        }
    }
}

fn reciprocal_rank(model: &KbvModel, s: u32, r: u32, o: u32, n: u32) -> f64 {
    let truth = model.score_triple(&triple(s, r, o)).unwrap();
    let better = (0..n)
        .filter(|&c| c != o)
        .filter(|&c| model.score_triple(&triple(s, r, c)).unwrap() > truth)
        .count();
    1.0 / (better + 1) as f64
}

#[test]
fn toy_graph_ranks_held_out_objects() {
    // hold out a fifth of the `next` facts; their reverse stays in training
    let all = two_pattern_graph();
    let mut mrrs = Vec::new();
    for seed in 0..5u64 {
        let held: Vec<Quad> = all
            .iter()
            .filter(|q| q.triple.relation.0 == 0 && (q.triple.subject.0 + seed as u32).is_multiple_of(5))
            .copied()
            .collect();
        let train: Vec<Quad> = all.iter().filter(|q| !held.contains(q)).copied().collect();
        let cfg = KbvConfig {
            dim: 16,
            epochs: 200,
            negatives: 10,
            min_count: 1,
            seed,
            ..KbvConfig::default()
        };
        let model = train_kbv(&train, 2, &cfg).unwrap().model;
        let mrr = held
            .iter()
            .map(|q| reciprocal_rank(&model, q.triple.subject.0, 0, q.triple.object.0, 30))
            .sum::<f64>()
            / held.len() as f64;
        mrrs.push(mrr);
    }
    let mean = mrrs.iter().sum::<f64>() / mrrs.len() as f64;
    assert!(mean > 0.5, "mean MRR {mean:.3} ({mrrs:?})");
}

#[test]
fn planted_triple_beats_its_corruption() {
    let train = two_pattern_graph();
    let cfg = KbvConfig {
        dim: 8,
        epochs: 100,
        negatives: 10,
        min_count: 1,
        seed: 1,
        ..KbvConfig::default()
    };
    let model = train_kbv(&train, 2, &cfg).unwrap().model;
    let good = model.score_triple(&triple(4, 0, 5)).unwrap();
    let bad = model.score_triple(&triple(4, 0, 17)).unwrap();
    assert!(good > bad, "{good} <= {bad}");
}

#[test]
fn loss_trace_descends_and_repeats() {
    let cfg = KbvConfig {
        dim: 8,
        epochs: 30,
        negatives: 10,
        min_count: 1,
        seed: 4,
        ..KbvConfig::default()
    };
    let a = train_kbv(&two_pattern_graph(), 2, &cfg).unwrap();
    let b = train_kbv(&two_pattern_graph(), 2, &cfg).unwrap();
    assert_eq!(a.loss_trace, b.loss_trace);
    assert!(a.loss_trace.last().unwrap() < a.loss_trace.first().unwrap());
}
