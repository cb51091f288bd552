mod common;

use std::collections::HashMap;

use common::quad;
use kbpop::kg::{connectivity, split, EntityId, KnowledgeGraph, Quad, Triple};
use proptest::prelude::*;

fn arb_quads() -> impl Strategy<Value = Vec<(u32, u32, u32, f64)>> {
    prop::collection::vec((0u32..12, 0u32..3, 0u32..12, 0.0f64..=1.0), 0..60)
}

fn build(raw: &[(u32, u32, u32, f64)]) -> KnowledgeGraph {
    let mut kg = KnowledgeGraph::new();
    for &(s, r, o, c) in raw {
        kg.insert_labels(&format!("e{s}"), &format!("r{r}"), &format!("e{o}"), c).unwrap();
    }
    kg
}

proptest! {
    #[test]
    fn indexed_connectivity_equals_linear_scan(raw in arb_quads()) {
        let kg = build(&raw);
        for id in 0..kg.num_entities() as u32 {
            let e = EntityId(id);
            prop_assert_eq!(kg.connectivity(e), connectivity(e, kg.quads()));
        }
        prop_assert_eq!(kg.connectivity(EntityId(999)), 0);
    }

    #[test]
    fn store_keeps_max_confidence_per_triple(raw in arb_quads()) {
        let kg = build(&raw);
        let mut expected: HashMap<(u32, u32, u32), f64> = HashMap::new();
        for &(s, r, o, c) in &raw {
            let slot = expected.entry((s, r, o)).or_insert(0.0);
            *slot = slot.max(c);
        }
        prop_assert_eq!(kg.len(), expected.len());
        for ((s, r, o), c) in expected {
            let t = Triple::new(
                kg.entity_id(&format!("e{s}")).unwrap(),
                kg.relation_id(&format!("r{r}")).unwrap(),
                kg.entity_id(&format!("e{o}")).unwrap(),
            );
            prop_assert_eq!(kg.confidence(&t), Some(c));
        }
    }

    #[test]
    fn tsv_roundtrip_preserves_quads(raw in arb_quads()) {
        let kg = build(&raw);
        let mut buf = Vec::new();
        kg.write_quads(&mut buf).unwrap();
        let back = KnowledgeGraph::read_quads(buf.as_slice(), 1.0).unwrap();
        prop_assert_eq!(back.len(), kg.len());
        for q in kg.quads() {
            let (s, r, o) = kg.triple_labels(&q.triple);
            let t = Triple::new(
                back.entity_id(s).unwrap(),
                back.relation_id(r).unwrap(),
                back.entity_id(o).unwrap(),
            );
            prop_assert_eq!(back.confidence(&t), Some(q.confidence));
        }
    }

    #[test]
    fn split_partitions_the_graph(raw in arb_quads(), seed in 0u64..1000) {
        let kg = build(&raw);
        let parts = split(&kg, (0.6, 0.2, 0.2), seed).unwrap();
        let n = kg.len();
        prop_assert_eq!(parts.train.len(), (n as f64 * 0.6).floor() as usize);
        prop_assert_eq!(parts.train.len() + parts.validation.len() + parts.test.len(), n);
        for q in kg.quads() {
            let hits = [&parts.train, &parts.validation, &parts.test]
                .iter()
                .filter(|p| p.contains(&q.triple))
                .count();
            prop_assert_eq!(hits, 1);
        }
    }
}

#[test]
fn split_example_sizes() {
    let kg = build(&(0..10).map(|i| (i, 0, i + 1, 1.0)).collect::<Vec<_>>());
    let parts = split(&kg, (0.8, 0.1, 0.1), 7).unwrap();
    assert_eq!((parts.train.len(), parts.validation.len(), parts.test.len()), (8, 1, 1));
}

#[test]
fn connectivity_examples() {
    let quads: Vec<Quad> = vec![quad(0, 0, 1, 1.0), quad(1, 0, 2, 1.0), quad(0, 0, 2, 1.0)];
    assert_eq!(connectivity(EntityId(1), &quads), 2);
    assert_eq!(connectivity(EntityId(5), &quads), 0);
    assert_eq!(connectivity(EntityId(0), &[quad(0, 0, 0, 0.1)]), 1);
}
