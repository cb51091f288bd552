"""Smoke test for the pykbpop extension.

Build and install it first, e.g. `maturin develop --release -m crates/python/Cargo.toml`,
then run `python python/smoke_test.py`.
"""

import math
import tempfile
from pathlib import Path

import pykbpop


def check_graph():
    kg = pykbpop.KnowledgeGraph.from_tsv("A\tborn_in\tB\t0.4\nA\tborn_in\tB\t0.9\nB\tr\tC\n")
    assert len(kg) == 2
    assert kg.confidence("A", "born_in", "B") == 0.9
    assert ("B", "r", "C") in kg
    assert kg.connectivity("B") == 2
    train, valid, test = kg.split(0.5, 0.25, 0.25, seed=1)
    assert len(train) + len(valid) + len(test) == 2


def check_loss_and_eval():
    assert abs(pykbpop.query_loss([0.5, 0.25, 0.25], [0.0, 0.7, 0.3]) - 1.386294) < 1e-6
    auc, points = pykbpop.pr_auc([0.9, 0.8, 0.7, 0.6], [True, False, True, False])
    assert abs(auc - (0.5 + 0.5 * (0.5 + 2 / 3) / 2)) < 1e-12
    assert len(points) == 4
    assert pykbpop.spearman([1, 2, 3], [2, 4, 9]) == 1.0
    assert pykbpop.feature_dim("ie", 13) == 1


def check_validator():
    kg = pykbpop.KnowledgeGraph()
    for i in range(30):
        kg.add(f"e{i}", "next", f"e{(i + 1) % 30}")
        kg.add(f"e{(i + 1) % 30}", "prev", f"e{i}")
    kg.add("lonely", "next", "e0")
    v = pykbpop.Validator.train(kg, dim=8, epochs=60, negatives=10, min_count=3, seed=1)
    assert v.loss_trace[-1] < v.loss_trace[0]
    assert not v.has_embedding("lonely")
    assert v.score("lonely", "next", "e0") is None
    assert v.score("e4", "next", "e5") > v.score("e4", "next", "e17")


def check_stacker():
    rows = [(i % 2, 0.1 + 0.8 * (i % 10) / 9, None if i % 3 else 0.5, 0.4) for i in range(60)]
    labels = [r[1] > 0.5 for r in rows]
    st = pykbpop.Stacker.fit(rows, labels, num_relations=2, features="all")
    preds = st.predict(rows)
    assert len(preds) == len(rows) and all(0.0 < p < 1.0 for p in preds)
    assert len(st.weights) == len(st.feature_names) == pykbpop.feature_dim("all", 2)
    pos = [p for p, y in zip(preds, labels) if y]
    neg = [p for p, y in zip(preds, labels) if not y]
    assert min(pos) > max(neg)


def check_pipeline():
    with tempfile.TemporaryDirectory() as tmp:
        bench = Path(tmp) / "bench"
        stats = pykbpop.generate_synth(str(bench), seed=2, entities=60, relations=4)
        assert stats["kb_facts"] > 0
        work = Path(tmp) / "work"
        ran = pykbpop.run_pipeline(str(work), kb=str(bench / "kb.tsv"), corpus=str(bench / "corpus.jsonl"), seed=2)
        assert [s for s, _ in ran][0] == "supervise" and not any(skipped for _, skipped in ran)
        again = pykbpop.run_pipeline(str(work), kb=str(bench / "kb.tsv"), corpus=str(bench / "corpus.jsonl"), seed=2)
        assert all(skipped for _, skipped in again)
        rows = (work / "eval" / "ablation.csv").read_text().splitlines()
        assert [r.split(",")[0] for r in rows[1:]] == ["IE", "IE+KBV", "IE+KBV_IE", "ALL"]
        assert all(math.isfinite(float(r.split(",")[1])) for r in rows[1:])


if __name__ == "__main__":
    for check in (check_graph, check_loss_and_eval, check_validator, check_stacker, check_pipeline):
        check()
        print(f"ok  {check.__name__}")
    print("smoke test passed")
