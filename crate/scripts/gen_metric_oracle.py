"""Freeze reference metric values computed by ranx for randomized fixtures.

Usage: python3 scripts/gen_metric_oracle.py > crates/core/tests/fixtures/metric_oracle.json
"""
import json
import random
import sys

from ranx import Qrels, Run, evaluate

METRICS = ["mrr", "ndcg@3", "ndcg@5", "map"]


def fixture(rng):
    n_turns = rng.randint(1, 20)
    n_docs = rng.randint(5, 100)
    docs = [f"d{i:03d}" for i in range(n_docs)]
    qrels, run = {}, {}
    for t in range(n_turns):
        turn = f"{rng.randint(1, 30)}-{rng.randint(1, 3)}-{t + 1}"
        judged = rng.sample(docs, rng.randint(1, min(15, n_docs)))
        grades = {d: rng.choice([0, 1, 1, 2, 3, 4]) for d in judged}
        if all(g == 0 for g in grades.values()):
            grades[judged[0]] = rng.randint(1, 4)
        qrels[turn] = grades
        retrieved = rng.sample(docs, rng.randint(1, n_docs))
        scores = rng.sample(range(1, 100_000), len(retrieved))
        run[turn] = {d: s / 1000.0 for d, s in zip(retrieved, scores)}
    ranx_run = Run(run)
    evaluate(Qrels(qrels), ranx_run, METRICS, make_comparable=True)
    expected = {turn: {m: float(ranx_run.scores[m][turn]) for m in METRICS} for turn in qrels}
    return {"qrels": qrels, "run": run, "expected": expected}


def main():
    rng = random.Random(20240501)
    fixtures = [fixture(rng) for _ in range(50)]
    json.dump({"tool": "ranx", "metrics": METRICS, "fixtures": fixtures}, sys.stdout, indent=1, sort_keys=True)
    sys.stdout.write("\n")


if __name__ == "__main__":
    main()
