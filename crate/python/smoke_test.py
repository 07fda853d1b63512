#!/usr/bin/env python3
"""Smoke test for the Python bindings.

Builds nothing itself: expects the extension cdylib under target/debug (run
`cargo build -p hypermeso-py` first). Copies it into a temp dir under the
importable name and exercises the public surface end to end.
"""

import json
import random
import shutil
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def import_module():
    for name in ("libhypermeso.so", "hypermeso.dll", "libhypermeso.dylib"):
        built = ROOT / "target" / "debug" / name
        if built.exists():
            break
    else:
        sys.exit("extension not built; run: cargo build -p hypermeso-py")
    tmp = Path(tempfile.mkdtemp(prefix="hypermeso-py-"))
    suffix = ".pyd" if built.suffix == ".dll" else ".so"
    shutil.copy2(built, tmp / f"hypermeso{suffix}")
    sys.path.insert(0, str(tmp))
    import hypermeso

    return hypermeso


def main():
    hm = import_module()
    rng = random.Random(7)

    # two planted groups, mostly within-group pairs and triples
    edges = []
    for _ in range(300):
        base = 0 if rng.random() < 0.5 else 8
        d = 2 if rng.random() < 0.7 else 3
        nodes = rng.sample(range(base, base + 8), d)
        edges.append((sorted(nodes), 1))
    graph = hm.Hypergraph(16, edges)
    assert graph.n_nodes == 16
    assert graph.max_order == 3

    stats = graph.summarize()
    assert stats["a_bullet"] == 300, stats

    params, loglik, best = hm.fit(
        graph, "semi", 2, 3, restarts=2, max_iters=20, seed=11
    )
    assert loglik < 0 and 0 <= best < 2
    assert len(params.theta) == 16 and len(params.theta[0]) == 2
    assert len(params.w) == 2 and len(params.w[0]) == 3
    # identity block is pinned
    assert params.w[0][0] == 1.0 and params.w[1][0] == 0.0

    # determinism
    params2, loglik2, _ = hm.fit(
        graph, "semi", 2, 3, restarts=2, max_iters=20, seed=11
    )
    assert loglik == loglik2 and params.theta == params2.theta

    score = hm.heldout_score(graph, params, mask_seed=3)
    assert score["total"] < 0
    assert set(score["per_order"]) <= {2, 3}

    report = json.loads(hm.metric_report(graph, params))
    assert len(report["allocation"]) == 3
    assert abs(sum(report["allocation"]) - 300) < 1e-6

    synth = hm.generate(params, seed=5)
    assert synth.n_nodes == 16
    assert all(2 <= len(nodes) <= 3 for nodes, _ in synth.edges())
    again = hm.generate(params, seed=5)
    assert synth.edges() == again.edges()

    # checkpoint round trip through a file
    with tempfile.TemporaryDirectory() as tmp:
        path = str(Path(tmp) / "checkpoint.json")
        params.save(path)
        loaded = hm.ModelParams.load(path)
        assert loaded.theta == params.theta
        assert loaded.variant == "semi"

    print("smoke test passed")


if __name__ == "__main__":
    main()
