#!/usr/bin/env python3
"""
HopLink Triple Store Benchmark
Loads a synthetic graph and times one-hop entity queries against the
engineering target (load <= 60 s, mean query <= 1 ms).

    python tools/benchmark_store.py --triples 1000000 --queries 10000
"""

import argparse
import io
import os
import sys
import time

import numpy as np
from tqdm import tqdm

# Repository root on the path when run as a script
sys.path.append(os.path.join(os.path.dirname(__file__), '..'))

from store.loaders import load_graph

LOAD_TARGET_S = 60.0
QUERY_TARGET_MS = 1.0


def synthetic_tsv(triples: int, entities: int, relations: int, seed: int) -> io.StringIO:
    rng = np.random.default_rng(seed)
    heads = rng.integers(0, entities, triples)
    rels = rng.integers(0, relations, triples)
    tails = rng.integers(0, entities, triples)
    lines = [f"e{h}\tr{r}\te{t}\n" for h, r, t in zip(heads.tolist(), rels.tolist(), tails.tolist())]
    return io.StringIO("".join(lines))


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="benchmark_store")
    parser.add_argument("--triples", type=int, default=1_000_000)
    parser.add_argument("--entities", type=int, default=200_000)
    parser.add_argument("--relations", type=int, default=500)
    parser.add_argument("--queries", type=int, default=10_000)
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args(argv)

    print(f"🏗️  Generating {args.triples} triples over {args.entities} entities...")
    source = synthetic_tsv(args.triples, args.entities, args.relations, args.seed)

    started = time.perf_counter()
    graph, report = load_graph(source, fmt="tsv")
    load_s = time.perf_counter() - started
    print(f"📦 Loaded {report.triples} triples ({report.duplicates} duplicates) in {load_s:.1f}s")

    rng = np.random.default_rng(args.seed + 1)
    frontiers = rng.integers(0, len(graph.entities), args.queries).tolist()
    elapsed = 0.0
    for entity in tqdm(frontiers, desc="one_hop_entities"):
        relations = graph.one_hop_relations([entity])
        started = time.perf_counter()
        graph.one_hop_entities([entity], relations[:3])
        elapsed += time.perf_counter() - started
    mean_ms = 1000.0 * elapsed / max(1, args.queries)

    load_ok = load_s <= LOAD_TARGET_S
    query_ok = mean_ms <= QUERY_TARGET_MS
    print(f"{'✅' if load_ok else '❌'} load {load_s:.1f}s (target {LOAD_TARGET_S:.0f}s)")
    print(f"{'✅' if query_ok else '❌'} mean query {mean_ms:.3f}ms (target {QUERY_TARGET_MS:.0f}ms)")
    return 0 if load_ok and query_ok else 1


if __name__ == "__main__":
    sys.exit(main())
