#!/usr/bin/env python3
"""Throughput comparison of the numba and pure-numpy kernel backends.

Spawns one child process per backend (the backend is fixed at import time by
SCINER_BACKEND), runs the four hot kernels on a synthetic workload, and prints
a side-by-side table.

    python benchmarks/bench_backends.py [--paragraphs N] [--repeats K]
"""

import argparse
import json
import os
import subprocess
import sys
import time


def run_workload(n_paragraphs: int, repeats: int) -> dict:
    import numpy as np

    from sciner import kernels, synth
    from sciner import tag_schema as ts
    from sciner.dataset import merge_for_retraining
    from sciner.tagger import Featurizer, prepare_examples

    corpus = synth.make_corpus(n_manual=n_paragraphs, n_auto=0, n_test=0, seed=1)
    examples = merge_for_retraining(corpus.manual, [])
    featurizer = Featurizer(1 << 20)
    prepared = prepare_examples(examples, featurizer)
    weights = np.random.default_rng(0).normal(scale=0.1, size=(1 << 20, 15))
    legal = ts.LEGAL_TRANSITIONS[:, : ts.NUM_CLASSES].astype(np.uint8)
    start_row = ts.label_index(ts.O_LABEL)
    order = np.arange(prepared.n_paragraphs, dtype=np.int64)

    word_idx_parts = []
    base = 0
    for example in examples:
        _, _, widx = featurizer.paragraph_arrays(example.words)
        word_idx_parts.append(widx + base)
        base += len(example.words)
    word_idx = np.concatenate(word_idx_parts)
    n_words = base

    def timed(fn):
        fn()  # warm-up (JIT compilation for the numba backend)
        best = float("inf")
        for _ in range(repeats):
            t0 = time.perf_counter()
            fn()
            best = min(best, time.perf_counter() - t0)
        return best

    probs = kernels.score_subwords(weights, prepared.feat, prepared.offsets)
    scores = kernels.aggregate_words(probs, word_idx, n_words)

    results = {
        "backend": kernels.BACKEND,
        "n_subwords": int(len(prepared.labels)),
        "score_subwords": timed(
            lambda: kernels.score_subwords(weights, prepared.feat, prepared.offsets)
        ),
        "epoch_sgd": timed(
            lambda: kernels.epoch_sgd(
                weights.copy(), prepared.feat, prepared.offsets, prepared.labels,
                prepared.mask, prepared.par_offsets, order, 8, 1.0,
            )
        ),
        "aggregate_words": timed(
            lambda: kernels.aggregate_words(probs, word_idx, n_words)
        ),
        "decode_constrained": timed(
            lambda: kernels.decode_constrained(scores, legal, 0.98, start_row)
        ),
    }
    return results


KERNELS = ("score_subwords", "epoch_sgd", "aggregate_words", "decode_constrained")


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--paragraphs", type=int, default=2000)
    parser.add_argument("--repeats", type=int, default=3)
    parser.add_argument("--child", action="store_true", help=argparse.SUPPRESS)
    args = parser.parse_args()

    if args.child:
        print(json.dumps(run_workload(args.paragraphs, args.repeats)))
        return 0

    rows = {}
    for backend in ("numba", "numpy"):
        env = dict(os.environ, SCINER_BACKEND=backend)
        out = subprocess.run(
            [sys.executable, __file__, "--child",
             "--paragraphs", str(args.paragraphs), "--repeats", str(args.repeats)],
            env=env, capture_output=True, text=True,
        )
        if out.returncode != 0:
            print(f"{backend} backend failed:\n{out.stderr}", file=sys.stderr)
            continue
        rows[backend] = json.loads(out.stdout.strip().splitlines()[-1])

    if not rows:
        return 1
    any_row = next(iter(rows.values()))
    print(f"workload: {args.paragraphs} paragraphs, {any_row['n_subwords']} subwords, "
          f"best of {args.repeats}")
    print(f"{'kernel':<20}" + "".join(f"{b:<14}" for b in rows))
    for kernel in KERNELS:
        cells = "".join(f"{rows[b][kernel] * 1000:>9.1f} ms  " for b in rows)
        print(f"{kernel:<20}{cells}")
    if {"numba", "numpy"} <= rows.keys():
        print(f"{'speedup (numpy/numba)':<20}")
        for kernel in KERNELS:
            ratio = rows["numpy"][kernel] / rows["numba"][kernel]
            print(f"  {kernel:<20}{ratio:>6.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
