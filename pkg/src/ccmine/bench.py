"""Mining throughput benchmark.

Generates a synthetic caption corpus and measures the single-core rate of
the full mining path: JSON record parsing, whole-token concept matching,
occurrence counting, and pair counting.  The nominal target is 100k
captions/second/core against a 4k-concept lexicon; CI treats anything
above half that rate as passing to absorb machine variance.

Run directly with ``python -m ccmine.bench``.
"""

from __future__ import annotations

import argparse
import json
import random
import string
import time

from .cooc import build_cooc
from .corpus import Lexicon, ScanStats, scan_corpus

NOMINAL_RATE = 100_000.0  # captions per second per core
CI_FLOOR_FRACTION = 0.5


def synthesize(
    captions: int = 100_000, lexicon_size: int = 4_000, seed: int = 7
) -> tuple[list[str], Lexicon]:
    """Deterministic corpus lines and lexicon for benchmarking.

    Every tenth concept is a two-word phrase so the multi-token matching
    path is exercised.  Caption text mixes lexicon words with filler.
    """
    rng = random.Random(seed)
    words: list[str] = []
    seen = set()
    while len(words) < lexicon_size + 1:
        w = "".join(rng.choices(string.ascii_lowercase, k=rng.randint(3, 9)))
        if w not in seen:
            seen.add(w)
            words.append(w)
    concepts = []
    for i in range(lexicon_size):
        if i % 10 == 0:
            concepts.append(words[i] + " " + words[i + 1])
        else:
            concepts.append(words[i])
    lexicon = Lexicon(concepts)
    filler = ["the", "a", "of", "on", "in", "and", "with", "near", "over", "under"]
    vocab = words + filler * (len(words) // len(filler))
    lines = [
        json.dumps({"id": str(i), "text": " ".join(rng.choices(vocab, k=12))})
        for i in range(captions)
    ]
    return lines, lexicon


def run(captions: int = 100_000, lexicon_size: int = 4_000, seed: int = 7) -> dict:
    """Time the mining path over an in-memory corpus; returns rate stats."""
    lines, lexicon = synthesize(captions, lexicon_size, seed)
    lexicon.matcher  # build lookup tables outside the timed region
    stats = ScanStats()
    start = time.perf_counter()
    matrix = build_cooc(scan_corpus(lines, lexicon, stats), dim=len(lexicon))
    elapsed = time.perf_counter() - start
    return {
        "captions": captions,
        "lexicon_size": lexicon_size,
        "seconds": elapsed,
        "captions_per_second": captions / elapsed,
        "nominal_rate": NOMINAL_RATE,
        "pairs": len(matrix.pairs),
        "matched_captions": stats.matched_captions,
    }


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--captions", type=int, default=100_000)
    parser.add_argument("--lexicon-size", type=int, default=4_000)
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args(argv)
    report = run(args.captions, args.lexicon_size, args.seed)
    print(json.dumps(report, indent=2))
    rate = report["captions_per_second"]
    print(f"rate: {rate:,.0f} captions/s (target {NOMINAL_RATE:,.0f})")
    return 0 if rate >= NOMINAL_RATE * CI_FLOOR_FRACTION else 1


if __name__ == "__main__":
    raise SystemExit(main())
