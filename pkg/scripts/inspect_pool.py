"""Decode diagnostics for a pretrained pool.

For every model in a pool directory, print teacher-forced CE, decode
validity, decoded-equation MSE, and the distribution of distinct decoded
strings over a corpus. The distinct-string table is the quick check for
mode collapse: a healthy pool decodes different inputs to different
equations, a collapsed one prints a single row per model.

Example:
    python3 scripts/inspect_pool.py runs/exp0/pool --corpus evolve_20.jsonl
"""
from __future__ import annotations

import argparse
import sys
from collections import Counter
from dataclasses import replace

from evosr import config as cf
from evosr import datagen as dg
from evosr import expressions as ex
from evosr import metrics as mt
from evosr import model as md
from evosr import pretraining as pt


def parse_args(argv=None) -> argparse.Namespace:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("pool", help="pool directory (with manifest.json)")
    p.add_argument("--corpus", help="corpus JSONL (default: evolve corpus "
                                    "derived from the preset/seed)")
    p.add_argument("--preset", default="desk", choices=cf.PRESET_NAMES)
    p.add_argument("--seed", type=int, default=0)
    return p.parse_args(argv)


def decode_string(g: md.NetworkGenome, pair: dg.DataEquationPair) -> str:
    """Greedy decode rendered as pre-order text, or '<invalid>'."""
    seq = md.decode_greedy(g, pair.xs, pair.ys)
    try:
        return ex.render_preorder(ex.detokenize(seq))
    except ex.ExpressionError:
        return "<invalid>"


def main(argv=None) -> int:
    args = parse_args(argv)
    if args.corpus:
        corpus = dg.load_corpus(args.corpus)
    else:
        cfg = cf.preset_config(args.preset)
        cfg = replace(cfg, seeds=(args.seed,))
        corpus = dg.build_corpus(seed=cfg.evolve_corpus_seed, kind="evolve",
                                 size=cfg.corpus.evolve_size)
    pool = pt.load_pool(args.pool)
    n = len(corpus.pairs)
    print(f"{len(pool)} models, {n} pairs")

    for i, g in enumerate(pool):
        rec = mt.evaluate_individual(g, corpus)
        decodes = Counter(decode_string(g, p) for p in corpus.pairs)
        valid = n - decodes.get("<invalid>", 0)
        mse = "-" if rec.mse is None else f"{rec.mse:.4f}"
        print(f"model {i}: ce={rec.ce:.4f} valid={valid}/{n} "
              f"uniq={len(decodes)} mse={mse}")
        for text, count in decodes.most_common():
            print(f"    {count:3d}  {text}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
