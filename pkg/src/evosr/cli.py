"""Command-line orchestration: gen-data, pretrain, evolve, test, report.

Every verb resolves a RunConfig (preset + optional JSON config + flags),
echoes it into the output manifests, and exits nonzero with a message on
any module error. Evolution trials run in a process pool; per-trial
outputs are independent directories, so worker count never affects file
contents.
"""
from __future__ import annotations

import argparse
import json
import multiprocessing
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

from . import config as cf
from . import datagen as dg
from . import evolution as ev
from . import metrics as mt
from . import model as md
from . import pretraining as pt
from . import reporting as rp

RUN_MANIFEST_VERSION = 1


def _resolve_config(args) -> cf.RunConfig:
    if getattr(args, "config", None):
        cfg = cf.load_run_config(args.config)
        if args.preset and args.preset != cfg.preset:
            raise cf.ConfigError(
                f"--preset {args.preset} conflicts with config file preset "
                f"{cfg.preset!r}")
    else:
        cfg = cf.preset_config(args.preset or "desk")
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seeds=(args.seed,),
                      pretrain=replace(cfg.pretrain, seed=args.seed))
    if getattr(args, "trials", None) is not None:
        base = cfg.seeds[0]
        cfg = replace(cfg, seeds=tuple(base + i for i in range(args.trials)))
    if getattr(args, "out", None):
        cfg = replace(cfg, out_dir=args.out)
    return cfg


def _write_manifest(path: Path, cfg: cf.RunConfig, extra: dict) -> None:
    payload = {"format_version": RUN_MANIFEST_VERSION,
               "config": cfg.to_dict(), **extra}
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(payload, f, indent=1, sort_keys=True)
        f.write("\n")


def cmd_gen_data(args) -> int:
    cfg = _resolve_config(args)
    kind = args.kind
    seed = cfg.base_seed
    if kind == "pretrain":
        seed, size = cfg.pretrain_corpus_seed, cfg.corpus.pretrain_size
    elif kind == "evolve":
        seed, size = cfg.evolve_corpus_seed, cfg.corpus.evolve_size
    else:
        size = 0  # benchmark corpora have fixed contents
    if args.size is not None:
        size = args.size
    corpus = dg.build_corpus(seed=seed, kind=kind, size=size)
    out = Path(args.out) if args.out else Path(f"{kind}_{seed}.jsonl")
    dg.save_corpus(corpus, out)
    print(f"wrote {len(corpus.pairs)} pairs to {out}")
    return 0


def cmd_pretrain(args) -> int:
    cfg = _resolve_config(args)
    out = Path(cfg.out_dir)
    corpus = dg.build_corpus(seed=cfg.pretrain_corpus_seed, kind="pretrain",
                             size=cfg.corpus.pretrain_size)
    workers = args.workers or 1
    t0 = time.perf_counter()
    manifest = pt.pretrain_pool(cfg.pretrain, corpus, out / "pool",
                                workers=workers)
    _write_manifest(out / "pretrain_manifest.json", cfg, {
        "pool_dir": "pool",
        "n_ok": manifest["n_ok"],
        "wall_seconds": time.perf_counter() - t0,
    })
    print(f"pool: {manifest['n_ok']}/{cfg.pretrain.n_models} models ok "
          f"in {out / 'pool'}")
    return 0


def _trial_job(packed) -> int:
    evolve_cfg, pool_dir, corpus_seed, corpus_size, out_dir, trial = packed
    pool = pt.load_pool(pool_dir)
    corpus = dg.build_corpus(seed=corpus_seed, kind="evolve", size=corpus_size)
    ev.run_trial(evolve_cfg, pool, corpus, out_dir, trial=trial)
    return trial


def cmd_evolve(args) -> int:
    cfg = _resolve_config(args)
    out = Path(cfg.out_dir)
    pool_dir = Path(args.pool) if args.pool else out / "pool"
    if not (pool_dir / pt.MANIFEST_NAME).exists():
        raise FileNotFoundError(f"no pretrained pool at {pool_dir}; run "
                                f"`evosr pretrain` first or pass --pool")
    jobs = []
    for i, seed in enumerate(cfg.seeds):
        trial_cfg = replace(cfg.evolve, seed=seed)
        jobs.append((trial_cfg, str(pool_dir), cfg.evolve_corpus_seed,
                     cfg.corpus.evolve_size, str(out / f"trial_{i:03d}"), i))
    workers = args.workers or min(len(jobs), os.cpu_count() or 1)
    t0 = time.perf_counter()
    if workers <= 1:
        for job in jobs:
            _trial_job(job)
    else:
        with multiprocessing.Pool(workers) as p:
            p.map(_trial_job, jobs)
    _write_manifest(out / "evolve_manifest.json", cfg, {
        "trials": len(jobs),
        "trial_dirs": [f"trial_{i:03d}" for i in range(len(jobs))],
        "workers": workers,
        "wall_seconds": time.perf_counter() - t0,
    })
    print(f"{len(jobs)} trials in {out}")
    return 0


def cmd_test(args) -> int:
    cfg = _resolve_config(args)
    out = Path(cfg.out_dir) / "test"
    genome = md.load_genome(args.checkpoint)
    records = {}
    for kind in ("test", "unseen-test"):
        corpus = dg.build_corpus(seed=cfg.base_seed, kind=kind, size=0)
        label = "benchmark" if kind == "test" else "unseen"
        records[label] = mt.benchmark_individual(genome, corpus)
    rows = rp.write_benchmark_report(records, out)
    _write_manifest(out / "test_manifest.json", cfg, {
        "checkpoint": str(args.checkpoint),
        "labels": sorted(records),
    })
    for r in rows:
        print(f"{r.label}: pairs={r.n_pairs} decoded={r.n_decoded} "
              f"ce_mean={r.ce_mean:.4f} ted_mean={r.ted_mean} "
              f"nmse_median={r.nmse_median} "
              f"one_minus_r2_median={r.one_minus_r2_median} "
              f"seconds_mean={r.seconds_mean:.4f}")
    return 0


def cmd_report(args) -> int:
    cfg = _resolve_config(args)
    runs = Path(args.runs) if args.runs else Path(cfg.out_dir)
    trial_dirs = sorted(d for d in runs.glob("trial_*") if d.is_dir())
    if not trial_dirs:
        raise FileNotFoundError(f"no trial_* directories under {runs}")
    trials = [rp.load_trial_dir(d, trial=i) for i, d in enumerate(trial_dirs)]
    out = Path(args.out) if args.out else runs / "report"
    payload = rp.write_report_bundle(trials, out)
    _write_manifest(out / "report_manifest.json", cfg, {
        "runs_dir": str(runs),
        "n_trials": len(trials),
    })
    for comp in payload["comparisons"]:
        if "p" in comp:
            print(f"{comp['label']}: U={comp['u']} p={comp['p']:.4g} "
                  f"(bonferroni {comp['p_bonferroni']:.4g})")
        else:
            print(f"{comp['label']}: {comp['insufficient_data']}")
    print(f"report in {out}")
    return 0


def _add_common(p: argparse.ArgumentParser, out_default: bool = True) -> None:
    p.add_argument("--config", help="JSON run config path")
    p.add_argument("--preset", choices=cf.PRESET_NAMES,
                   help="scale preset (default desk)")
    p.add_argument("--seed", type=int, help="base seed override")
    if out_default:
        p.add_argument("--out", help="output directory override")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="evosr",
        description="Generate equation corpora, pretrain data-to-equation "
                    "models, evolve them against CE/MSE objectives, and "
                    "report results.")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("gen-data", help="write a corpus file")
    _add_common(p)
    p.add_argument("--kind", choices=dg.CORPUS_KINDS, default="pretrain")
    p.add_argument("--size", type=int, help="pair count (generated kinds)")
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("pretrain", help="train a model pool")
    _add_common(p)
    p.add_argument("--workers", type=int,
                   help="process count (1 = single-threaded)")
    p.set_defaults(fn=cmd_pretrain)

    p = sub.add_parser("evolve", help="run evolution trials")
    _add_common(p)
    p.add_argument("--trials", type=int, help="number of trials")
    p.add_argument("--pool", help="pretrained pool directory")
    p.add_argument("--workers", type=int,
                   help="process count (1 = single-threaded)")
    p.set_defaults(fn=cmd_evolve)

    p = sub.add_parser("test", help="benchmark a checkpoint")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(fn=cmd_test)

    p = sub.add_parser("report", help="aggregate trial outputs")
    _add_common(p)
    p.add_argument("--runs", help="directory containing trial_* outputs")
    p.set_defaults(fn=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (cf.ConfigError, ValueError, ArithmeticError, KeyError,
            OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
