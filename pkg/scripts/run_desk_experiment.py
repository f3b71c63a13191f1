"""End-to-end desk-scale experiment: pretrain a pool, evolve, report.

Chains the CLI verbs so the artifacts are exactly what `evosr pretrain`,
`evosr evolve`, and `evosr report` produce, then prints the headline
numbers from the report bundle. Rerunning with the same flags reuses
the pretrained pool (checkpoints are keyed by config in the manifest)
and overwrites the trial directories.

Example:
    python3 scripts/run_desk_experiment.py --out runs/exp0 --trials 10
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from evosr import cli


def parse_args(argv=None) -> argparse.Namespace:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="runs/desk-exp", help="run directory")
    p.add_argument("--preset", default="desk", choices=("desk", "paper"))
    p.add_argument("--seed", type=int, default=0, help="base seed")
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--workers", type=int, default=0,
                   help="process count (0 = one per core)")
    p.add_argument("--epochs", type=int, default=None,
                   help="override pretraining epochs")
    p.add_argument("--generations", type=int, default=None,
                   help="override evolution generations")
    return p.parse_args(argv)


def write_config(args: argparse.Namespace) -> Path:
    """Materialize the run config so every stage resolves identically."""
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    raw: dict = {
        "preset": args.preset,
        "seeds": [args.seed + i for i in range(args.trials)],
        "out_dir": str(out),
    }
    overrides: dict = {}
    if args.epochs is not None:
        overrides["pretrain"] = {"epochs": args.epochs}
    if args.generations is not None:
        overrides["evolve"] = {"generations": args.generations}
    if overrides:
        raw["overrides"] = overrides
    path = out / "config.json"
    with open(path, "w") as f:
        json.dump(raw, f, indent=1, sort_keys=True)
        f.write("\n")
    return path


def main(argv=None) -> int:
    args = parse_args(argv)
    cfg_path = write_config(args)
    base = ["--config", str(cfg_path)]
    worker_flag = [] if args.workers <= 0 else ["--workers",
                                                str(args.workers)]

    champion = Path(args.out) / "trial_000" / "best.ckpt"
    for verb, extra in (("pretrain", worker_flag),
                        ("evolve", worker_flag),
                        ("report", []),
                        ("test", ["--checkpoint", str(champion)])):
        print(f"== {verb} ==", flush=True)
        rc = cli.main([verb, *base, *extra])
        if rc != 0:
            return rc

    stats_path = Path(args.out) / "report" / "stats.json"
    stats = json.loads(stats_path.read_text())
    print(f"== summary ({stats['n_trials']} trials) ==")
    for comp in stats["comparisons"]:
        if "p" in comp:
            print(f"  {comp['label']}: p={comp['p']:.4g}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
