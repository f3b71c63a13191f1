"""Rerun evolution trials with lineage tags to trace validity dips.

Every member carries the set of founding pool models its weights descend
from; every child whose decode set is invalid is logged with its
generation and its parents' lineages. The loop consumes the rng stream
exactly as evolution.step does, so a tagged rerun reproduces the plain
trials bit for bit and the logged dips are the same one-generation
validity drops visible in each trial's history.csv.

This is the diagnostic behind the known-red smoothed-validity check in
the acceptance suite: it shows the dips persisting after a population
has collapsed to a single founding ancestor, i.e. they come from
crossover between drifted siblings, not from a weak pool member.

Example:
    python3 scripts/trace_validity_dips.py tests/_acceptance_cache/pool \\
        --seeds 2001 2002 --corpus-seed 3001
"""
from __future__ import annotations

import argparse

import numpy as np

from evosr import config as cf
from evosr import datagen as dg
from evosr import evolution as ev
from evosr import pretraining as pt


def parse_args(argv=None) -> argparse.Namespace:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("pool", help="pool directory (with manifest.json)")
    p.add_argument("--preset", default="desk", choices=cf.PRESET_NAMES)
    p.add_argument("--seeds", type=int, nargs="+",
                   default=list(range(2001, 2011)),
                   help="one trial per seed; trial index follows position")
    p.add_argument("--corpus-seed", type=int, default=3001)
    p.add_argument("--window", type=int, default=10,
                   help="smoothing window for the printed means")
    return p.parse_args(argv)


def crossover_traced(a, b, rng, rate):
    """evolution.crossover with the same rng draws, plus a mixed flag."""
    weights = []
    mixed = False
    for wa, wb in zip(a.weights, b.weights):
        if rng.random() < rate:
            mixed = True
            n = wa.size
            take = rng.choice(n, size=n // 2, replace=False)
            flat = wa.reshape(-1).copy()
            flat[take] = wb.reshape(-1)[take]
            weights.append(flat.reshape(wa.shape))
        else:
            weights.append(wa)
    return ev._build_genome(a, weights), mixed


def run_traced_trial(cfg: ev.EvolveConfig, pool, corpus, trial: int) -> dict:
    """One trial; returns validity series, dip log, and lineage timeline.

    Keep the breeding block in sync with evolution.make_children: the
    draws (partner indices, crossover layer picks, mutation noise) must
    come in the same order or the rerun diverges from run_trial.
    """
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(cfg.seed, trial)))
    genomes = pt.seed_population(list(pool), cfg.population_size, rng)
    roots = [frozenset([next(k for k, p in enumerate(pool)
                             if np.array_equal(p.weights[0], g.weights[0]))])
             for g in genomes]
    pop = ev.Population(members=[ev.Individual(genome=g) for g in genomes],
                        generation=0, parent_count=cfg.parent_count,
                        size=cfg.population_size)
    ev.evaluate_population(pop, corpus)
    lineage = dict(zip(map(id, pop.members), roots))

    validity = [sum(m.fitness.valid for m in pop.members) / len(pop.members)]
    ancestors = [sorted(set().union(*(lineage[id(m)] for m in pop.members)))]
    dips = []

    while pop.generation < cfg.generations - 1:
        parents = ev.select(pop, rng)
        kids, kid_roots = [], []
        for _ in range(cfg.parent_count):
            i = int(rng.integers(len(parents.members)))
            pa = parents.members[i]
            genome, partner, mixed = pa.genome, None, False
            if len(parents.members) > 1:
                j = int(rng.integers(len(parents.members) - 1))
                if j >= i:
                    j += 1
                partner = parents.members[j]
                genome, mixed = crossover_traced(genome, partner.genome, rng,
                                                 cfg.crossover_rate)
            genome = ev.mutate(genome, rng, cfg.mutation_rate,
                               cfg.mutation_range)
            kids.append(ev.Individual(genome=genome, fitness=None, age=0))
            la = lineage[id(pa)]
            kid_roots.append((la | lineage[id(partner)]) if mixed else la)
        for m in parents.members:
            m.age += 1
        pop = ev.Population(members=parents.members + kids,
                            generation=pop.generation + 1,
                            parent_count=pop.parent_count, size=pop.size)
        ev.evaluate_population(pop, corpus)
        lineage = {id(m): lineage[id(m)] for m in parents.members}
        for m, r in zip(kids, kid_roots):
            lineage[id(m)] = r
        validity.append(sum(m.fitness.valid for m in pop.members)
                        / len(pop.members))
        ancestors.append(sorted(set().union(*(lineage[id(m)]
                                              for m in pop.members))))
        for m, r in zip(kids, kid_roots):
            if not m.fitness.valid:
                dips.append((pop.generation, sorted(r)))
    return {"validity": validity, "dips": dips, "ancestors": ancestors}


def main(argv=None) -> int:
    args = parse_args(argv)
    cfg = cf.preset_config(args.preset)
    pool = pt.load_pool(args.pool)
    corpus = dg.build_corpus(seed=args.corpus_seed, kind="evolve",
                             size=cfg.corpus.evolve_size)
    for trial, seed in enumerate(args.seeds):
        ecfg = ev.EvolveConfig(**{**cfg.evolve.to_dict(), "seed": seed})
        r = run_traced_trial(ecfg, pool, corpus, trial)
        w = args.window
        means = [float(np.mean(r["validity"][k:k + w]))
                 for k in range(0, len(r["validity"]), w)]
        drops = sum(b < a for a, b in zip(means, means[1:]))
        single = next((g for g, a in enumerate(r["ancestors"])
                       if len(a) == 1), None)
        print(f"trial {trial} seed {seed}: {len(r['dips'])} invalid children, "
              f"{drops} window drops, single-ancestor from gen "
              f"{single if single is not None else 'never'} "
              f"(final ancestors {r['ancestors'][-1]})")
        for gen, roots in r["dips"]:
            print(f"  gen {gen:3d}: invalid child descends from pool {roots}")
        print("  window means:", " ".join(f"{m:.3f}" for m in means))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
