"""Population evolution of network genomes against dual objectives.

Selection is modular: when any member fails to decode valid equations the
population falls back to a CE-only sort (MODE A); otherwise a pairwise
tournament removes Pareto-dominated members until parent_count remain
(MODE B), with a crowding truncation guard for fronts wider than the parent
budget. Variation is layer-wise: whole weight layers get uniform
perturbations or positional mixing from a second parent, and bias terms are
never touched.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import datagen as dg
from . import metrics as mt
from . import model as md
from . import pretraining as pt

HISTORY_NAME = "history.csv"
FRONT_NAME = "front.csv"
BEST_NAME = "best.ckpt"
MANIFEST_NAME = "manifest.json"
RESUME_DIR = "resume"
TRIAL_FORMAT_VERSION = 1

HISTORY_HEADER = "generation,best_ce,best_mse,valid_fraction"
FRONT_HEADER = "ce,mse,trial,age"


@dataclass
class Individual:
    genome: md.NetworkGenome
    fitness: mt.FitnessRecord | None = None
    age: int = 0


@dataclass
class Population:
    members: list[Individual]
    generation: int
    parent_count: int
    size: int

    def __post_init__(self):
        if self.size != 2 * self.parent_count:
            raise ValueError("population size must be 2 * parent_count")


@dataclass
class EvolveConfig:
    generations: int = 200
    population_size: int = 8
    parent_count: int = 4
    mutation_rate: float = 0.5
    crossover_rate: float = 0.5
    mutation_range: float = 0.01
    seed: int = 0
    checkpoint_every: int = 50  # 0 disables resume checkpoints

    def __post_init__(self):
        if self.population_size != 2 * self.parent_count:
            raise ValueError("population_size must be 2 * parent_count")
        if not (0.0 <= self.mutation_rate <= 1.0 and 0.0 <= self.crossover_rate <= 1.0):
            raise ValueError("rates must be in [0, 1]")
        if self.mutation_range <= 0.0:
            raise ValueError("mutation_range must be positive")
        if self.generations < 1:
            raise ValueError("generations must be >= 1")

    def to_dict(self) -> dict:
        return {
            "generations": self.generations,
            "population_size": self.population_size,
            "parent_count": self.parent_count,
            "mutation_rate": self.mutation_rate,
            "crossover_rate": self.crossover_rate,
            "mutation_range": self.mutation_range,
            "seed": self.seed,
            "checkpoint_every": self.checkpoint_every,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvolveConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown EvolveConfig keys: {sorted(unknown)}")
        return cls(**d)


def dominates(a: mt.FitnessRecord, b: mt.FitnessRecord) -> bool:
    """a is no worse on both objectives and strictly better on one."""
    return (a.ce <= b.ce and a.mse <= b.mse
            and (a.ce < b.ce or a.mse < b.mse))


def select(pop: Population, rng: np.random.Generator) -> Population:
    """Reduce to parent_count members; all members must be evaluated.

    MODE A (any invalid member): ascending CE sort, ties broken by lower age
    then stable order. MODE B (all valid): uniform pairwise tournaments that
    remove the dominated member; exact objective ties remove the elder. If
    size^2 consecutive draws remove nobody, the survivors are truncated by
    CE-axis crowding (keep the extremes, fill by largest gap).
    """
    if any(m.fitness is None for m in pop.members):
        raise ValueError("select requires an evaluated population")
    k = pop.parent_count
    if any(not m.fitness.valid for m in pop.members):
        order = sorted(range(len(pop.members)),
                       key=lambda i: (pop.members[i].fitness.ce, pop.members[i].age, i))
        chosen = [pop.members[i] for i in order[:k]]
        return replace(pop, members=chosen)
    members = list(pop.members)
    stall = 0
    limit = pop.size ** 2
    while len(members) > k:
        i = int(rng.integers(len(members)))
        j = int(rng.integers(len(members) - 1))
        if j >= i:
            j += 1
        a, b = members[i], members[j]
        if dominates(a.fitness, b.fitness):
            members.pop(j)
            stall = 0
        elif dominates(b.fitness, a.fitness):
            members.pop(i)
            stall = 0
        elif a.fitness.ce == b.fitness.ce and a.fitness.mse == b.fitness.mse:
            # Exact tie: the younger survives; equal ages drop the later slot.
            if a.age > b.age:
                members.pop(i)
            elif b.age > a.age:
                members.pop(j)
            else:
                members.pop(max(i, j))
            stall = 0
        else:
            stall += 1
            if stall >= limit:
                members = _crowding_truncate(members, k)
                break
    return replace(pop, members=members)


def _crowding_truncate(members: list[Individual], k: int) -> list[Individual]:
    """Keep k members spread along the CE axis: both extremes, then repeatedly
    the point with the largest CE gap to its nearest kept neighbor."""
    order = sorted(range(len(members)),
                   key=lambda i: (members[i].fitness.ce, members[i].fitness.mse,
                                  members[i].age, i))
    if k <= 1:
        keep_sorted = [0]
    else:
        kept = [0, len(order) - 1]
        while len(kept) < k:
            best_gap, best_pos = -1.0, None
            kept_ces = [members[order[p]].fitness.ce for p in kept]
            for pos in range(len(order)):
                if pos in kept:
                    continue
                ce = members[order[pos]].fitness.ce
                gap = min(abs(ce - kc) for kc in kept_ces)
                if gap > best_gap:
                    best_gap, best_pos = gap, pos
            kept.append(best_pos)
        keep_sorted = sorted(kept)
    picked = {order[p] for p in keep_sorted}
    return [m for i, m in enumerate(members) if i in picked]


def _build_genome(base: md.NetworkGenome, weights: list[np.ndarray]) -> md.NetworkGenome:
    frozen = []
    for w in weights:
        arr = np.asarray(w, dtype=np.float64)
        if arr.flags.writeable:
            arr = arr.copy()
            arr.flags.writeable = False
        frozen.append(arr)
    return md.NetworkGenome(config=base.config, names=base.names,
                            weights=tuple(frozen), biases=base.biases)


def mutate(g: md.NetworkGenome, rng: np.random.Generator,
           rate: float, mutation_range: float) -> md.NetworkGenome:
    """Each weight layer is independently selected with probability rate; in a
    selected layer EVERY weight gets an independent uniform perturbation in
    [-mutation_range, +mutation_range]. Biases are left as-is."""
    weights = []
    for w in g.weights:
        if rng.random() < rate:
            weights.append(w + rng.uniform(-mutation_range, mutation_range, size=w.shape))
        else:
            weights.append(w)
    return _build_genome(g, weights)


def crossover(a: md.NetworkGenome, b: md.NetworkGenome,
              rng: np.random.Generator, rate: float) -> md.NetworkGenome:
    """Child of a; each selected layer gets exactly floor(n/2) uniformly chosen
    weight positions overwritten with b's values. Biases come from a."""
    if a.config != b.config or a.names != b.names:
        raise md.ConfigMismatch("crossover requires layer-aligned genomes")
    weights = []
    for wa, wb in zip(a.weights, b.weights):
        if rng.random() < rate:
            n = wa.size
            take = rng.choice(n, size=n // 2, replace=False)
            flat = wa.reshape(-1).copy()
            flat[take] = wb.reshape(-1)[take]
            weights.append(flat.reshape(wa.shape))
        else:
            weights.append(wa)
    return _build_genome(a, weights)


def make_children(parents: Sequence[Individual], rng: np.random.Generator,
                  cfg: EvolveConfig) -> list[Individual]:
    """parent_count children: crossover from two distinct parents, then
    mutation; children start at age 0, unevaluated."""
    if len(parents) != cfg.parent_count:
        raise ValueError(f"expected {cfg.parent_count} parents, got {len(parents)}")
    children = []
    for _ in range(cfg.parent_count):
        i = int(rng.integers(len(parents)))
        genome = parents[i].genome
        if len(parents) > 1:
            j = int(rng.integers(len(parents) - 1))
            if j >= i:
                j += 1
            genome = crossover(genome, parents[j].genome, rng, cfg.crossover_rate)
        genome = mutate(genome, rng, cfg.mutation_rate, cfg.mutation_range)
        children.append(Individual(genome=genome, fitness=None, age=0))
    return children


def evaluate_population(pop: Population, corpus: dg.Corpus) -> None:
    """Fill in fitness for unevaluated members, in member order."""
    for m in pop.members:
        if m.fitness is None:
            m.fitness = mt.evaluate_individual(m.genome, corpus)


def step(pop: Population, corpus: dg.Corpus, rng: np.random.Generator,
         cfg: EvolveConfig) -> Population:
    """One generation: evaluate, select parents, breed, merge, age."""
    evaluate_population(pop, corpus)
    parents = select(pop, rng)
    children = make_children(parents.members, rng, cfg)
    for m in parents.members:
        m.age += 1
    merged = parents.members + children
    out = Population(members=merged, generation=pop.generation + 1,
                     parent_count=pop.parent_count, size=pop.size)
    evaluate_population(out, corpus)
    return out


@dataclass(frozen=True)
class ParetoPoint:
    ce: float
    mse: float
    age: int = 0
    trial: int = 0


@dataclass(frozen=True)
class ParetoFront:
    points: tuple[ParetoPoint, ...]


def _point_dominates(a: ParetoPoint, b: ParetoPoint) -> bool:
    return (a.ce <= b.ce and a.mse <= b.mse
            and (a.ce < b.ce or a.mse < b.mse))


def pareto_front(members: Sequence[Individual], trial: int = 0) -> ParetoFront:
    """Non-dominated subset of the valid members, sorted by (ce, mse)."""
    pts = [ParetoPoint(ce=m.fitness.ce, mse=m.fitness.mse, age=m.age, trial=trial)
           for m in members if m.fitness is not None and m.fitness.valid]
    keep = [p for p in pts if not any(_point_dominates(q, p) for q in pts)]
    return ParetoFront(points=tuple(sorted(keep, key=lambda p: (p.ce, p.mse, p.age))))


def meta_front(fronts: Sequence[ParetoFront]) -> ParetoFront:
    """Non-dominated subset of the union of several fronts' points."""
    pts = [p for f in fronts for p in f.points]
    keep = [p for p in pts if not any(_point_dominates(q, p) for q in pts)]
    return ParetoFront(points=tuple(sorted(keep, key=lambda p: (p.ce, p.mse, p.trial, p.age))))


@dataclass(frozen=True)
class GenerationRow:
    generation: int
    best_ce: float
    best_mse: float | None
    valid_fraction: float


@dataclass
class TrialResult:
    history: list[GenerationRow]
    front: ParetoFront
    trial: int
    seed: int


def _history_row(pop: Population) -> GenerationRow:
    fits = [m.fitness for m in pop.members]
    best_ce = min(f.ce for f in fits)
    valid = [f.mse for f in fits if f.valid]
    return GenerationRow(
        generation=pop.generation,
        best_ce=best_ce,
        best_mse=min(valid) if valid else None,
        valid_fraction=sum(1 for f in fits if f.valid) / len(fits),
    )


def _write_history(path: Path, rows: Sequence[GenerationRow]) -> None:
    lines = [HISTORY_HEADER]
    for r in rows:
        mse = "" if r.best_mse is None else repr(r.best_mse)
        lines.append(f"{r.generation},{r.best_ce!r},{mse},{r.valid_fraction!r}")
    path.write_text("\n".join(lines) + "\n")


def write_front_csv(path: Path, front: ParetoFront) -> None:
    lines = [FRONT_HEADER]
    for p in front.points:
        lines.append(f"{p.ce!r},{p.mse!r},{p.trial},{p.age}")
    path.write_text("\n".join(lines) + "\n")


def read_history(path: Path) -> list[GenerationRow]:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != HISTORY_HEADER:
        raise ValueError(f"{path}: bad history header")
    rows = []
    for ln in lines[1:]:
        gen, ce, mse, vf = ln.split(",")
        rows.append(GenerationRow(generation=int(gen), best_ce=float(ce),
                                  best_mse=float(mse) if mse else None,
                                  valid_fraction=float(vf)))
    return rows


def read_front(path: Path) -> ParetoFront:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != FRONT_HEADER:
        raise ValueError(f"{path}: bad front header")
    pts = []
    for ln in lines[1:]:
        ce, mse, trial, age = ln.split(",")
        pts.append(ParetoPoint(ce=float(ce), mse=float(mse),
                               trial=int(trial), age=int(age)))
    return ParetoFront(points=tuple(pts))


def _save_state(out_dir: Path, cfg: EvolveConfig, pop: Population,
                rng: np.random.Generator, rows: list[GenerationRow]) -> None:
    resume = out_dir / RESUME_DIR
    resume.mkdir(parents=True, exist_ok=True)
    for i, m in enumerate(pop.members):
        md.save_genome(m.genome, resume / f"member_{i:02d}.ckpt")
    state = {
        "format_version": TRIAL_FORMAT_VERSION,
        "config": cfg.to_dict(),
        "generation": pop.generation,
        "rng_state": rng.bit_generator.state,
        "members": [
            {"age": m.age,
             "fitness": None if m.fitness is None else {
                 "ce": m.fitness.ce, "mse": m.fitness.mse, "valid": m.fitness.valid}}
            for m in pop.members
        ],
        "history": [
            {"generation": r.generation, "best_ce": r.best_ce,
             "best_mse": r.best_mse, "valid_fraction": r.valid_fraction}
            for r in rows
        ],
    }
    (resume / "state.json").write_text(json.dumps(state, sort_keys=True))


def _load_state(out_dir: Path, cfg: EvolveConfig):
    resume = out_dir / RESUME_DIR
    state_path = resume / "state.json"
    if not state_path.exists():
        return None
    state = json.loads(state_path.read_text())
    if state.get("config") != cfg.to_dict():
        raise ValueError(f"{state_path}: resume state was written by a "
                         f"different config")
    members = []
    for i, ms in enumerate(state["members"]):
        genome = md.load_genome(resume / f"member_{i:02d}.ckpt")
        fit = ms["fitness"]
        members.append(Individual(
            genome=genome,
            fitness=None if fit is None else mt.FitnessRecord(
                ce=fit["ce"], mse=fit["mse"], valid=fit["valid"]),
            age=ms["age"]))
    pop = Population(members=members, generation=state["generation"],
                     parent_count=cfg.parent_count, size=cfg.population_size)
    rng = np.random.default_rng(0)
    rng.bit_generator.state = state["rng_state"]
    rows = [GenerationRow(generation=r["generation"], best_ce=r["best_ce"],
                          best_mse=r["best_mse"], valid_fraction=r["valid_fraction"])
            for r in state["history"]]
    return pop, rng, rows


def run_trial(cfg: EvolveConfig, pool: Sequence[md.NetworkGenome],
              corpus: dg.Corpus, out_dir, trial: int = 0) -> TrialResult:
    """One full evolution run: generation 0 is the evaluated initial
    population, followed by generations-1 steps. Writes history.csv,
    front.csv, best.ckpt (final lowest-CE genome) and manifest.json; resumes
    from the last state checkpoint when one is present."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()

    resumed = _load_state(out_dir, cfg)
    if resumed is not None:
        pop, rng, rows = resumed
    else:
        rng = np.random.default_rng(np.random.SeedSequence(entropy=(cfg.seed, trial)))
        genomes = pt.seed_population(list(pool), cfg.population_size, rng)
        pop = Population(members=[Individual(genome=g) for g in genomes],
                         generation=0, parent_count=cfg.parent_count,
                         size=cfg.population_size)
        evaluate_population(pop, corpus)
        rows = [_history_row(pop)]

    while pop.generation < cfg.generations - 1:
        pop = step(pop, corpus, rng, cfg)
        rows.append(_history_row(pop))
        if cfg.checkpoint_every and pop.generation % cfg.checkpoint_every == 0 \
                and pop.generation < cfg.generations - 1:
            _save_state(out_dir, cfg, pop, rng, rows)

    front = pareto_front(pop.members, trial=trial)
    best = min(pop.members, key=lambda m: m.fitness.ce)
    md.save_genome(best.genome, out_dir / BEST_NAME,
                   sidecar={"trial": trial, "seed": cfg.seed,
                            "generation": pop.generation,
                            "ce": best.fitness.ce, "mse": best.fitness.mse,
                            "valid": best.fitness.valid})
    resume_dir = out_dir / RESUME_DIR
    if resume_dir.exists():
        for child in resume_dir.iterdir():
            child.unlink()
        resume_dir.rmdir()
    _write_history(out_dir / HISTORY_NAME, rows)
    write_front_csv(out_dir / FRONT_NAME, front)
    manifest = {
        "format_version": TRIAL_FORMAT_VERSION,
        "config": cfg.to_dict(),
        "trial": trial,
        "seed": cfg.seed,
        "corpus_seed": corpus.seed,
        "corpus_kind": corpus.kind,
        "generations_recorded": len(rows),
        "wall_seconds": time.perf_counter() - t0,
    }
    (out_dir / MANIFEST_NAME).write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")
    return TrialResult(history=rows, front=front, trial=trial, seed=cfg.seed)
