"""Symbolic-CE pretraining of genomes and the shared pool that seeds evolution.

Training is plain minibatch SGD with global-norm gradient clipping; the loss
is teacher-forced cross-entropy only (no numeric comparison anywhere here).
Pool members differ only by derived sub-seeds and are persisted as
checkpoints plus a deterministic manifest; wall times go to a separate
timings file so the manifest stays bitwise-reproducible.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import datagen as dg
from . import expressions as ex
from . import model as md

MANIFEST_NAME = "pool_manifest.json"
TIMINGS_NAME = "timings.json"
MANIFEST_VERSION = 1


class DivergenceDetected(RuntimeError):
    """Training loss or gradient left the finite range."""

    def __init__(self, msg: str, history: list[float]):
        super().__init__(msg)
        self.history = history


class EmptyPool(RuntimeError):
    pass


@dataclass
class PretrainConfig:
    epochs: int = 40
    corpus_size: int = 200
    n_models: int = 3
    lr: float = 0.01
    batch: int = 16
    grad_clip: float = 1.0
    seed: int = 0
    model: md.ModelConfig = field(default_factory=md.ModelConfig)

    def __post_init__(self):
        if min(self.epochs, self.corpus_size, self.n_models, self.batch) < 1:
            raise ValueError("epochs, corpus_size, n_models, batch must be >= 1")
        if not 0.0 <= self.lr < 1.0:
            raise ValueError("lr must be in [0, 1)")
        if self.grad_clip <= 0.0:
            raise ValueError("grad_clip must be positive")

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "corpus_size": self.corpus_size,
            "n_models": self.n_models,
            "lr": self.lr,
            "batch": self.batch,
            "grad_clip": self.grad_clip,
            "seed": self.seed,
            "model": self.model.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PretrainConfig":
        allowed = set(cls.__dataclass_fields__)
        unknown = set(d) - allowed
        if unknown:
            raise ValueError(f"unknown PretrainConfig keys: {sorted(unknown)}")
        d = dict(d)
        if "model" in d:
            d["model"] = md.ModelConfig.from_dict(d["model"])
        return cls(**d)


def _flat_params(params: dict, cfg: md.ModelConfig) -> list[ad.Tensor]:
    flat = []
    for spec in md.layer_specs(cfg):
        w, b = params[spec.name]
        flat.append(w)
        if b is not None:
            flat.append(b)
    return flat


def _rebuild(params: dict, cfg: md.ModelConfig, flat: list[ad.Tensor]) -> dict:
    out = {}
    i = 0
    for spec in md.layer_specs(cfg):
        w = flat[i]
        i += 1
        b = None
        if spec.b_shape is not None:
            b = flat[i]
            i += 1
        out[spec.name] = (w, b)
    return out


def pretrain_one(cfg: PretrainConfig, corpus: dg.Corpus,
                 seed=None) -> tuple[md.NetworkGenome, list[float]]:
    """Train one genome; returns (genome, per-epoch mean training CE).

    Deterministic under (cfg, corpus, seed): the rng drives init, batch
    shuffling, and dropout in a fixed draw order.
    """
    if corpus.kind != "pretrain":
        raise ValueError(f"expected a pretrain corpus, got kind={corpus.kind!r}")
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    params = md.tensorize(md.init_genome(cfg.model, rng), requires_grad=True)
    history: list[float] = []
    n = len(corpus.pairs)
    try:
        for _ in range(cfg.epochs):
            order = rng.permutation(n)
            epoch_sum = 0.0
            for lo in range(0, n, cfg.batch):
                batch = order[lo:lo + cfg.batch]
                loss = None
                for idx in batch:
                    pair = corpus.pairs[int(idx)]
                    logits = md.forward_logits_params(
                        params, cfg.model, pair.xs, pair.ys, pair.tokens,
                        training=True, rng=rng)
                    ce = ad.cross_entropy_loss(logits, pair.tokens, pad_id=ex.PAD)
                    loss = ce if loss is None else ad.add(loss, ce)
                loss = ad.scale(loss, 1.0 / len(batch))
                epoch_sum += loss.item() * len(batch)
                ad.backward(loss)
                flat = _flat_params(params, cfg.model)
                ad.clip_grad_norm(flat, cfg.grad_clip)
                params = _rebuild(params, cfg.model, ad.sgd_step(flat, cfg.lr))
            history.append(epoch_sum / n)
    except (ad.NonFiniteValue, ad.NonFiniteGradient) as e:
        raise DivergenceDetected(str(e), history) from e
    return md.genome_from_params(cfg.model, params), history


def _checkpoint_path(out_dir: Path, index: int) -> Path:
    return out_dir / f"model_{index:03d}.ckpt"


def _train_job(packed):
    """Worker entry: rebuild the corpus locally, train one model.

    Returns (index, genome | None, history, seconds). Corpus descriptors
    travel instead of pair objects to keep pickling cheap.
    """
    cfg_dict, corpus_desc, index = packed
    cfg = PretrainConfig.from_dict(cfg_dict)
    corpus = dg.build_corpus(seed=corpus_desc["seed"], kind=corpus_desc["kind"],
                             size=corpus_desc["size"],
                             params=dg.GenParams.from_dict(corpus_desc["params"]))
    seed_seq = np.random.SeedSequence(entropy=(cfg.seed, index))
    t0 = time.perf_counter()
    try:
        genome, history = pretrain_one(cfg, corpus, seed=seed_seq)
    except DivergenceDetected as e:
        return index, None, e.history, time.perf_counter() - t0
    return index, genome, history, time.perf_counter() - t0


def pretrain_pool(cfg: PretrainConfig, corpus: dg.Corpus, out_dir,
                  workers: int = 1) -> dict:
    """Train cfg.n_models genomes on derived sub-seeds; persist checkpoints
    plus a manifest. Reruns skip models already marked ok on disk; diverged
    models are recorded and skipped thereafter (pool keeps the survivors).

    ``workers`` > 1 trains models in separate processes; per-model results
    are seeded independently, so the outputs are identical either way.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest_path = out_dir / MANIFEST_NAME
    manifest = {
        "format_version": MANIFEST_VERSION,
        "config": cfg.to_dict(),
        "corpus_seed": corpus.seed,
        "models": [],
    }
    prior = {}
    if manifest_path.exists():
        old = json.loads(manifest_path.read_text())
        if old.get("config") != manifest["config"] or old.get("corpus_seed") != corpus.seed:
            raise ValueError(f"{manifest_path}: existing manifest was built "
                             f"from a different config or corpus")
        prior = {m["index"]: m for m in old.get("models", [])}
    reused = {}
    pending = []
    for i in range(cfg.n_models):
        prev = prior.get(i)
        if prev is not None and (
                prev["status"] == "diverged"
                or (prev["status"] == "ok"
                    and _checkpoint_path(out_dir, i).exists())):
            reused[i] = prev
        else:
            pending.append(i)

    corpus_desc = {"seed": corpus.seed, "kind": corpus.kind,
                   "size": len(corpus.pairs),
                   "params": corpus.params.to_dict()}
    jobs = [(cfg.to_dict(), corpus_desc, i) for i in pending]
    if workers > 1 and len(jobs) > 1:
        import multiprocessing
        with multiprocessing.Pool(min(workers, len(jobs))) as p:
            results = p.map(_train_job, jobs)
    else:
        results = [_train_job(job) for job in jobs]

    timings = {}
    fresh = {}
    for i, genome, history, seconds in results:
        timings[str(i)] = seconds
        if genome is None:
            fresh[i] = {
                "index": i,
                "status": "diverged",
                "seed_entropy": [cfg.seed, i],
                "epochs_completed": len(history),
                "history": history,
            }
            continue
        path = _checkpoint_path(out_dir, i)
        md.save_genome(genome, path, sidecar={
            "seed_entropy": [cfg.seed, i],
            "final_ce": history[-1],
            "epochs": cfg.epochs,
            "corpus_seed": corpus.seed,
        })
        fresh[i] = {
            "index": i,
            "status": "ok",
            "seed_entropy": [cfg.seed, i],
            "checkpoint": path.name,
            "final_ce": history[-1],
            "history": history,
        }
    for i in range(cfg.n_models):
        manifest["models"].append(reused.get(i) or fresh[i])
    ok = sum(1 for m in manifest["models"] if m["status"] == "ok")
    manifest["n_ok"] = ok
    manifest_path.write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")
    if timings:
        (out_dir / TIMINGS_NAME).write_text(
            json.dumps({"pretrain_seconds": timings}, sort_keys=True, indent=1) + "\n")
    return manifest


def load_pool(out_dir) -> list[md.NetworkGenome]:
    """Genomes of every ok model in the manifest, in index order."""
    out_dir = Path(out_dir)
    manifest = json.loads((out_dir / MANIFEST_NAME).read_text())
    pool = []
    for m in manifest["models"]:
        if m["status"] == "ok":
            pool.append(md.load_genome(out_dir / m["checkpoint"]))
    if not pool:
        raise EmptyPool(f"no usable checkpoints under {out_dir}")
    return pool


def seed_population(pool: list[md.NetworkGenome], pop_size: int,
                    rng: np.random.Generator) -> list[md.NetworkGenome]:
    """Each initial genome is drawn uniformly from the pool, with replacement."""
    if not pool:
        raise EmptyPool("cannot seed a population from an empty pool")
    picks = rng.integers(len(pool), size=pop_size)
    return [pool[int(i)] for i in picks]
