"""Run-level configuration: presets, JSON loading, override resolution.

A run config bundles the model/pretraining/evolution settings plus corpus
sizes and per-trial seeds. Two presets exist: ``desk`` (small; roughly an
hour single-core, most of it pretraining the pool) and ``paper`` (the
full-scale constants). Every consumer echoes the resolved config into its
output manifest so a run can be replayed from its artifacts alone.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

from . import evolution as ev
from . import model as md
from . import pretraining as pt

PRESET_NAMES = ("desk", "paper")

# Pretraining epochs are the one free knob per scale. Desk models pass
# through a mode-collapse phase (every input decodes to the corpus-prior
# equation) before input-conditioned decoding emerges, at roughly 1200 to
# beyond 2000 epochs depending on the seed; 2000 gives a pool whose
# strongest members condition on the data while staying inside a desk
# time budget. The paper scale fixes 50 epochs over 5000 pairs.
DESK_PRETRAIN_EPOCHS = 2000
PAPER_PRETRAIN_EPOCHS = 50

# The evolve corpus must differ from the pretrain corpus even when both
# derive from one base seed; a fixed documented offset keeps that
# deterministic without a second flag.
EVOLVE_CORPUS_SEED_OFFSET = 1_000_003


class ConfigError(ValueError):
    """Malformed run config: unknown key, bad preset, or bad value."""


@dataclass(frozen=True)
class CorpusSettings:
    """Sizes and seeds of the generated corpora.

    ``pretrain_seed``/``evolve_seed`` default to the run's base seed and
    base seed + EVOLVE_CORPUS_SEED_OFFSET respectively.
    """

    pretrain_size: int = 200
    evolve_size: int = 20
    pretrain_seed: int | None = None
    evolve_seed: int | None = None

    def __post_init__(self):
        if self.pretrain_size < 1 or self.evolve_size < 1:
            raise ConfigError("corpus sizes must be >= 1")

    def to_dict(self) -> dict:
        return {"pretrain_size": self.pretrain_size,
                "evolve_size": self.evolve_size,
                "pretrain_seed": self.pretrain_seed,
                "evolve_seed": self.evolve_seed}

    @classmethod
    def from_dict(cls, d: dict) -> "CorpusSettings":
        unknown = set(d) - {"pretrain_size", "evolve_size",
                            "pretrain_seed", "evolve_seed"}
        if unknown:
            raise ConfigError(f"unknown corpus keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class RunConfig:
    preset: str = "desk"
    seeds: tuple[int, ...] = (0,)
    out_dir: str = "runs/desk"
    model: md.ModelConfig = field(default_factory=md.ModelConfig)
    pretrain: pt.PretrainConfig = field(default_factory=pt.PretrainConfig)
    evolve: ev.EvolveConfig = field(default_factory=ev.EvolveConfig)
    corpus: CorpusSettings = field(default_factory=CorpusSettings)

    def __post_init__(self):
        if self.preset not in PRESET_NAMES:
            raise ConfigError(f"unknown preset: {self.preset!r}")
        if not self.seeds:
            raise ConfigError("need at least one seed")
        if self.pretrain.model != self.model:
            raise ConfigError("pretrain.model must equal the run model config")
        if self.pretrain.corpus_size != self.corpus.pretrain_size:
            raise ConfigError("pretrain.corpus_size must equal "
                              "corpus.pretrain_size")

    @property
    def base_seed(self) -> int:
        return self.seeds[0]

    @property
    def pretrain_corpus_seed(self) -> int:
        s = self.corpus.pretrain_seed
        return self.base_seed if s is None else s

    @property
    def evolve_corpus_seed(self) -> int:
        s = self.corpus.evolve_seed
        return (self.base_seed + EVOLVE_CORPUS_SEED_OFFSET
                if s is None else s)

    def to_dict(self) -> dict:
        return {"preset": self.preset,
                "seeds": list(self.seeds),
                "out_dir": self.out_dir,
                "model": self.model.to_dict(),
                "pretrain": self.pretrain.to_dict(),
                "evolve": self.evolve.to_dict(),
                "corpus": self.corpus.to_dict()}


def preset_config(name: str) -> RunConfig:
    """The named preset with no overrides applied."""
    if name == "desk":
        model = md.ModelConfig()
        return RunConfig(
            preset="desk",
            out_dir="runs/desk",
            model=model,
            pretrain=pt.PretrainConfig(epochs=DESK_PRETRAIN_EPOCHS,
                                       corpus_size=200, n_models=3,
                                       model=model),
            evolve=ev.EvolveConfig(generations=200, population_size=8,
                                   parent_count=4),
            corpus=CorpusSettings(pretrain_size=200, evolve_size=20),
        )
    if name == "paper":
        # The reference scale fixes 8 decoder blocks, 25 pool models over
        # 5000 pairs x 50 epochs, populations of 30 with 15 parents, and
        # 10000 generations; remaining widths follow the desk shape
        # doubled.
        model = md.ModelConfig(n_blocks=8, n_heads=4, d_model=64, d_ff=128,
                               encoder_channels=(32, 64, 64))
        return RunConfig(
            preset="paper",
            out_dir="runs/paper",
            model=model,
            pretrain=pt.PretrainConfig(epochs=PAPER_PRETRAIN_EPOCHS,
                                       corpus_size=5000, n_models=25,
                                       model=model),
            evolve=ev.EvolveConfig(generations=10_000, population_size=30,
                                   parent_count=15),
            corpus=CorpusSettings(pretrain_size=5000, evolve_size=100),
        )
    raise ConfigError(f"unknown preset: {name!r}")


_TOP_KEYS = {"preset", "seeds", "out_dir", "overrides"}
_OVERRIDE_SECTIONS = {"model", "pretrain", "evolve", "corpus"}
# Owned by the run level; accepting them inside a section would create two
# sources of truth.
_MANAGED = {
    "pretrain": {"model", "corpus_size", "seed"},
    "evolve": {"seed"},
}


def resolve(raw: dict[str, Any]) -> RunConfig:
    """Build a RunConfig from parsed JSON: preset + overrides."""
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    base = preset_config(raw.get("preset", "desk"))

    overrides = raw.get("overrides", {})
    if not isinstance(overrides, dict):
        raise ConfigError("overrides must be an object")
    unknown = set(overrides) - _OVERRIDE_SECTIONS
    if unknown:
        raise ConfigError(f"unknown override sections: {sorted(unknown)}")
    for section, managed in _MANAGED.items():
        bad = managed & set(overrides.get(section, {}))
        if bad:
            raise ConfigError(
                f"{sorted(bad)} in {section!r} overrides are managed by the "
                f"run config; set them at the top level instead")

    try:
        model = md.ModelConfig.from_dict(
            {**base.model.to_dict(), **overrides.get("model", {})})
        corpus = CorpusSettings.from_dict(
            {**base.corpus.to_dict(), **overrides.get("corpus", {})})
        pretrain_d = {**base.pretrain.to_dict(), **overrides.get("pretrain", {})}
        pretrain_d["model"] = model.to_dict()
        pretrain_d["corpus_size"] = corpus.pretrain_size
        pretrain = pt.PretrainConfig.from_dict(pretrain_d)
        evolve = ev.EvolveConfig.from_dict(
            {**base.evolve.to_dict(), **overrides.get("evolve", {})})
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from e

    seeds = raw.get("seeds", list(base.seeds))
    if not isinstance(seeds, list) or not all(isinstance(s, int) for s in seeds):
        raise ConfigError("seeds must be a list of integers")

    cfg = RunConfig(preset=base.preset, seeds=tuple(seeds),
                    out_dir=str(raw.get("out_dir", base.out_dir)),
                    model=model, pretrain=pretrain, evolve=evolve,
                    corpus=corpus)
    # Seed plumbing: the base seed drives pretraining; per-trial evolve
    # seeds come from the seed list at run time.
    return replace(cfg, pretrain=replace(cfg.pretrain, seed=cfg.base_seed))


def load_run_config(path: str | Path) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: not valid JSON ({e})") from e
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return resolve(raw)
