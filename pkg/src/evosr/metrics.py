"""Equation-comparison losses: symbolic CE, numeric MSE/NMSE/1-R2, and the
per-individual fitness evaluation used by selection.

Validity is strict: one pair whose decoded equation is syntactically invalid
or numerically non-finite marks the whole individual invalid, which switches
selection to its CE-only mode.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from . import datagen as dg
from . import expressions as ex
from . import model as md

NMSE_EPS = 1e-8
# CE assigned when the forward pass itself leaves the finite range; far above
# any reachable CE so such individuals sort last.
NONFINITE_CE = 1e30


class Invalid:
    """Singleton marker: numeric loss undefined (non-finite prediction)."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "Invalid"


INVALID = Invalid()


class ZeroVariance(ArithmeticError):
    """All target values equal; R^2 undefined."""


@dataclass(frozen=True)
class FitnessRecord:
    ce: float
    mse: float | None
    valid: bool
    nmse: float | None = None
    one_minus_r2: float | None = None
    ted: float | None = None

    def __post_init__(self):
        if (self.mse is None) != (not self.valid):
            raise ValueError("mse must be present exactly when valid")


def symbolic_ce(logits: ad.Tensor, target: ex.TokenSequence) -> float:
    """PAD-masked mean CE; same code path as the training loss."""
    return ad.cross_entropy_loss(logits, target.tokens, pad_id=ex.PAD).item()


def numeric_mse(ys: Sequence[float], yhats: Sequence[ex.EvalResult]):
    """Mean squared error, or INVALID if any prediction is non-finite."""
    if len(ys) != len(yhats):
        raise ValueError(f"length mismatch {len(ys)} vs {len(yhats)}")
    if any(not r.finite for r in yhats):
        return INVALID
    pred = np.array([r.value for r in yhats])
    return float(np.mean((np.asarray(ys, dtype=np.float64) - pred) ** 2))


def nmse(ys: Sequence[float], yhats: Sequence[float]) -> float:
    """Squared error normalized per sample by |y_i + eps|, then averaged."""
    y = np.asarray(ys, dtype=np.float64)
    p = np.asarray(yhats, dtype=np.float64)
    if y.shape != p.shape:
        raise ValueError(f"length mismatch {y.shape} vs {p.shape}")
    return float(np.mean((y - p) ** 2 / np.abs(y + NMSE_EPS)))


def one_minus_r2(ys: Sequence[float], yhats: Sequence[float]) -> float:
    y = np.asarray(ys, dtype=np.float64)
    p = np.asarray(yhats, dtype=np.float64)
    if y.shape != p.shape or y.size < 2:
        raise ValueError("need >= 2 paired samples")
    ss_tot = float(((y - y.mean()) ** 2).sum())
    if ss_tot == 0.0:
        raise ZeroVariance("all target values are equal")
    ss_res = float(((y - p) ** 2).sum())
    return ss_res / ss_tot


def _decode_pair(g: md.NetworkGenome, pair: dg.DataEquationPair):
    """Greedy decode -> parsed equation, or None when invalid."""
    seq = md.decode_greedy(g, pair.xs, pair.ys)
    try:
        return ex.detokenize(seq)
    except ex.ExpressionError:
        return None


def evaluate_individual(g: md.NetworkGenome, corpus: dg.Corpus) -> FitnessRecord:
    """Mean teacher-forced CE plus mean decoded-equation MSE over a corpus.

    valid=false (mse absent) if ANY pair decodes to an invalid equation or to
    one that leaves the finite/bounded range on that pair's X values. A
    non-finite forward pass gets the sentinel CE and is invalid outright.
    """
    ces = []
    mses = []
    valid = True
    for pair in corpus.pairs:
        try:
            logits = md.forward_logits(g, pair.xs, pair.ys,
                                       ex.TokenSequence(tokens=pair.tokens))
        except md.NonFiniteActivation:
            return FitnessRecord(ce=NONFINITE_CE, mse=None, valid=False)
        ces.append(symbolic_ce(logits, ex.TokenSequence(tokens=pair.tokens)))
        if not valid:
            continue
        try:
            eq = _decode_pair(g, pair)
        except md.NonFiniteActivation:
            return FitnessRecord(ce=NONFINITE_CE, mse=None, valid=False)
        if eq is None:
            valid = False
            continue
        m = numeric_mse(pair.ys, [ex.evaluate(eq, x) for x in pair.xs])
        if m is INVALID:
            valid = False
        else:
            mses.append(m)
    ce = float(np.mean(ces))
    if not valid:
        return FitnessRecord(ce=ce, mse=None, valid=False)
    return FitnessRecord(ce=ce, mse=float(np.mean(mses)), valid=True)


@dataclass(frozen=True)
class BenchmarkRecord:
    """Per-pair test metrics; numeric fields None when the decode is unusable."""

    target: str
    predicted: str | None
    ce: float
    ted: int | None
    nmse: float | None
    one_minus_r2: float | None
    seconds: float


def benchmark_individual(g: md.NetworkGenome, corpus: dg.Corpus) -> list[BenchmarkRecord]:
    """Full test-table metrics (CE, TED, NMSE, 1-R^2) for every pair."""
    records = []
    for pair in corpus.pairs:
        target = ex.TokenSequence(tokens=pair.tokens)
        t0 = time.perf_counter()
        try:
            logits = md.forward_logits(g, pair.xs, pair.ys, target)
            ce = symbolic_ce(logits, target)
            eq = _decode_pair(g, pair)
        except md.NonFiniteActivation:
            ce, eq = NONFINITE_CE, None
        seconds = time.perf_counter() - t0
        if eq is None:
            records.append(BenchmarkRecord(
                target=ex.render_preorder(pair.equation), predicted=None,
                ce=ce, ted=None, nmse=None, one_minus_r2=None, seconds=seconds))
            continue
        ted = ex.tree_edit_distance(pair.equation, eq)
        preds = [ex.evaluate(eq, x) for x in pair.xs]
        if all(r.finite for r in preds):
            vals = [r.value for r in preds]
            n = nmse(pair.ys, vals)
            try:
                omr = one_minus_r2(pair.ys, vals)
            except ZeroVariance:
                omr = None
        else:
            n, omr = None, None
        records.append(BenchmarkRecord(
            target=ex.render_preorder(pair.equation),
            predicted=ex.render_preorder(eq),
            ce=ce, ted=ted, nmse=n, one_minus_r2=omr, seconds=seconds))
    return records
