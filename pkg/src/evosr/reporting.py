"""Plot-ready report bundles and rank statistics for sets of trials.

Everything here consumes the files written by the evolution and metrics
modules (history/front CSVs, benchmark records) and emits schema-stable
CSV/JSON artifacts. No plotting: the outputs are the data behind the
figures, nothing more.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from scipy import stats as sp_stats

from . import evolution as ev
from . import metrics as mt

FITNESS_HEADER = "trial,generation,best_ce,best_mse"
EMERGENCE_HEADER = "trial,generation,valid_fraction"
TABLE_HEADER = ("label,n_pairs,n_decoded,ce_mean,ted_mean,"
                "nmse_median,one_minus_r2_median,seconds_mean")
RECORDS_HEADER = "label,pair,target,predicted,ce,ted,nmse,one_minus_r2,seconds"

FITNESS_NAME = "fitness_over_time.csv"
EMERGENCE_NAME = "emergence.csv"
FRONTS_NAME = "fronts.csv"
META_FRONT_NAME = "meta_front.csv"
STATS_NAME = "stats.json"

STATS_FORMAT_VERSION = 1

_ALTERNATIVES = ("two-sided", "less", "greater")


class InsufficientData(ValueError):
    """A rank test was asked to compare samples with fewer than 3 points."""


@dataclass(frozen=True)
class MannWhitneyResult:
    u: float
    p: float
    n_a: int
    n_b: int
    alternative: str


def mann_whitney_u(sample_a: Sequence[float], sample_b: Sequence[float],
                   alternative: str = "two-sided") -> MannWhitneyResult:
    """Mann-Whitney U via the normal approximation with tie correction.

    U is the statistic of ``sample_a``; ``alternative="less"`` tests
    whether ``sample_a`` is stochastically smaller than ``sample_b``.
    """
    if alternative not in _ALTERNATIVES:
        raise ValueError(f"unknown alternative: {alternative!r}")
    if len(sample_a) < 3 or len(sample_b) < 3:
        raise InsufficientData(
            f"need at least 3 values per sample, got {len(sample_a)} "
            f"and {len(sample_b)}")
    res = sp_stats.mannwhitneyu(list(sample_a), list(sample_b),
                                alternative=alternative, method="asymptotic")
    return MannWhitneyResult(u=float(res.statistic), p=float(res.pvalue),
                             n_a=len(sample_a), n_b=len(sample_b),
                             alternative=alternative)


def bonferroni(p_values: Sequence[float]) -> tuple[float, ...]:
    """Multiply each p by the family size, capped at 1."""
    m = len(p_values)
    return tuple(min(1.0, p * m) for p in p_values)


def first_full_validity(rows: Sequence[ev.GenerationRow]) -> int | None:
    """Index of the first generation whose population was all-valid."""
    for row in rows:
        if row.valid_fraction >= 1.0:
            return row.generation
    return None


def window_means(values: Sequence[float], width: int = 10) -> list[float]:
    """Means over consecutive non-overlapping windows; a short tail window
    is averaged over its actual length."""
    if width < 1:
        raise ValueError("width must be >= 1")
    out = []
    for start in range(0, len(values), width):
        chunk = values[start:start + width]
        out.append(math.fsum(chunk) / len(chunk))
    return out


# -- trial-set bundles -------------------------------------------------------

@dataclass(frozen=True)
class TrialData:
    trial: int
    rows: tuple[ev.GenerationRow, ...]
    front: ev.ParetoFront


def load_trial_dir(path: str | Path, trial: int) -> TrialData:
    path = Path(path)
    rows = ev.read_history(path / ev.HISTORY_NAME)
    front = ev.read_front(path / ev.FRONT_NAME)
    return TrialData(trial=trial, rows=tuple(rows), front=front)


def _fmt(x: float | None) -> str:
    return "" if x is None else repr(x)


def write_report_bundle(trials: Sequence[TrialData], out_dir: str | Path) -> dict:
    """Write fitness/emergence/front CSVs plus stats.json; returns the
    stats payload. Needs at least one trial."""
    if not trials:
        raise ValueError("need at least one trial")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    with open(out_dir / FITNESS_NAME, "w") as f:
        f.write(FITNESS_HEADER + "\n")
        for t in trials:
            for r in t.rows:
                f.write(f"{t.trial},{r.generation},{_fmt(r.best_ce)},"
                        f"{_fmt(r.best_mse)}\n")

    with open(out_dir / EMERGENCE_NAME, "w") as f:
        f.write(EMERGENCE_HEADER + "\n")
        for t in trials:
            for r in t.rows:
                f.write(f"{t.trial},{r.generation},{_fmt(r.valid_fraction)}\n")

    with open(out_dir / FRONTS_NAME, "w") as f:
        f.write(ev.FRONT_HEADER + "\n")
        for t in trials:
            for p in t.front.points:
                f.write(f"{_fmt(p.ce)},{_fmt(p.mse)},{p.trial},{p.age}\n")

    meta = ev.meta_front([t.front for t in trials])
    ev.write_front_csv(out_dir / META_FRONT_NAME, meta)

    payload = trial_statistics(trials)
    with open(out_dir / STATS_NAME, "w") as f:
        json.dump(payload, f, indent=1, sort_keys=True)
        f.write("\n")
    return payload


def _comparison(label: str, a: list[float], b: list[float],
                alternative: str) -> dict:
    entry: dict = {"label": label, "alternative": alternative,
                   "n_a": len(a), "n_b": len(b)}
    try:
        res = mann_whitney_u(a, b, alternative=alternative)
    except InsufficientData as e:
        entry["insufficient_data"] = str(e)
        return entry
    entry["u"] = res.u
    entry["p"] = res.p
    return entry


def trial_statistics(trials: Sequence[TrialData]) -> dict:
    """Mann-Whitney comparisons of start-vs-final best CE and best MSE
    across trials, Bonferroni-corrected as one family.

    The MSE comparison starts each trial at its first fully-valid
    generation (MSE is undefined while any member is invalid).
    """
    ce_start = [t.rows[0].best_ce for t in trials]
    ce_final = [t.rows[-1].best_ce for t in trials]

    mse_start: list[float] = []
    mse_final: list[float] = []
    for t in trials:
        g = first_full_validity(t.rows)
        if g is None:
            continue
        start = t.rows[g].best_mse
        final = t.rows[-1].best_mse
        if start is None or final is None:
            continue
        mse_start.append(start)
        mse_final.append(final)

    comparisons = [
        _comparison("best_ce_final_vs_start", ce_final, ce_start, "less"),
        _comparison("best_mse_final_vs_first_valid", mse_final, mse_start,
                    "less"),
    ]
    raw = [c["p"] for c in comparisons if "p" in c]
    corrected = iter(bonferroni(raw))
    for c in comparisons:
        if "p" in c:
            c["p_bonferroni"] = next(corrected)
    return {
        "format_version": STATS_FORMAT_VERSION,
        "n_trials": len(trials),
        "comparisons": comparisons,
    }


# -- benchmark tables --------------------------------------------------------

@dataclass(frozen=True)
class ReportTableRow:
    """Aggregate of per-pair benchmark records under one label.

    Symbolic quantities (CE, TED) aggregate by mean; numeric ones (NMSE,
    1-R^2) by median. Records whose decode produced no usable equation
    are excluded from the TED/NMSE/1-R^2 aggregates but counted.
    """
    label: str
    n_pairs: int
    n_decoded: int
    ce_mean: float
    ted_mean: float | None
    nmse_median: float | None
    one_minus_r2_median: float | None
    seconds_mean: float


def _median(values: list[float]) -> float:
    values = sorted(values)
    n = len(values)
    mid = n // 2
    if n % 2:
        return values[mid]
    return 0.5 * (values[mid - 1] + values[mid])


def aggregate_benchmark(label: str,
                        records: Sequence[mt.BenchmarkRecord]) -> ReportTableRow:
    if not records:
        raise ValueError("no benchmark records")
    teds = [r.ted for r in records if r.ted is not None]
    nmses = [r.nmse for r in records if r.nmse is not None]
    omrs = [r.one_minus_r2 for r in records if r.one_minus_r2 is not None]
    return ReportTableRow(
        label=label,
        n_pairs=len(records),
        n_decoded=sum(1 for r in records if r.predicted is not None),
        ce_mean=math.fsum(r.ce for r in records) / len(records),
        ted_mean=(math.fsum(teds) / len(teds)) if teds else None,
        nmse_median=_median(nmses) if nmses else None,
        one_minus_r2_median=_median(omrs) if omrs else None,
        seconds_mean=math.fsum(r.seconds for r in records) / len(records),
    )


def write_benchmark_report(records_by_label: dict[str, Sequence[mt.BenchmarkRecord]],
                           out_dir: str | Path) -> list[ReportTableRow]:
    """Write report_table.csv (aggregates) and records.csv (per pair)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = [aggregate_benchmark(label, recs)
            for label, recs in sorted(records_by_label.items())]
    with open(out_dir / "report_table.csv", "w") as f:
        f.write(TABLE_HEADER + "\n")
        for r in rows:
            f.write(f"{r.label},{r.n_pairs},{r.n_decoded},{_fmt(r.ce_mean)},"
                    f"{_fmt(r.ted_mean)},{_fmt(r.nmse_median)},"
                    f"{_fmt(r.one_minus_r2_median)},{_fmt(r.seconds_mean)}\n")
    with open(out_dir / "records.csv", "w") as f:
        f.write(RECORDS_HEADER + "\n")
        for label, recs in sorted(records_by_label.items()):
            for i, r in enumerate(recs):
                pred = "" if r.predicted is None else r.predicted
                f.write(f"{label},{i},{r.target},{pred},{_fmt(r.ce)},"
                        f"{'' if r.ted is None else r.ted},{_fmt(r.nmse)},"
                        f"{_fmt(r.one_minus_r2)},{_fmt(r.seconds)}\n")
    return rows
