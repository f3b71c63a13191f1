import json

import numpy as np
import pytest

from evosr import evolution as ev
from evosr import metrics as mt
from evosr import reporting as rp


class TestMannWhitney:
    def test_identical_samples_no_significance(self):
        res = rp.mann_whitney_u([5.0, 5.0, 5.0], [5.0, 5.0, 5.0])
        assert res.p == pytest.approx(1.0)

    def test_hand_worked_separation(self):
        # {1,2,3} vs {10,20,30}: every a < every b, so U = 0.
        res = rp.mann_whitney_u([1, 2, 3], [10, 20, 30])
        assert res.u == 0.0
        assert res.p < 0.1
        assert res.alternative == "two-sided"

    def test_one_sided_halves_p(self):
        two = rp.mann_whitney_u([1, 2, 3], [10, 20, 30])
        one = rp.mann_whitney_u([1, 2, 3], [10, 20, 30], alternative="less")
        assert one.p == pytest.approx(two.p / 2)
        assert one.p < 0.05

    def test_wrong_direction_is_insignificant(self):
        res = rp.mann_whitney_u([10, 20, 30], [1, 2, 3], alternative="less")
        assert res.p > 0.9

    def test_tie_correction_keeps_p_in_range(self):
        res = rp.mann_whitney_u([1, 1, 2, 3], [1, 2, 3, 4])
        assert 0.0 < res.p <= 1.0

    def test_insufficient_data(self):
        with pytest.raises(rp.InsufficientData):
            rp.mann_whitney_u([1, 2], [1, 2, 3])
        with pytest.raises(rp.InsufficientData):
            rp.mann_whitney_u([1, 2, 3], [])

    def test_unknown_alternative(self):
        with pytest.raises(ValueError):
            rp.mann_whitney_u([1, 2, 3], [4, 5, 6], alternative="both")

    def test_sample_sizes_recorded(self):
        res = rp.mann_whitney_u([1, 2, 3, 4], [5, 6, 7])
        assert (res.n_a, res.n_b) == (4, 3)


class TestBonferroni:
    def test_scales_by_family_size(self):
        assert rp.bonferroni([0.01, 0.02]) == (0.02, 0.04)

    def test_caps_at_one(self):
        assert rp.bonferroni([0.6, 0.7]) == (1.0, 1.0)

    def test_empty(self):
        assert rp.bonferroni([]) == ()


def row(gen, ce, mse, vf):
    return ev.GenerationRow(generation=gen, best_ce=ce, best_mse=mse,
                            valid_fraction=vf)


class TestEmergenceHelpers:
    def test_first_full_validity(self):
        rows = [row(0, 2.0, None, 0.5), row(1, 1.9, None, 0.75),
                row(2, 1.8, 3.0, 1.0), row(3, 1.7, 2.0, 1.0)]
        assert rp.first_full_validity(rows) == 2

    def test_never_valid(self):
        rows = [row(0, 2.0, None, 0.0), row(1, 1.9, None, 0.5)]
        assert rp.first_full_validity(rows) is None

    def test_window_means_exact(self):
        vals = [1.0] * 10 + [0.0] * 10
        assert rp.window_means(vals, 10) == [1.0, 0.0]

    def test_window_means_tail(self):
        assert rp.window_means([1.0, 2.0, 3.0], 2) == [1.5, 3.0]

    def test_window_means_bad_width(self):
        with pytest.raises(ValueError):
            rp.window_means([1.0], 0)


def make_trial(trial, ce0, ce1, mse0, mse1, gens=6):
    """Synthetic trial whose best CE/MSE interpolate start -> final."""
    rows = []
    for g in range(gens):
        f = g / (gens - 1)
        rows.append(row(g, ce0 + f * (ce1 - ce0), mse0 + f * (mse1 - mse0), 1.0))
    front = ev.ParetoFront(points=(ev.ParetoPoint(ce=ce1, mse=mse1, trial=trial),))
    return rp.TrialData(trial=trial, rows=tuple(rows), front=front)


class TestTrialStatistics:
    def test_improvement_detected(self):
        rng = np.random.default_rng(0)
        trials = [make_trial(t, 10 + rng.uniform(0, 0.5), 1 + rng.uniform(0, 0.5),
                             8 + rng.uniform(0, 0.5), 2 + rng.uniform(0, 0.5))
                  for t in range(10)]
        payload = rp.trial_statistics(trials)
        ce, mse = payload["comparisons"]
        assert ce["label"] == "best_ce_final_vs_start"
        assert ce["p"] < 0.05
        assert mse["p"] < 0.05
        assert ce["p_bonferroni"] == pytest.approx(min(1.0, ce["p"] * 2))

    def test_mse_window_starts_at_first_full_validity(self):
        rows = [row(0, 3.0, None, 0.5), row(1, 2.5, 9.0, 1.0),
                row(2, 2.0, 4.0, 1.0)]
        front = ev.ParetoFront(points=(ev.ParetoPoint(ce=2.0, mse=4.0),))
        trials = [rp.TrialData(trial=t, rows=tuple(rows), front=front)
                  for t in range(3)]
        payload = rp.trial_statistics(trials)
        mse = payload["comparisons"][1]
        # Samples exist: the gen-1 value (9.0) is the start, not gen 0 (None).
        assert mse["n_a"] == 3 and mse["n_b"] == 3

    def test_no_valid_generation_yields_insufficient(self):
        rows = [row(0, 3.0, None, 0.0), row(1, 2.9, None, 0.5)]
        front = ev.ParetoFront(points=())
        trials = [rp.TrialData(trial=t, rows=tuple(rows), front=front)
                  for t in range(4)]
        payload = rp.trial_statistics(trials)
        mse = payload["comparisons"][1]
        assert "insufficient_data" in mse
        assert "p" not in mse


class TestReportBundle:
    def test_files_and_headers(self, tmp_path):
        trials = [make_trial(0, 3.0, 2.0, 6.0, 4.0),
                  make_trial(1, 3.1, 2.1, 6.1, 4.1)]
        payload = rp.write_report_bundle(trials, tmp_path)
        for name, header in [(rp.FITNESS_NAME, rp.FITNESS_HEADER),
                             (rp.EMERGENCE_NAME, rp.EMERGENCE_HEADER),
                             (rp.FRONTS_NAME, ev.FRONT_HEADER),
                             (rp.META_FRONT_NAME, ev.FRONT_HEADER)]:
            text = (tmp_path / name).read_text()
            assert text.splitlines()[0] == header, name
        stats = json.loads((tmp_path / rp.STATS_NAME).read_text())
        assert stats == payload
        assert stats["format_version"] == rp.STATS_FORMAT_VERSION
        assert stats["n_trials"] == 2

    def test_fitness_rows_cover_all_generations(self, tmp_path):
        trials = [make_trial(0, 3.0, 2.0, 6.0, 4.0, gens=4)]
        rp.write_report_bundle(trials, tmp_path)
        lines = (tmp_path / rp.FITNESS_NAME).read_text().splitlines()
        assert len(lines) == 1 + 4

    def test_meta_front_nondominated(self, tmp_path):
        pts0 = (ev.ParetoPoint(1.0, 5.0, trial=0), ev.ParetoPoint(2.0, 3.0, trial=0))
        pts1 = (ev.ParetoPoint(1.5, 4.0, trial=1), ev.ParetoPoint(0.5, 9.0, trial=1))
        trials = [rp.TrialData(trial=t, rows=(row(0, 1.0, 1.0, 1.0),),
                               front=ev.ParetoFront(points=p))
                  for t, p in enumerate((pts0, pts1))]
        rp.write_report_bundle(trials, tmp_path)
        meta = ev.read_front(tmp_path / rp.META_FRONT_NAME)
        for p in meta.points:
            for q in meta.points:
                assert not ev._point_dominates(q, p)

    def test_bitwise_stable(self, tmp_path):
        trials = [make_trial(t, 3.0 + t, 2.0, 6.0, 4.0) for t in range(3)]
        rp.write_report_bundle(trials, tmp_path / "a")
        rp.write_report_bundle(trials, tmp_path / "b")
        for name in (rp.FITNESS_NAME, rp.EMERGENCE_NAME, rp.FRONTS_NAME,
                     rp.META_FRONT_NAME, rp.STATS_NAME):
            assert (tmp_path / "a" / name).read_bytes() == \
                   (tmp_path / "b" / name).read_bytes()

    def test_empty_trial_set_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            rp.write_report_bundle([], tmp_path)

    def test_round_trip_through_trial_dir(self, tmp_path):
        rows = [row(0, 2.0, 5.0, 1.0), row(1, 1.5, 4.0, 1.0)]
        front = ev.ParetoFront(points=(ev.ParetoPoint(1.5, 4.0, trial=7, age=2),))
        ev._write_history(tmp_path / ev.HISTORY_NAME, rows)
        ev.write_front_csv(tmp_path / ev.FRONT_NAME, front)
        loaded = rp.load_trial_dir(tmp_path, trial=7)
        assert loaded.rows == tuple(rows)
        assert loaded.front == front


def record(ce, ted, nmse, omr, secs=0.1, predicted="x"):
    return mt.BenchmarkRecord(target="x", predicted=predicted, ce=ce, ted=ted,
                              nmse=nmse, one_minus_r2=omr, seconds=secs)


class TestBenchmarkTable:
    def test_mean_and_median_aggregation(self):
        recs = [record(1.0, 0, 0.1, 0.2), record(2.0, 2, 0.3, 0.4),
                record(3.0, 4, 0.5, 0.6)]
        r = rp.aggregate_benchmark("srne", recs)
        assert r.ce_mean == pytest.approx(2.0)
        assert r.ted_mean == pytest.approx(2.0)
        assert r.nmse_median == pytest.approx(0.3)
        assert r.one_minus_r2_median == pytest.approx(0.4)
        assert r.n_pairs == 3 and r.n_decoded == 3

    def test_even_count_median_averages(self):
        recs = [record(1.0, 0, 0.1, 0.1), record(1.0, 0, 0.3, 0.3),
                record(1.0, 0, 0.5, 0.5), record(1.0, 0, 0.7, 0.7)]
        r = rp.aggregate_benchmark("m", recs)
        assert r.nmse_median == pytest.approx(0.4)

    def test_undecoded_records_excluded_but_counted(self):
        recs = [record(1.0, 0, 0.1, 0.2),
                mt.BenchmarkRecord(target="x", predicted=None, ce=4.0, ted=None,
                                   nmse=None, one_minus_r2=None, seconds=0.2)]
        r = rp.aggregate_benchmark("m", recs)
        assert r.n_decoded == 1
        assert r.ce_mean == pytest.approx(2.5)  # CE still covers every pair
        assert r.ted_mean == pytest.approx(0.0)

    def test_all_undecoded_gives_none(self):
        recs = [mt.BenchmarkRecord(target="x", predicted=None, ce=4.0, ted=None,
                                   nmse=None, one_minus_r2=None, seconds=0.2)]
        r = rp.aggregate_benchmark("m", recs)
        assert r.ted_mean is None and r.nmse_median is None

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            rp.aggregate_benchmark("m", [])

    def test_write_files(self, tmp_path):
        recs = {"srne": [record(1.0, 0, 0.1, 0.2)],
                "baseline": [record(2.0, 3, 0.4, 0.5)]}
        rows = rp.write_benchmark_report(recs, tmp_path)
        table = (tmp_path / "report_table.csv").read_text().splitlines()
        assert table[0] == rp.TABLE_HEADER
        assert len(table) == 3
        assert table[1].startswith("baseline,")  # labels sorted
        per_pair = (tmp_path / "records.csv").read_text().splitlines()
        assert per_pair[0] == rp.RECORDS_HEADER
        assert len(per_pair) == 3
        assert len(rows) == 2
