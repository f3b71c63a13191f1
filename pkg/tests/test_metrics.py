import math

import numpy as np
import pytest

from evosr import datagen as dg
from evosr import expressions as ex
from evosr import metrics as mt
from evosr import model as md
from evosr.autodiff import Tensor

TINY = md.ModelConfig(n_blocks=1, n_heads=2, d_model=8, d_ff=16,
                      dropout_p=0.0, encoder_channels=(4, 8))


def _finite(vals):
    return [ex.EvalResult(value=v, finite=True) for v in vals]


class TestSymbolicCE:
    def test_uniform_logits(self):
        target = ex.TokenSequence(tokens=(ex.START, 10, ex.END))
        ce = mt.symbolic_ce(Tensor(np.zeros((3, 14))), target)
        assert abs(ce - math.log(14)) < 1e-9

    def test_peaked_logits(self):
        target = ex.TokenSequence(tokens=(ex.START, 10, ex.END))
        logits = np.zeros((3, 14))
        for i, t in enumerate(target.tokens):
            logits[i, t] = 25.0
        assert mt.symbolic_ce(Tensor(logits), target) < 1e-6

    def test_always_positive(self):
        rng = np.random.default_rng(0)
        target = ex.TokenSequence(tokens=(ex.START, 6, 10, ex.END))
        for _ in range(20):
            ce = mt.symbolic_ce(Tensor(rng.normal(size=(4, 14)) * 10), target)
            assert ce > 0.0

    def test_matches_tensor_loss_bitwise(self):
        from evosr import autodiff as ad

        rng = np.random.default_rng(1)
        logits = rng.normal(size=(5, 14))
        target = ex.TokenSequence(tokens=(ex.START, 3, 10, 10, ex.END))
        a = mt.symbolic_ce(Tensor(logits), target)
        b = ad.cross_entropy_loss(Tensor(logits), target.tokens, pad_id=ex.PAD).item()
        assert a == b


class TestNumericMSE:
    def test_identity(self):
        assert mt.numeric_mse([1.0, 2.0], _finite([1.0, 2.0])) == 0.0

    def test_hand_value(self):
        # ((1-0)^2 + (3-2)^2) / 2 = 1
        assert mt.numeric_mse([0.0, 2.0], _finite([1.0, 3.0])) == pytest.approx(1.0)

    def test_nonfinite_is_invalid(self):
        yh = [ex.EvalResult(value=1.0, finite=True),
              ex.EvalResult(value=float("nan"), finite=False)]
        assert mt.numeric_mse([1.0, 2.0], yh) is mt.INVALID

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            mt.numeric_mse([1.0], _finite([1.0, 2.0]))


class TestNMSE:
    def test_identity(self):
        assert mt.nmse([1.0, 5.0], [1.0, 5.0]) == 0.0

    def test_hand_value(self):
        # (2-1)^2 / |1 + 1e-8| = 1/(1+1e-8)
        assert mt.nmse([1.0], [2.0]) == pytest.approx(1.0 / (1.0 + 1e-8), rel=1e-12)

    def test_per_sample_normalization(self):
        # [(1/|2+eps|) + (4/|4+eps|)] / 2 = (0.5 + 1.0) / 2
        got = mt.nmse([2.0, 4.0], [3.0, 6.0])
        assert got == pytest.approx((1 / (2 + 1e-8) + 4 / (4 + 1e-8)) / 2, rel=1e-12)

    def test_nonnegative(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            y = rng.normal(size=6)
            p = rng.normal(size=6)
            assert mt.nmse(y, p) >= 0.0


class TestOneMinusR2:
    def test_perfect_fit(self):
        assert mt.one_minus_r2([0.0, 1.0, 2.0], [0.0, 1.0, 2.0]) == 0.0

    def test_mean_predictor(self):
        y = [1.0, 2.0, 3.0, 4.0]
        assert mt.one_minus_r2(y, [2.5] * 4) == pytest.approx(1.0, abs=1e-9)

    def test_hand_value(self):
        # SS_res = 1, SS_tot = 2 -> 1 - (1 - 0.5) = 0.5
        assert mt.one_minus_r2([0.0, 1.0, 2.0], [0.0, 1.0, 3.0]) == pytest.approx(0.5)

    def test_zero_variance(self):
        with pytest.raises(mt.ZeroVariance):
            mt.one_minus_r2([2.0, 2.0, 2.0], [1.0, 2.0, 3.0])

    def test_needs_two_points(self):
        with pytest.raises(ValueError):
            mt.one_minus_r2([1.0], [1.0])


class TestFitnessRecord:
    def test_mse_presence_tied_to_validity(self):
        mt.FitnessRecord(ce=1.0, mse=0.5, valid=True)
        mt.FitnessRecord(ce=1.0, mse=None, valid=False)
        with pytest.raises(ValueError):
            mt.FitnessRecord(ce=1.0, mse=None, valid=True)
        with pytest.raises(ValueError):
            mt.FitnessRecord(ce=1.0, mse=0.5, valid=False)


def _tiny_corpus(seed=3, size=3):
    return dg.build_corpus(seed=seed, kind="evolve", size=size,
                           params=dg.GenParams(n_points=8))


class TestEvaluateIndividual:
    def test_untrained_genome_usually_invalid(self):
        corpus = _tiny_corpus()
        g = md.init_genome(TINY, np.random.default_rng(4))
        rec = mt.evaluate_individual(g, corpus)
        assert rec.ce > 0.0
        if not rec.valid:
            assert rec.mse is None

    def test_pure_function(self):
        corpus = _tiny_corpus()
        g = md.init_genome(TINY, np.random.default_rng(5))
        a = mt.evaluate_individual(g, corpus)
        b = mt.evaluate_individual(g, corpus)
        assert a == b

    def test_ce_is_mean_over_pairs(self):
        corpus = _tiny_corpus()
        g = md.init_genome(TINY, np.random.default_rng(6))
        rec = mt.evaluate_individual(g, corpus)
        per_pair = []
        for pair in corpus.pairs:
            t = ex.TokenSequence(tokens=pair.tokens)
            per_pair.append(mt.symbolic_ce(md.forward_logits(g, pair.xs, pair.ys, t), t))
        assert rec.ce == pytest.approx(float(np.mean(per_pair)), rel=1e-12)


class TestBenchmarkIndividual:
    def test_records_cover_corpus(self):
        corpus = dg.benchmark_corpus(seed=1, kind="unseen-test",
                                     params=dg.GenParams(n_points=8))
        corpus.pairs = corpus.pairs[:4]
        g = md.init_genome(TINY, np.random.default_rng(7))
        recs = mt.benchmark_individual(g, corpus)
        assert len(recs) == 4
        for r in recs:
            assert r.ce > 0.0
            assert r.seconds >= 0.0
            if r.predicted is None:
                assert r.ted is None and r.nmse is None and r.one_minus_r2 is None
