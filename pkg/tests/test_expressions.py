import math

import numpy as np
import pytest
from hypothesis import given

from conftest import expression_trees
from evosr import expressions as ex
from oracles import brute_force_ted, expression_to_tuple_tree


def expr(*prims):
    return ex.parse_preorder(list(prims))


X2_PLUS_X = (ex.ADD, ex.POW, ex.VAR_X, ex.CONST_2, ex.VAR_X)


class TestParsePreorder:
    def test_accepts_x_squared_plus_x(self):
        e = expr(*X2_PLUS_X)
        assert e.preorder == X2_PLUS_X

    def test_single_leaf(self):
        assert expr(ex.VAR_X).preorder == (ex.VAR_X,)

    def test_unary_without_operand(self):
        with pytest.raises(ex.IncompleteTreeError):
            expr(ex.SIN)

    def test_binary_missing_second_operand(self):
        with pytest.raises(ex.IncompleteTreeError):
            expr(ex.ADD, ex.VAR_X)

    def test_trailing_primitives(self):
        with pytest.raises(ex.TrailingPrimitivesError):
            expr(ex.VAR_X, ex.VAR_X)

    def test_length_cap(self):
        prims = [ex.SIN] * 30 + [ex.VAR_X]
        with pytest.raises(ex.LengthExceededError):
            ex.parse_preorder(prims)
        ok = [ex.SIN] * 29 + [ex.VAR_X]
        assert len(ex.parse_preorder(ok)) == 30

    def test_const_outside_pow_exponent(self):
        with pytest.raises(ex.MisplacedConstError):
            expr(ex.ADD, ex.CONST_2, ex.VAR_X)
        with pytest.raises(ex.MisplacedConstError):
            expr(ex.CONST_3)
        with pytest.raises(ex.MisplacedConstError):
            expr(ex.POW, ex.CONST_2, ex.VAR_X)  # const in base slot
        with pytest.raises(ex.MisplacedConstError):
            expr(ex.SIN, ex.CONST_2)

    def test_pow_exponent_may_be_const_or_subexpression(self):
        expr(ex.POW, ex.VAR_X, ex.CONST_4)
        expr(ex.POW, ex.VAR_X, ex.VAR_X)
        expr(ex.POW, ex.VAR_X, ex.SIN, ex.VAR_X)

    def test_unknown_primitive(self):
        with pytest.raises(ex.ExpressionError):
            ex.parse_preorder(["div", "x", "x"])

    def test_empty(self):
        with pytest.raises(ex.IncompleteTreeError):
            ex.parse_preorder([])


class TestTokens:
    def test_single_leaf_tokens(self):
        t = ex.tokenize(expr(ex.VAR_X))
        assert t.tokens == (ex.START, ex.PRIMITIVE_TO_TOKEN[ex.VAR_X], ex.END)

    def test_x_squared_plus_x_tokens(self):
        # dictionary lookup done by hand against the published ordering
        t = ex.tokenize(expr(*X2_PLUS_X))
        assert t.tokens == (1, 3, 5, 10, 11, 10, 2)

    def test_dictionary_is_bijective(self):
        ids = sorted(ex.PRIMITIVE_TO_TOKEN.values())
        assert ids == list(range(3, ex.VOCAB_SIZE))
        assert len(set(ex.PRIMITIVE_TO_TOKEN)) == len(ids)

    def test_detokenize_strips_specials(self):
        raw = (ex.START, 10, ex.END, 99, ex.PAD)
        assert ex.detokenize(raw).preorder == (ex.VAR_X,)

    def test_detokenize_incomplete(self):
        with pytest.raises(ex.IncompleteTreeError):
            ex.detokenize((ex.START, ex.PRIMITIVE_TO_TOKEN[ex.ADD], ex.END))

    def test_detokenize_unknown_token(self):
        with pytest.raises(ex.UnknownTokenError):
            ex.detokenize((ex.START, 9999, ex.END))

    def test_detokenize_rejects_reserved_in_body(self):
        with pytest.raises(ex.UnknownTokenError):
            ex.detokenize((ex.START, 10, ex.PAD, ex.END))

    @given(expression_trees())
    def test_round_trip(self, e):
        assert ex.detokenize(ex.tokenize(e)) == e

    def test_round_trip_seeded_sample(self):
        from evosr.datagen import random_equation

        rng = np.random.default_rng(7)
        for _ in range(1000):
            e = random_equation(rng)
            assert ex.detokenize(ex.tokenize(e)) == e


class TestEvaluate:
    def test_benchmark_polynomial_at_one(self):
        # x^3 + x^2 + x at x=1 -> 3 by hand
        e = expr(ex.ADD, ex.ADD, ex.POW, ex.VAR_X, ex.CONST_3,
                 ex.POW, ex.VAR_X, ex.CONST_2, ex.VAR_X)
        r = ex.evaluate(e, 1.0)
        assert r.finite and r.value == pytest.approx(3.0, abs=1e-12)

    def test_sin_zero(self):
        r = ex.evaluate(expr(ex.SIN, ex.VAR_X), 0.0)
        assert r.finite and r.value == 0.0

    def test_log_domain_boundary(self):
        r = ex.evaluate(expr(ex.LOG, ex.VAR_X), 0.0)
        assert not r.finite and math.isnan(r.value)

    def test_negative_base_integer_exponent(self):
        r = ex.evaluate(expr(ex.POW, ex.VAR_X, ex.CONST_3), -2.0)
        assert r.finite and r.value == -8.0

    def test_negative_base_real_exponent_not_real(self):
        e = expr(ex.POW, ex.VAR_X, ex.SIN, ex.VAR_X)
        assert not ex.evaluate(e, -2.0).finite

    def test_overflow_flagged_not_raised(self):
        e = expr(ex.EXP, ex.EXP, ex.EXP, ex.VAR_X)
        r = ex.evaluate(e, 100.0)
        assert not r.finite

    @given(expression_trees())
    def test_total_on_random_inputs(self, e):
        for x in (-3.0, 0.0, 0.5, 2.0):
            r = ex.evaluate(e, x)
            assert r.finite == (isinstance(r.value, float) and math.isfinite(r.value))


class TestSimplify:
    def test_commutative_ordering(self):
        a = expr(ex.ADD, ex.VAR_X, ex.POW, ex.VAR_X, ex.CONST_2)
        b = expr(ex.ADD, ex.POW, ex.VAR_X, ex.CONST_2, ex.VAR_X)
        assert ex.simplify(a) == ex.simplify(b)

    def test_already_canonical(self):
        e = expr(ex.SIN, ex.VAR_X)
        assert ex.simplify(e) == e

    def test_chain_flattening_orders_across_nesting(self):
        # (a+(b+c)) and ((c+a)+b) meet in one canonical chain
        a = expr(ex.ADD, ex.SIN, ex.VAR_X, ex.ADD, ex.COS, ex.VAR_X, ex.VAR_X)
        b = expr(ex.ADD, ex.ADD, ex.VAR_X, ex.SIN, ex.VAR_X, ex.COS, ex.VAR_X)
        assert ex.simplify(a) == ex.simplify(b)

    def test_pow_operands_not_reordered(self):
        e = expr(ex.POW, ex.SIN, ex.VAR_X, ex.VAR_X)
        assert ex.simplify(e).preorder == e.preorder

    def test_duplicates_kept_without_coefficients(self):
        e = expr(ex.ADD, ex.VAR_X, ex.VAR_X)
        assert ex.simplify(e).preorder == e.preorder

    @given(expression_trees())
    def test_idempotent(self, e):
        s = ex.simplify(e)
        assert ex.simplify(s) == s

    def test_idempotent_seeded_sample(self):
        from evosr.datagen import random_equation

        rng = np.random.default_rng(11)
        for _ in range(1000):
            e = random_equation(rng)
            s = ex.simplify(e)
            assert ex.simplify(s) == s

    def test_evaluation_equivalence(self):
        from evosr.datagen import random_equation

        rng = np.random.default_rng(5)
        checked = 0
        while checked < 100:
            e = random_equation(rng)
            x = float(rng.uniform(0.1, 4.0))
            r1 = ex.evaluate(e, x)
            r2 = ex.evaluate(ex.simplify(e), x)
            assert r1.finite == r2.finite
            if r1.finite and abs(r1.value) < 1e6:
                assert abs(r1.value - r2.value) <= 1e-9
                checked += 1


class TestTreeEditDistance:
    def test_identical_is_zero(self):
        e = expr(*X2_PLUS_X)
        assert ex.tree_edit_distance(e, e) == 0

    def test_single_relabel(self):
        a = expr(ex.ADD, ex.VAR_X, ex.POW, ex.VAR_X, ex.CONST_2)
        b = expr(ex.ADD, ex.VAR_X, ex.POW, ex.VAR_X, ex.CONST_3)
        assert ex.tree_edit_distance(a, b) == 1

    def test_zero_iff_same_canonical_form(self):
        a = expr(ex.ADD, ex.VAR_X, ex.POW, ex.VAR_X, ex.CONST_2)
        b = expr(ex.ADD, ex.POW, ex.VAR_X, ex.CONST_2, ex.VAR_X)
        assert ex.tree_edit_distance(a, b) == 0
        c = expr(ex.MUL, ex.VAR_X, ex.POW, ex.VAR_X, ex.CONST_2)
        assert ex.tree_edit_distance(a, c) > 0

    def test_insert_only(self):
        a = expr(ex.VAR_X)
        b = expr(ex.SIN, ex.SIN, ex.VAR_X)
        assert ex.tree_edit_distance(a, b) == 2

    @given(expression_trees(max_depth=3), expression_trees(max_depth=3))
    def test_symmetric(self, a, b):
        assert ex.tree_edit_distance(a, b) == ex.tree_edit_distance(b, a)

    @given(expression_trees(max_depth=3), expression_trees(max_depth=3))
    def test_matches_brute_force(self, a, b):
        sa, sb = ex.simplify(a), ex.simplify(b)
        expected = brute_force_ted(expression_to_tuple_tree(sa),
                                   expression_to_tuple_tree(sb))
        assert ex.tree_edit_distance(a, b) == expected

    def test_triangle_inequality_on_random_triples(self):
        from evosr.datagen import random_equation

        rng = np.random.default_rng(3)
        triples = 0
        while triples < 50:
            es = [random_equation(rng, max_len=7) for _ in range(3)]
            if any(len(e) > 7 for e in es):
                continue
            d01 = ex.tree_edit_distance(es[0], es[1])
            d12 = ex.tree_edit_distance(es[1], es[2])
            d02 = ex.tree_edit_distance(es[0], es[2])
            assert d02 <= d01 + d12
            triples += 1


class TestRendering:
    def test_infix(self):
        e = expr(*X2_PLUS_X)
        assert ex.render_infix(e) == "((x^2)+x)"

    def test_infix_unary(self):
        assert ex.render_infix(expr(ex.SIN, ex.VAR_X)) == "sin(x)"

    @given(expression_trees())
    def test_preorder_text_round_trip(self, e):
        assert ex.parse_rendered_preorder(ex.render_preorder(e)) == e
