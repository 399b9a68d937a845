import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from occpred.boost import (
    GBTModel,
    GBTParams,
    _grow_reg_tree,
    fit_gbt,
    fit_gbt_multi,
    histogram_split,
    leaf_value,
    logistic_grad_hess,
    logistic_loss,
    predict_gbt,
    sigmoid,
    split_gain,
)
from occpred.dataset import build_windows
from occpred.errors import InputError
from occpred.occupancy import OccupancyGrid

from oracles import reference_gbt_tree


def _nested(tree, node=0):
    if tree.feature[node] < 0:
        return ("leaf", float(tree.value[node]))
    return ("split", int(tree.feature[node]), _nested(tree, tree.left[node]), _nested(tree, tree.right[node]))


class TestPrimitives:
    def test_grad_hess_at_zero_margin(self):
        g, h = logistic_grad_hess(0.0, 1)
        assert (g, h) == (-0.5, 0.25)
        g, h = logistic_grad_hess(0.0, 0)
        assert (g, h) == (0.5, 0.25)

    def test_saturation(self):
        g, h = logistic_grad_hess(40.0, 1)
        assert abs(g) < 1e-15 and h < 1e-15

    def test_leaf_value(self):
        assert leaf_value(0.0, 3.0, 1.0, 0.1) == 0.0
        assert leaf_value(-2.0, 1.0, 1.0, 0.3) == pytest.approx(0.3, abs=1e-15)
        assert leaf_value(5.0, 1.0, 1.0, 0.0) == 0.0

    def test_zero_gradient_gain_is_minus_gamma(self):
        assert split_gain(0.0, 1.0, 0.0, 2.0, 1.0, 0.7) == -0.7

    def test_separating_split_gain_by_hand(self):
        # round 0 on balanced labels: margin 0, g = +-1/2, h = 1/4
        X = np.array([[0], [0], [1], [1]])
        g, h = logistic_grad_hess(np.zeros(4), [0, 0, 1, 1])
        # GL = 1, HL = 1/2, GR = -1, HR = 1/2, lambda = 1
        expect = 0.5 * (1 / 1.5 + 1 / 1.5 - 0 / 2.0)
        f, gain = histogram_split(X, g, h, GBTParams(min_child_hessian=0.0))
        assert f == 0 and gain == pytest.approx(expect, abs=1e-15)

    def test_empty_child_blocked_by_min_hessian(self):
        X = np.array([[0, 1], [0, 0], [0, 1], [0, 0]])
        g = np.array([1.0, -1.0, 1.0, -1.0])
        h = np.full(4, 0.5)
        # feature 0 is constant: its right child is empty
        assert histogram_split(X, g, h, GBTParams(min_child_hessian=1.0))[0] == 1
        assert histogram_split(X[:, :1], g, h, GBTParams(min_child_hessian=1.0)) is None

    def test_sigmoid_is_stable(self):
        s = sigmoid(np.array([-800.0, 0.0, 800.0]))
        assert s.tolist() == [0.0, 0.5, 1.0]


class TestHandTrace:
    # rows:   0  1  2  3  4  5
    # x0:     0  0  0  1  1  1
    # x1:     0  1  0  1  0  1
    # y:      0  0  1  1  1  1
    X = np.array([[0, 0], [0, 1], [0, 0], [1, 1], [1, 0], [1, 1]])
    y = np.array([0, 0, 1, 1, 1, 1])

    def test_one_round_depth_one(self):
        params = GBTParams(n_rounds=1, max_depth=1, learning_rate=0.1, reg_lambda=1.0, min_child_hessian=0.5)
        m = fit_gbt(self.X, self.y, params)
        # base = logit(4/6) = ln 2, p = 2/3, g = 2/3 (y=0) or -1/3 (y=1), h = 2/9
        assert m.base_score == pytest.approx(math.log(2), abs=1e-15)
        # x0 split: left rows {0,1,2}: G = 2/3+2/3-1/3 = 1, H = 2/3; right rows {3,4,5}: G = -1, H = 2/3
        # x1 split has G = 0 on both sides, so gain 0
        # leaves: -0.1 * 1 / (5/3) = -0.06 and -0.1 * (-1) / (5/3) = +0.06
        tree = m.rounds[0]
        assert tree.feature[0] == 0
        assert abs(tree.value[tree.left[0]] - (-0.06)) < 1e-12
        assert abs(tree.value[tree.right[0]] - 0.06) < 1e-12
        margins = m.margin(self.X)
        np.testing.assert_allclose(margins, math.log(2) + np.array([-0.06] * 3 + [0.06] * 3), atol=1e-12, rtol=0)

    def test_min_hessian_blocks_the_split(self):
        # each side only carries H = 2/3 < 1
        m = fit_gbt(self.X, self.y, GBTParams(n_rounds=1, max_depth=1))
        assert m.rounds[0].n_nodes == 1
        assert m.rounds[0].value[0] == pytest.approx(0.0, abs=1e-15)


class TestTreeGrowth:
    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 40), st.integers(1, 7), st.integers(0, 4))
    def test_histogram_reuse_matches_direct_sums(self, seed, n, p, depth):
        # dyadic g, h make every partial sum exact, so structures must match exactly
        r = np.random.default_rng(seed)
        X = r.integers(0, 2, (n, p)).astype(np.uint8)
        g = r.integers(-8, 9, n) / 8.0
        h = r.integers(1, 9, n) / 16.0
        mch = float(r.choice([0.0, 0.25, 0.5]))
        feat, left, right, value, row_value = _grow_reg_tree(X, g, h, depth, 1.0, 0.0, mch, 0.3)

        class T:
            pass

        t = T()
        t.feature, t.left, t.right, t.value = feat, left, right, value
        ref = reference_gbt_tree(X.tolist(), g.tolist(), h.tolist(), depth, 1.0, 0.0, mch, 0.3)
        assert _nested(t) == ref

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_split_search_exhaustive(self, seed):
        r = np.random.default_rng(seed)
        n, p = int(r.integers(2, 30)), int(r.integers(1, 8))
        X = r.integers(0, 2, (n, p))
        g = r.integers(-8, 9, n) / 4.0
        h = r.integers(1, 5, n) / 4.0
        params = GBTParams(min_child_hessian=0.5, reg_lambda=0.5)
        best = None
        for f in range(p):
            m = X[:, f] == 1
            GR, HR, GL, HL = g[m].sum(), h[m].sum(), g[~m].sum(), h[~m].sum()
            if min(HL, HR) < 0.5:
                continue
            gain = split_gain(GL, HL, GR, HR, 0.5, 0.0)
            if gain > 0 and (best is None or gain > best[1]):
                best = (f, gain)
        got = histogram_split(X, g, h, params)
        assert (got is None) == (best is None)
        if best:
            assert got[0] == best[0] and got[1] == pytest.approx(best[1], abs=1e-12)


class TestTraining:
    def test_loss_non_increasing_200_rounds(self, rng):
        for trial in range(5):
            X = rng.integers(0, 2, (400, 12))
            y = ((X[:, 0] & X[:, 3]) | (rng.random(400) < 0.2)).astype(int)
            m = fit_gbt(X, y, GBTParams(n_rounds=200, learning_rate=0.1, gamma=0.0))
            curve = np.array(m.loss_curve)
            assert curve.size == 201
            assert (np.diff(curve) <= 1e-12).all(), trial

    def test_zero_rounds_predict_base_rate(self, rng):
        X = rng.integers(0, 2, (10, 3))
        y = np.array([0, 1] * 5)
        m = fit_gbt(X, y, GBTParams(n_rounds=0))
        assert predict_gbt(m, X).tolist() == [0.5] * 10

    def test_margins_are_additive(self, rng):
        X = rng.integers(0, 2, (120, 6))
        y = X[:, 2] ^ (rng.random(120) < 0.1)
        m = fit_gbt(X, y, GBTParams(n_rounds=10))
        last = m.rounds[-1]
        contrib = GBTModel(0.0, [last], m.params, 6).margin(X)
        # accumulation is sequential, so dropping the last round is exact in this form
        np.testing.assert_array_equal(m.margin(X), m.margin(X, n_rounds=9) + contrib)

    def test_scores_inside_unit_interval(self, rng):
        X = rng.integers(0, 2, (200, 4))
        y = X[:, 0]
        s = predict_gbt(fit_gbt(X, y, GBTParams(n_rounds=50, learning_rate=0.3)), X)
        assert ((s > 0) & (s < 1)).all()

    def test_constant_labels_short_circuit(self, rng):
        X = rng.integers(0, 2, (8, 2))
        m = fit_gbt(X, np.zeros(8))
        assert m.rounds == [] and predict_gbt(m, X).tolist() == [0.1] * 8

    def test_serialization_round_trip(self, rng):
        X = rng.integers(0, 2, (100, 5))
        y = X[:, 1] | X[:, 4]
        m = fit_gbt(X, y, GBTParams(n_rounds=8))
        back = GBTModel.from_dict(m.to_dict())
        np.testing.assert_array_equal(predict_gbt(back, X), predict_gbt(m, X))

    def test_multi_output_independent_of_threads(self, rng):
        ds = build_windows(OccupancyGrid(rng.integers(0, 2, (3, 100))), 4)
        a = fit_gbt_multi(ds, GBTParams(n_rounds=5), n_jobs=1)
        b = fit_gbt_multi(ds, GBTParams(n_rounds=5), n_jobs=3)
        assert [m.to_dict() for m in a.per_bin] == [m.to_dict() for m in b.per_bin]

    @pytest.mark.parametrize("kw", [{"max_depth": 11}, {"n_rounds": -1}, {"learning_rate": -0.1}])
    def test_invalid_params(self, kw):
        with pytest.raises(InputError):
            GBTParams(**kw)

    def test_logistic_loss_matches_direct_formula(self):
        m = np.array([-3.0, 0.0, 2.5])
        y = np.array([0, 1, 1])
        p = 1 / (1 + np.exp(-m))
        direct = -np.mean(y * np.log(p) + (1 - y) * np.log(1 - p))
        assert logistic_loss(m, y) == pytest.approx(direct, rel=1e-14)
