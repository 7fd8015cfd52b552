import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lddr.basis import NA, SW, BasisSpec, DualCoefficients
from lddr.evalstat import (BoundEstimate, SmallMip, confidence_interval, exact_dual_value, extensive_optimum,
                           gap_closure, lemma2_check, lower_bound, ordering_report, random_small_mip,
                           restricted_dual_cutting_plane, restricted_dual_primal)
from lddr.instance import build_mslot
from lddr.process import make_rng

from helpers import point_tree, two_leaf_tree


class TestConfidenceInterval:
    def test_textbook_example(self):
        est = confidence_interval([1, 2, 3, 4, 5])
        assert est.mean == 3.0
        assert est.halfwidth == pytest.approx(2.776 * 1.5811 / np.sqrt(5), abs=1e-3)
        assert est.halfwidth == pytest.approx(1.963, abs=1e-3)
        assert est.bound == pytest.approx(3.0 - est.halfwidth)

    def test_identical_values(self):
        assert confidence_interval([4.0] * 6).halfwidth == 0.0

    def test_level_zero(self):
        assert confidence_interval([1.0, 5.0, 2.0], level=0.0).halfwidth == 0.0

    def test_single_value_flagged(self):
        est = confidence_interval([7.0])
        assert est.halfwidth == 0.0 and "single-sample" in est.flags

    def test_upper_side(self):
        est = confidence_interval([1, 2, 3], side="upper")
        assert est.bound == pytest.approx(est.mean + est.halfwidth)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            confidence_interval([])

    def test_halfwidth_shrinks_like_root_n(self):
        rng = make_rng(0, "ci")
        ratios = []
        for _ in range(200):
            small = confidence_interval(rng.normal(size=200)).halfwidth
            large = confidence_interval(rng.normal(size=400)).halfwidth
            ratios.append(small / large)
        assert 1.3 <= np.mean(ratios) <= 1.5

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=30))
    def test_halfwidth_nonnegative(self, values):
        assert confidence_interval(values).halfwidth >= 0


class TestExact:
    def test_one_leaf_is_deterministic_optimum(self):
        from lddr.dual_na import pi_values

        tree = point_tree([[90.0, 30.0], [120.0, 10.0]])
        inst = build_mslot(tree)
        assert extensive_optimum(tree, inst) == pytest.approx(pi_values(inst, tree.leaves())[0], rel=1e-9)

    def test_two_leaves_weigh_halves(self):
        from lddr.dual_na import pi_values

        tree = two_leaf_tree()
        inst = build_mslot(tree)
        opt = extensive_optimum(tree, inst)
        # the shared first stage costs something, so the optimum sits above the PI average
        assert opt >= 0.5 * pi_values(inst, tree.leaves()).sum() - 1e-9

    def test_size_guard(self):
        from lddr.process import FiniteSupportProcess

        tree = FiniteSupportProcess.stagewise([[[1.0]]] + [[[1.0], [2.0]]] * 7, [[1.0]] + [[0.5, 0.5]] * 7)
        with pytest.raises(ValueError):
            extensive_optimum(tree, build_mslot(tree))

    def test_random_weights_bound_below_optimum(self, oracle):
        tree, inst = oracle
        opt = extensive_optimum(tree, inst)
        c = DualCoefficients.zeros(BasisSpec(SW, 1), inst)
        rng = make_rng(0, "lb")
        for _ in range(5):
            w = c.with_weights(rng.uniform(-100, 100, size=c.layout.size))
            assert exact_dual_value(w, inst, tree) <= opt + 1e-6 * opt


class TestLowerBound:
    def test_zero_na_weights_are_pi(self, small_inst, small_paths):
        zero = DualCoefficients.zeros(BasisSpec(NA, 3, "x"), small_inst)
        a = lower_bound(NA, zero, small_inst, small_paths)
        b = lower_bound("pi", None, small_inst, small_paths)
        assert a.mean == pytest.approx(b.mean)

    def test_deterministic(self, small_inst, small_paths):
        c = DualCoefficients.zeros(BasisSpec(SW, 4), small_inst)
        c = c.with_weights(np.ones(c.layout.size))
        assert lower_bound(SW, c, small_inst, small_paths) == lower_bound(SW, c, small_inst, small_paths)

    def test_kind_mismatch(self, small_inst, small_paths):
        c = DualCoefficients.zeros(BasisSpec(SW, 4), small_inst)
        with pytest.raises(ValueError):
            lower_bound(NA, c, small_inst, small_paths)


class TestRestrictedDualRoutes:
    def knapsack(self):
        # two integer variables in [0, 4] with a knapsack row, one relaxed equality
        return SmallMip(np.array([-3.0, -2.0]), np.array([[1.0, -1.0]]), np.array([1.0]),
                        np.zeros(2), np.full(2, 4.0), np.array([[2.0, 3.0]]), np.array([9.0]))

    def test_identity_aggregation_matches_full_dual(self):
        mip = self.knapsack()
        res = lemma2_check(mip, np.eye(1))
        assert res.passed
        assert res.primal == pytest.approx(restricted_dual_primal(mip, np.eye(1)))

    def test_zero_aggregation_is_convex_hull_minimum(self):
        mip = self.knapsack()
        pts = mip.points()
        res = lemma2_check(mip, np.zeros((1, 0)))
        assert res.passed
        assert res.primal == pytest.approx(float((pts @ mip.c).min()))

    def test_both_routes_agree_on_random_instances(self):
        rng = make_rng(0, "lemma2-test")
        for _ in range(10):
            mip, G = random_small_mip(rng)
            a, _ = restricted_dual_cutting_plane(mip, G)
            b = restricted_dual_primal(mip, G)
            assert abs(a - b) <= 1e-6 * (1 + abs(b))

    def test_enumeration_overflow(self):
        mip = SmallMip(np.zeros(3), np.zeros((1, 3)), np.zeros(1), np.zeros(3), np.full(3, 9.0))
        with pytest.raises(OverflowError):
            mip.points()


def est(mean, hw=0.0, side="lower", method=""):
    return BoundEstimate(mean, hw, 500, 0.95, side, method)


class TestReport:
    def test_closure_example(self):
        assert gap_closure(46584.6, 47189.4, 49406.4, 49406.4) == pytest.approx(604.8 / 2821.8)
        rep = ordering_report("x", {"pi": est(46584.6), "na_lb": est(47189.4), "sw_lb": est(40000.0),
                                    "condexp": est(49406.4, side="upper"), "sw_ub": est(49406.4, side="upper"),
                                    "na_ub": est(49500.0, side="upper")})
        assert round(100 * rep.closure, 1) == 21.4
        assert rep.flags == []

    def test_degenerate(self):
        assert gap_closure(100.0, 100.0, 100.0, 100.0) == "degenerate"

    def test_violations_flagged(self):
        rep = ordering_report("x", {"pi": est(100.0, 1.0), "na_lb": est(90.0, 1.0), "condexp": est(95.0, side="upper")})
        assert "violation:pi>na_lb" in rep.flags
        assert "violation:pi>condexp" in rep.flags
        assert "missing:sw_lb" in rep.flags

    def test_overlap_is_not_a_violation(self):
        rep = ordering_report("x", {"pi": est(100.0, 6.0), "na_lb": est(95.0, 6.0)})
        assert not any(f.startswith("violation") for f in rep.flags)
