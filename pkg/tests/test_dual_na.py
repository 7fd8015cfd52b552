import numpy as np
import pytest

from lddr.basis import NA, BasisSpec, DualCoefficients
from lddr.dual_na import NaOracle, centered_values, evaluate_na, na_cut, pi_bound, pi_values
from lddr.evalstat import exact_dual_value, exact_pi_value, extensive_optimum
from lddr.master import MasterOptions, train
from lddr.process import ScenarioPath, make_rng
from lddr.verify import finite_difference_ok, random_weights


@pytest.fixture(scope="module")
def na_all(oracle):
    _, inst = oracle
    return DualCoefficients.zeros(BasisSpec(NA, 1, "all"), inst)


def test_zero_weights_give_perfect_information(small_inst, small_paths):
    c = DualCoefficients.zeros(BasisSpec(NA, 3, "x"), small_inst)
    pi = pi_values(small_inst, small_paths[:3])
    for k, p in enumerate(small_paths[:3]):
        assert evaluate_na(c, small_inst, p).value == pytest.approx(pi[k], rel=1e-9)


def test_weak_duality_on_oracle(oracle, na_all):
    tree, inst = oracle
    opt = extensive_optimum(tree, inst)
    rng = make_rng(1, "na-weak")
    for _ in range(20):
        assert exact_dual_value(random_weights(na_all, rng), inst, tree) <= opt + 1e-6 * abs(opt)


def test_pi_below_optimum(oracle):
    tree, inst = oracle
    assert exact_pi_value(inst, tree) <= extensive_optimum(tree, inst) + 1e-9


def test_pi_of_single_path_has_no_halfwidth(small_inst, small_paths):
    one = ScenarioPath(small_paths[0].demands, 1.0, 0, small_paths[0].latent_y, small_paths[0].latent_delta)
    est = pi_bound(small_inst, [one])
    assert est.halfwidth == 0.0 and est.n == 1
    assert est.mean == pytest.approx(pi_values(small_inst, [one])[0])


def test_centered_values_vanish_in_expectation_on_tree(oracle, na_all):
    tree, inst = oracle
    leaves = tree.leaves()
    mean = sum(p.prob * centered_values(na_all.layout, inst.process, p) for p in leaves)
    assert np.allclose(mean, 0.0, atol=1e-9)


def test_cuts_tight_and_valid(oracle, na_all):
    tree, inst = oracle
    leaves = tree.leaves()
    rng = make_rng(2, "na-probe")
    point = random_weights(na_all, rng, 10.0)
    for cut in na_cut(point, inst, leaves):
        leaf = leaves[cut.scenario]
        assert cut.value(point.weights) == pytest.approx(evaluate_na(point, inst, leaf).value, rel=1e-9)
        for _ in range(50):
            w = random_weights(na_all, rng).weights
            f = evaluate_na(na_all.with_weights(w), inst, leaf).value
            assert f <= cut.value(w) + 1e-6 * max(1.0, abs(f))


def test_finite_difference(oracle, na_all):
    tree, inst = oracle
    leaf = tree.leaves()[1]
    rng = make_rng(3, "na-fd")
    assert finite_difference_ok(na_all.layout.size,
                                lambda w: evaluate_na(na_all.with_weights(w), inst, leaf).value,
                                lambda w: evaluate_na(na_all.with_weights(w), inst, leaf).grad, rng)


def test_trained_value_at_least_pi_and_grows_with_penalized_set(oracle):
    tree, inst = oracle
    leaves = tree.leaves()
    opts = MasterOptions(tol=1e-9)
    pi = exact_pi_value(inst, tree)
    x_only = train(NA, inst, leaves, BasisSpec(NA, 1, "x"), opts).value
    every = train(NA, inst, leaves, BasisSpec(NA, 1, "all"), opts).value
    assert x_only >= pi - 1e-9 * abs(pi)
    assert every >= x_only - 1e-6 * abs(x_only)
    assert every <= extensive_optimum(tree, inst) * (1 + 1e-6)


def test_oracle_scale_and_values(small_inst, small_paths):
    c = DualCoefficients.zeros(BasisSpec(NA, 3, "x"), small_inst)
    orc = NaOracle(c, small_inst, small_paths[:2])
    vals, grads = orc(np.zeros(orc.dim))
    assert np.allclose(vals, pi_values(small_inst, small_paths[:2]))
    assert grads.shape == (2, orc.dim)
    assert np.all(orc.scale() > 0)
