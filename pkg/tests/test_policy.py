from dataclasses import replace

import numpy as np
import pytest

from lddr.basis import NA, SW, BasisSpec, DualCoefficients
from lddr.dual_na import pi_values
from lddr.evalstat import exact_policy_value, extensive_optimum
from lddr.instance import build_mslot, extensive_form
from lddr.policy import (PolicyConfig, check_run, cluster_scenarios, condexp_stage_model,
                         nadriven_stage_model, simulate, swdriven_stage_model)
from lddr.process import ProcessParams, sample_paths
from lddr.solve import solve

from helpers import two_leaf_tree


@pytest.fixture(scope="module")
def sw_coeffs(small_inst):
    c = DualCoefficients.zeros(BasisSpec(SW, 1), small_inst)
    return c.with_weights(np.linspace(-5, 5, c.layout.size))


@pytest.fixture(scope="module")
def na_coeffs(small_inst):
    c = DualCoefficients.zeros(BasisSpec(NA, 3, "x"), small_inst)
    return c.with_weights(np.linspace(-2, 2, c.layout.size))


def test_zero_variance_condexp_is_perfect_information():
    mu = np.array([[80.0, 120.0], [150.0, 60.0], [90.0, 110.0]])
    proc = ProcessParams(0.6, 0.2, mu, eps_std=0.0, delta_std_factor=0.0)
    inst = build_mslot(proc)
    path = sample_paths(proc, 1, "d")[0]
    assert np.array_equal(path.demands, mu)
    run = simulate(PolicyConfig(), inst, path)
    assert run.total == pytest.approx(pi_values(inst, [path])[0], rel=1e-6)


def test_condexp_model_dimensions(small_inst, small_paths):
    p = small_paths[0]
    for t in range(1, small_inst.T + 1):
        tm = condexp_stage_model(small_inst, p, t, None if t == 1 else np.zeros(small_inst.layout.n))
        assert len(tm.nodes) == small_inst.T - t + 1
        assert tm.model.n == len(tm.nodes) * small_inst.layout.n


def test_sw_model_with_zero_lambda_is_condexp(small_inst, small_paths, sw_coeffs):
    p = small_paths[0]
    a = condexp_stage_model(small_inst, p, 1, None).model
    b = swdriven_stage_model(small_inst, p, 1, None, sw_coeffs, 0.0).model
    assert np.array_equal(a.c, b.c) and (a.A != b.A).nnz == 0


def test_sw_model_with_zero_weights_scales_future(small_inst, small_paths):
    p = small_paths[0]
    zero = DualCoefficients.zeros(BasisSpec(SW, 1), small_inst)
    m = swdriven_stage_model(small_inst, p, 1, None, zero, 0.25).model
    n = small_inst.layout.n
    assert np.array_equal(m.c[:n], small_inst.stage_cost(1))
    assert np.allclose(m.c[n:2 * n], 0.75 * small_inst.stage_cost(2))


def test_sw_model_last_stage_has_no_penalty(small_inst, small_paths, sw_coeffs):
    T = small_inst.T
    m = swdriven_stage_model(small_inst, small_paths[0], T, np.zeros(small_inst.layout.n), sw_coeffs, 0.5).model
    assert np.array_equal(m.c, small_inst.stage_cost(T))


def test_sw_policy_with_zero_lambda_matches_condexp(small_inst, small_paths, sw_coeffs):
    for p in small_paths[:2]:
        a = simulate(PolicyConfig(), small_inst, p).total
        b = simulate(PolicyConfig(SW, 0.0, sw_coeffs), small_inst, p).total
        assert a == pytest.approx(b, rel=1e-9)


def test_runs_are_feasible(small_inst, small_paths, sw_coeffs, na_coeffs):
    cfgs = [PolicyConfig(), PolicyConfig(SW, 0.25, sw_coeffs),
            PolicyConfig(NA, coeffs=na_coeffs, n_raw=30, n_clusters=6)]
    for cfg in cfgs:
        run = simulate(cfg, small_inst, small_paths[0])
        assert check_run(small_inst, small_paths[0], run) <= 1e-6
        assert run.total == pytest.approx(run.stage_costs.sum())


def test_lambda_grid_values_are_finite_and_above_pi(small_inst, small_paths, sw_coeffs):
    p = small_paths[1]
    pi = pi_values(small_inst, [p])[0]
    for lam in (0.0, 0.25, 0.5, 1.0):
        total = simulate(PolicyConfig(SW, lam, sw_coeffs), small_inst, p).total
        assert np.isfinite(total) and total >= pi - 1e-6 * abs(pi)


def test_na_model_with_zero_weights_is_plain_two_stage(small_inst, small_paths):
    zero = DualCoefficients.zeros(BasisSpec(NA, 3, "x"), small_inst)
    cfg = PolicyConfig(NA, coeffs=zero, n_raw=30, n_clusters=5)
    tm = nadriven_stage_model(small_inst, small_paths[0], 1, None, zero, cfg)
    n = small_inst.layout.n
    weights = [nd.weight for nd in tm.nodes if nd.stage == 2]
    assert len(weights) == 6 and sum(weights) == pytest.approx(1.0)
    for k, nd in enumerate(tm.nodes[1:], start=1):
        assert np.allclose(tm.model.c[k * n:(k + 1) * n], nd.weight * small_inst.stage_cost(nd.stage))


def test_na_model_last_stage_is_deterministic(small_inst, small_paths, na_coeffs):
    T = small_inst.T
    cfg = PolicyConfig(NA, coeffs=na_coeffs, n_raw=30, n_clusters=5)
    tm = nadriven_stage_model(small_inst, small_paths[0], T, np.zeros(small_inst.layout.n), na_coeffs, cfg)
    assert len(tm.nodes) == 1


def test_na_decision_on_tiny_tree_matches_two_stage_optimum():
    tree = two_leaf_tree(40.0, 220.0)
    inst = build_mslot(tree)
    zero = DualCoefficients.zeros(BasisSpec(NA, 3, "x"), inst)
    cfg = PolicyConfig(NA, coeffs=zero, n_raw=40, n_clusters=2, include_mean=False)
    leaf = tree.leaves()[0]
    tm = nadriven_stage_model(inst, leaf, 1, None, zero, cfg)
    first = tm.block(solve(tm.model, rel_gap=1e-9).x, 0)
    ef = extensive_form(inst, tree.leaves())
    best = solve(ef.model, rel_gap=1e-9).objective
    # the exact model with the policy's first-stage decision fixed loses nothing
    n = inst.layout.n
    lb, ub = ef.model.lb.copy(), ef.model.ub.copy()
    lb[:n] = ub[:n] = first
    fixed = solve(replace(ef.model, lb=lb, ub=ub), rel_gap=1e-9)
    assert fixed.objective == pytest.approx(best, rel=1e-9)


def test_policy_expectation_above_optimum(oracle):
    tree, inst = oracle
    assert exact_policy_value(PolicyConfig(), inst, tree) >= extensive_optimum(tree, inst) - 1e-6


class TestClustering:
    def test_k_equals_n(self):
        raw = np.arange(12.0).reshape(6, 2)
        means, w = cluster_scenarios(raw, 6)
        assert np.allclose(np.sort(means[:, 0]), raw[:, 0])
        assert np.allclose(w, 1 / 6)

    def test_two_separated_groups(self):
        rng = np.random.default_rng(0)
        low = rng.normal(20, 1, size=(30, 3))
        high = rng.normal(200, 1, size=(20, 3))
        means, w = cluster_scenarios(np.vstack([low, high]), 2, seed=3)
        order = np.argsort(means[:, 0])
        assert np.allclose(means[order[0]], low.mean(axis=0))
        assert np.allclose(means[order[1]], high.mean(axis=0))
        assert np.allclose(w[order], [0.6, 0.4])

    def test_duplicates_collapse(self):
        raw = np.array([[1.0], [1.0], [2.0], [2.0], [2.0]])
        means, w = cluster_scenarios(raw, 3)
        assert len(means) == 2 and np.allclose(sorted(w), [0.4, 0.6])

    def test_bad_k(self):
        with pytest.raises(ValueError):
            cluster_scenarios(np.ones((3, 1)), 4)


def test_config_validation(small_inst):
    with pytest.raises(ValueError):
        PolicyConfig(SW)
    with pytest.raises(ValueError):
        PolicyConfig(lam=1.5)
    with pytest.raises(ValueError):
        PolicyConfig("greedy")
