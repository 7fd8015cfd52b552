import numpy as np
import pytest

from lddr.basis import (NA, SW, BasisRow, BasisSpec, CoefLayout, Demand, DualCoefficients,
                        UnsupportedStructure, default_sample_size, lift_sw_to_na, lift_sw_weights,
                        na_basis_values, na_centered_values, sw_basis_values)
from lddr.instance import generate_instance
from lddr.process import sample_paths


def rows_at(spec, T, J, t, j=0, var=None):
    return [r for r in spec.catalog(T, J) if r.stage == t and r.product == j and (var is None or r.var == var)]


def test_sw_option4_has_constant_and_own_demand():
    for t in (2, 3):
        (row,) = rows_at(BasisSpec(SW, 4), 4, 3, t, 1)
        assert row.bases == (None, Demand(t, 1))


def test_sw_option1_length():
    (row,) = rows_at(BasisSpec(SW, 1), 4, 3, 2, 0)
    assert len(row.bases) == 7


def test_na_last_stage_is_empty():
    spec = BasisSpec(NA, 1, "all")
    assert all(r.bases == () for r in spec.catalog(3, 2) if r.stage == 3)
    lay = CoefLayout.build(spec, 3, 2)
    assert not np.any(lay.stage == 3)


def test_na_option3_future_own_demands():
    (row,) = rows_at(BasisSpec(NA, 3, "x"), 4, 2, 1, 1)
    assert row.bases == (Demand(2, 1), Demand(3, 1), Demand(4, 1))


@pytest.mark.parametrize("kind", [SW, NA])
def test_option1_nests_the_others(kind):
    T, J = 4, 3
    big = {(r.stage, r.var, r.product): set(r.bases) for r in BasisSpec(kind, 1, "all").catalog(T, J)}
    for opt in (2, 3, 4):
        for r in BasisSpec(kind, opt, "all").catalog(T, J):
            assert set(r.bases) <= big[(r.stage, r.var, r.product)]


def test_sw_stage1_rows_dropped_by_default():
    assert min(r.stage for r in BasisSpec(SW, 1).catalog(3, 2)) == 2
    assert min(r.stage for r in BasisSpec(SW, 1, keep_stage1=False).catalog(3, 2)) == 1


def test_na_var_sets():
    for vars_, kinds in [("x", {"x"}), ("state", {"ip", "im"}), ("all", {"x", "ip", "im"})]:
        assert {r.var for r in BasisSpec(NA, 3, vars_).catalog(3, 1)} == kinds
    with pytest.raises(ValueError):
        BasisSpec(NA, 3, "y")


def test_bad_option_rejected():
    with pytest.raises(ValueError):
        BasisSpec(SW, 5)


def test_known_bases_are_dropped_from_na_layout():
    """Constants and already observed demands center to zero and get no weight."""
    rows = (BasisRow(1, "x", 0, (None, Demand(1, 0), Demand(2, 0))),)
    spec = BasisSpec(NA, None, "x", rows=rows)
    lay = CoefLayout.build(spec, 2, 1)
    assert lay.size == 1 and lay.b_stage[0] == 2
    inst = generate_instance(2, 1, seed=0)
    path = sample_paths(inst.process, 1, "c")[0]
    cen = na_centered_values(spec, inst, path, 1)[0]
    assert cen[0] == 0.0 and cen[1] == 0.0


def test_future_demand_in_sw_row_rejected():
    rows = (BasisRow(2, "state", 0, (Demand(3, 0),)),)
    with pytest.raises(ValueError):
        CoefLayout.build(BasisSpec(SW, None, rows=rows), 3, 1)


def test_centered_values_average_to_zero():
    inst = generate_instance(4, 2, seed=1)
    spec = BasisSpec(NA, 1, "x")
    path = sample_paths(inst.process, 1, "p")[0]
    t = 2
    conts = inst.process.conditional_sample(path, t, 20_000, "cont")
    vals = np.array([np.concatenate(na_centered_values(spec, inst, c, t)) for c in conts])
    se = vals.std(axis=0, ddof=1) / np.sqrt(len(vals))
    assert np.all(np.abs(vals.mean(axis=0)) <= 3 * se + 1e-9)


def test_basis_values_read_the_path(small_inst, small_paths):
    p = small_paths[0]
    sw = sw_basis_values(BasisSpec(SW, 4), small_inst, p, 2)
    assert np.allclose(sw[1], [1.0, p.demands[1, 1]])
    na = na_basis_values(BasisSpec(NA, 4, "x"), small_inst, p, 1)
    assert np.allclose(na[0], [p.demands[1, 0]])


def test_coefficients_json_round_trip(small_inst):
    c = DualCoefficients.zeros(BasisSpec(NA, 3, "state"), small_inst)
    c = c.with_weights(np.arange(c.layout.size, dtype=float))
    back = DualCoefficients.from_json(c.to_json())
    assert np.array_equal(back.weights, c.weights)
    assert back.layout.labels() == c.layout.labels()
    assert c.to_json()["basisCountReported"] == c.layout.size


def test_coefficients_validate_shape(small_inst):
    c = DualCoefficients.zeros(BasisSpec(SW, 1), small_inst)
    with pytest.raises(ValueError):
        c.with_weights(np.zeros(c.layout.size + 1))
    with pytest.raises(ValueError):
        c.with_weights(np.full(c.layout.size, np.nan))


def test_lift_of_option4_attaches_demands_to_both_stages():
    inst = generate_instance(3, 2, seed=0)
    lifted = lift_sw_to_na(BasisSpec(SW, 4), inst)
    by_key = {(r.stage, r.var, r.product): r.bases for r in lifted.catalog(3, 2)}
    for t in (2, 3):
        for j in range(2):
            for var in ("ip", "im"):
                assert Demand(t, j) in by_key[(t, var, j)]
            for var in ("ip", "im", "x"):
                assert Demand(t, j) in by_key[(t - 1, var, j)]


def test_lift_rejects_foreign_structure():
    class Fake:
        T = J = 1

    with pytest.raises(UnsupportedStructure):
        lift_sw_to_na(BasisSpec(SW, 4), Fake())


def test_lifted_weights_match_shapes(oracle):
    _, inst = oracle
    sw = DualCoefficients.zeros(BasisSpec(SW, 4), inst)
    sw = sw.with_weights(np.linspace(-3, 3, sw.layout.size))
    na_lay = CoefLayout.build(lift_sw_to_na(BasisSpec(SW, 4), inst), inst.T, inst.J)
    w = lift_sw_weights(sw, na_lay)
    assert w.shape == (na_lay.size,)
    assert np.count_nonzero(w) > 0


def test_default_sample_sizes():
    assert default_sample_size("sw", 4, 10) == 13 * 10
    assert default_sample_size("na", 3, 10) == 34 * 10
    assert default_sample_size("na", 2, 7, "eval") == 125 * 7
