import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lddr.instance import (Knobs, MslotInstance, StructureError, build_mslot, build_tree_model,
                           chain_nodes, extensive_form, generate_instance, prefix_tree, stage_block,
                           state_matrices, zero_production_solution)
from lddr.process import ParameterError, ProcessParams, ScenarioPath, sample_paths
from lddr.solve import solve

from helpers import point_tree, two_leaf_tree


@pytest.fixture(scope="module")
def flat_inst():
    return build_mslot(ProcessParams(0.6, 0.2, np.full((3, 3), 100.0)))


def test_derived_parameters_for_flat_means(flat_inst):
    inst = flat_inst
    assert np.allclose(inst.cap, 450.0)
    assert np.allclose(inst.over_cap, 112.5)
    assert np.allclose(inst.inv_cap, 1000.0)
    assert np.allclose(inst.bigm, 600.0)
    assert np.allclose(inst.setup, 7200.0)
    assert np.allclose(inst.ts, 25.0)


def test_cost_structure(flat_inst):
    inst = flat_inst
    assert np.all(inst.hold == 15.0)
    assert np.all(inst.backlog[:-1] == 30.0)
    assert np.all(inst.backlog[-1] == 150.0)
    assert np.all(inst.backlog[-1] > inst.backlog[:-1])
    lay = inst.layout
    c = inst.stage_cost(1)
    assert c[lay.x(0)] == 0.0
    assert c[lay.o] == 100.0


def test_state_row_first_stage():
    inst = build_mslot(point_tree([[100.0], [100.0]]))
    blk = stage_block(inst, 1, [50.0])
    lay = inst.layout
    assert blk.B is None
    assert blk.A[0, lay.im(0)] == 1.0 and blk.A[0, lay.ip(0)] == -1.0
    assert blk.b[0] == 50.0


def test_setup_and_capacity_rows(flat_inst):
    blk = stage_block(flat_inst, 2, [10.0, 20.0, 30.0])
    lay = flat_inst.layout
    setup = blk.C[1]
    assert setup[lay.y(0)] == 600.0 and setup[lay.x(0)] == -1.0 and blk.d[1] == 0.0
    cap = -blk.C[0]
    assert cap[lay.y(1)] == 25.0 and cap[lay.x(1)] == 1.0 and cap[lay.o] == -1.0
    assert -blk.d[0] == 450.0


def test_dimension_audit(small_inst):
    lay = small_inst.layout
    for t in range(1, small_inst.T + 1):
        blk = stage_block(small_inst, t, np.ones(small_inst.J))
        assert blk.A.shape == (small_inst.J, lay.n)
        assert blk.C.shape[1] == lay.n == len(blk.c) == len(blk.lb) == len(blk.ub)
        assert blk.integrality.sum() == small_inst.J
        assert len(lay.names(t)) == lay.n


@settings(max_examples=30, deadline=None)
@given(data=st.data())
def test_relatively_complete_recourse(data):
    inst = generate_instance(3, 2, seed=data.draw(st.integers(0, 50)))
    prev = None
    for t in range(1, inst.T + 1):
        d = np.array(data.draw(st.lists(st.floats(0, 500), min_size=2, max_size=2)))
        x = zero_production_solution(inst, prev, t, d)
        tm = build_tree_model(inst, chain_nodes(inst, np.tile(d, (inst.T, 1)), t)[:1], prev)
        assert tm.model.violation(x) <= 1e-9
        # any feasible decision will do as the next predecessor
        res = solve(tm.model)
        prev = tm.block(res.x, 0)


def test_json_round_trip_and_hash(small_inst):
    obj = small_inst.to_json()
    back = MslotInstance.from_json(json.loads(json.dumps(obj)))
    assert back.content_hash() == small_inst.content_hash()
    assert np.array_equal(back.setup, small_inst.setup)


def test_generation_is_deterministic():
    a = generate_instance(4, 3, 0.6, 0.2, seed=7)
    b = generate_instance(4, 3, 0.6, 0.2, seed=7)
    assert json.dumps(a.to_json(), sort_keys=True) == json.dumps(b.to_json(), sort_keys=True)
    assert a.T == 4 and a.J == 3
    assert np.all((a.process.mu >= 40) & (a.process.mu <= 160))


def test_bad_knob_rejected():
    with pytest.raises(ParameterError):
        Knobs(util=0.0)


def test_single_path_is_deterministic_problem(small_inst, small_paths):
    p = small_paths[0]
    one = ScenarioPath(p.demands, 1.0, 0)
    a = solve(extensive_form(small_inst, [one]).model, rel_gap=1e-9).objective
    b = solve(build_tree_model(small_inst, chain_nodes(small_inst, p.demands)).model, rel_gap=1e-9).objective
    assert np.isclose(a, b, rtol=1e-9)


def test_two_leaf_expansion():
    tree = two_leaf_tree()
    inst = build_mslot(tree)
    tm = extensive_form(inst, tree.leaves())
    res = solve(tm.model, rel_gap=1e-9)
    first = tm.block(res.x, 0)
    # stage-2 recourse solved leaf by leaf given the shared first-stage decision
    second = [solve(build_tree_model(inst, [chain_nodes(inst, leaf.demands, 2)[0]], first).model,
                    rel_gap=1e-9).objective for leaf in tree.leaves()]
    assert np.isclose(res.objective, inst.stage_cost(1) @ first + 0.5 * sum(second), rtol=1e-9)


def test_prefix_tree_merges_shared_history(oracle):
    tree, _ = oracle
    nodes, ids = prefix_tree(tree.leaves())
    assert len(nodes) == 1 + 2 + 4
    assert nodes[0].weight == pytest.approx(1.0)
    assert len({i[1] for i in ids}) == 2


def test_prefix_tree_rejects_bad_probabilities(small_paths):
    with pytest.raises(StructureError):
        prefix_tree(small_paths[:2])


def test_state_matrices_pattern(small_inst):
    A, B = state_matrices(small_inst)
    lay = small_inst.layout
    assert B[1, lay.x(1)] == 1.0 and B[1, lay.ip(1)] == 1.0 and B[1, lay.im(1)] == -1.0
    assert np.count_nonzero(A) == 2 * small_inst.J


def test_extensive_form_on_samples(small_inst):
    paths = sample_paths(small_inst.process, 3, "ef")
    tm = extensive_form(small_inst, paths)
    # continuous stage-1 demand: no two sampled paths share a prefix
    assert len(tm.nodes) == 3 * small_inst.T
