"""Stagewise Lagrangian relaxation restricted to decision-rule multipliers.

Relaxing the state equations with ``pi_t = Phi_t beta`` splits a path into
independent stage problems

    L_t = min_{x in X_t} (c_t + A_t' pi_t + B_{t+1}' E[pi_{t+1} | xi^t])' x - pi_t' b_t,

whose sum is the path's dual value. With the stage-1 rows kept, stage 1 also
enforces ``A_1 x_1 = b_1``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp

from .basis import SW, CoefLayout, DualCoefficients, path_forecasts
from .instance import MslotInstance, recourse_rows, state_matrices
from .master import Cut
from .solve import MipModel, require_optimal, solve


@dataclass(eq=False)
class SwEvaluation:
    stage_values: np.ndarray     # folded: objective at the argmin incl. -pi_t' b_t
    constants: np.ndarray        # -pi_t' b_t
    solutions: list[np.ndarray]
    total: float
    grad: np.ndarray


class SwTables:
    """Per-path basis values: ``val`` at the row's own stage and ``pre`` = E[. | xi^{t-1}]."""

    def __init__(self, layout: CoefLayout, process, path):
        F = path_forecasts(process, path)
        self.val = layout.evaluate(path.demands)
        self.pre = layout.evaluate(F, np.maximum(layout.stage - 1, 0))


def _multipliers(layout: CoefLayout, coef: np.ndarray, w: np.ndarray, t: int) -> np.ndarray:
    mask = layout.stage == t
    return np.bincount(layout.product[mask], weights=(coef * w)[mask], minlength=layout.J)


def stage_model(inst: MslotInstance, t: int, demand_t, keep_state: bool) -> MipModel:
    """MIP over ``X_t`` (plus ``A_t x = b_t`` when ``keep_state``) with zero objective."""
    key = ("sw_stage", t, keep_state)
    if key not in inst._cache:
        C, d, lb, ub = recourse_rows(inst, t)
        A, _ = state_matrices(inst)
        M = np.vstack([A, C]) if keep_state else C
        inst._cache[key] = sp.csr_matrix(M)
    M = inst._cache[key]
    C, d, lb, ub = recourse_rows(inst, t)
    lo = d
    hi = np.full(len(d), np.inf)
    if keep_state:
        dem = np.asarray(demand_t, dtype=float)
        lo = np.concatenate([dem, d])
        hi = np.concatenate([dem, hi])
    return MipModel(np.zeros(inst.layout.n), M, lo, hi, lb, ub, inst.layout.integrality())


def sw_stage_objective(coeffs: DualCoefficients, inst: MslotInstance, path, t: int,
                       tables: SwTables | None = None) -> tuple[np.ndarray, float]:
    """Objective over stage-``t`` variables and the constant ``-pi_t' b_t``."""
    if coeffs.kind != SW:
        raise ValueError("SW objective needs SW coefficients")
    lay = coeffs.layout
    tab = tables or SwTables(lay, inst.process, path)
    A, B = state_matrices(inst)
    w = coeffs.weights
    pi = _multipliers(lay, tab.val, w, t)
    obj = inst.stage_cost(t) + A.T @ pi
    if t < inst.T:
        # E[Phi_{t+1} | xi^t]: the row stage is t+1, so "pre" is exactly the conditional mean at t
        obj = obj + B.T @ _multipliers(lay, tab.pre, w, t + 1)
    return obj, float(-pi @ path.demands[t - 1])


def evaluate_sw(coeffs: DualCoefficients, inst: MslotInstance, path, tables: SwTables | None = None,
                rel_gap: float = 1e-9) -> SwEvaluation:
    """Solve the ``T`` stage problems of one path and assemble value and supergradient."""
    if coeffs.kind != SW:
        raise ValueError("SW evaluation needs SW coefficients")
    lay = coeffs.layout
    tab = tables or SwTables(lay, inst.process, path)
    A, B = state_matrices(inst)
    keep1 = lay.spec.keep_stage1
    T = inst.T
    values = np.empty(T)
    consts = np.empty(T)
    sols = []
    for t in range(1, T + 1):
        obj, const = sw_stage_objective(coeffs, inst, path, t, tab)
        m = replace(stage_model(inst, t, path.demands[t - 1], keep1 and t == 1), c=obj)
        res = require_optimal(solve(m, rel_gap=rel_gap, check=False),
                              f"SW stage {t}, scenario {path.id}")
        sols.append(res.x)
        consts[t - 1] = const
        values[t - 1] = float(obj @ res.x) + const
    grad = np.zeros(lay.size)
    for i in range(lay.size):
        t, j = lay.stage[i], lay.product[i]
        resid = A[j] @ sols[t - 1] - path.demands[t - 1, j]
        grad[i] = tab.val[i] * resid
        if t > 1:
            grad[i] += tab.pre[i] * (B[j] @ sols[t - 2])
    return SwEvaluation(values, consts, sols, float(values.sum()), grad)


def sw_cut(coeffs_at: DualCoefficients, inst: MslotInstance, paths, iteration: int = 0) -> list[Cut]:
    out = []
    for p in paths:
        ev = evaluate_sw(coeffs_at, inst, p)
        out.append(Cut(p.id, ev.total, ev.grad, np.array(coeffs_at.weights), iteration))
    return out


def sw_value_from_solutions(coeffs: DualCoefficients, inst, path, sols) -> float:
    """Dual objective of fixed stage solutions at ``coeffs`` (affine in the weights)."""
    tab = SwTables(coeffs.layout, inst.process, path)
    total = 0.0
    for t in range(1, inst.T + 1):
        obj, const = sw_stage_objective(coeffs, inst, path, t, tab)
        total += float(obj @ sols[t - 1]) + const
    return total


class SwOracle:
    """Scenario values and supergradients of the SW dual for a fixed path set."""

    kind = SW

    def __init__(self, coeffs0: DualCoefficients, inst: MslotInstance, paths, rel_gap: float = 1e-9):
        self.template = coeffs0
        self.inst = inst
        self.paths = list(paths)
        self.rel_gap = rel_gap
        self.tables = [SwTables(coeffs0.layout, inst.process, p) for p in self.paths]
        self.probs = np.array([p.prob for p in self.paths])
        self.evaluations = 0

    @property
    def dim(self) -> int:
        return self.template.layout.size

    def scale(self) -> np.ndarray:
        """Typical inverse magnitude of each weight's basis value."""
        mag = np.mean([np.abs(tb.val) for tb in self.tables], axis=0) if self.tables else np.ones(self.dim)
        return 1.0 / np.maximum(mag, 1.0)

    def __call__(self, w: np.ndarray):
        coeffs = self.template.with_weights(w)
        vals = np.empty(len(self.paths))
        grads = np.empty((len(self.paths), self.dim))
        for k, (p, tb) in enumerate(zip(self.paths, self.tables)):
            ev = evaluate_sw(coeffs, self.inst, p, tb, self.rel_gap)
            vals[k] = ev.total
            grads[k] = ev.grad
        self.evaluations += 1
        return vals, grads
