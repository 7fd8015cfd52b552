"""Nonanticipative Lagrangian relaxation restricted to decision-rule multipliers.

Each path is solved as a deterministic ``T``-stage problem whose penalized
variables carry the extra cost ``(Psi - E[Psi | xi^t]) alpha``. With
``alpha = 0`` this is the perfect-information problem of the path.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .basis import NA, CoefLayout, DualCoefficients, path_forecasts
from .instance import MslotInstance, build_tree_model, chain_nodes
from .master import Cut
from .solve import require_optimal, solve


@dataclass(eq=False)
class NaEvaluation:
    value: float
    solution: np.ndarray        # stacked (T * n) path solution
    centered: np.ndarray        # centered basis value per weight
    grad: np.ndarray

    def stage_solution(self, t: int, n: int) -> np.ndarray:
        return self.solution[(t - 1) * n:t * n]


def penalized_positions(layout: CoefLayout, inst: MslotInstance) -> np.ndarray:
    """Index of each weight's penalized variable in the stacked path vector."""
    lay = inst.layout
    return np.array([(layout.stage[i] - 1) * lay.n + lay.index(layout.var[i], int(layout.product[i]))
                     for i in range(layout.size)], dtype=int)


def centered_values(layout: CoefLayout, process, path) -> np.ndarray:
    """``D_s - E[D_s | xi^t]`` for each weight at row stage ``t``."""
    F = path_forecasts(process, path)
    raw = layout.evaluate(path.demands)
    cond = layout.evaluate(F, layout.stage)
    return np.where(layout.b_stage == 0, 0.0, raw - cond)


class NaPath:
    """Cached path model and centered coefficients."""

    def __init__(self, layout: CoefLayout, inst: MslotInstance, path):
        self.path = path
        self.model = build_tree_model(inst, chain_nodes(inst, path.demands)).model
        self.base_cost = self.model.c.copy()
        self.centered = centered_values(layout, inst.process, path)
        self.positions = penalized_positions(layout, inst)


def evaluate_na(coeffs: DualCoefficients, inst: MslotInstance, path, cache: NaPath | None = None,
                rel_gap: float = 1e-9) -> NaEvaluation:
    if coeffs.kind != NA:
        raise ValueError("NA evaluation needs NA coefficients")
    npth = cache or NaPath(coeffs.layout, inst, path)
    c = npth.base_cost.copy()
    np.add.at(c, npth.positions, npth.centered * coeffs.weights)
    res = require_optimal(solve(replace(npth.model, c=c), rel_gap=rel_gap, check=False),
                          f"NA path problem, scenario {path.id}")
    grad = npth.centered * res.x[npth.positions]
    return NaEvaluation(float(c @ res.x), res.x, npth.centered, grad)


def na_cut(coeffs_at: DualCoefficients, inst: MslotInstance, paths, iteration: int = 0) -> list[Cut]:
    out = []
    for p in paths:
        ev = evaluate_na(coeffs_at, inst, p)
        out.append(Cut(p.id, ev.value, ev.grad, np.array(coeffs_at.weights), iteration))
    return out


def pi_values(inst: MslotInstance, paths, rel_gap: float = 1e-9) -> np.ndarray:
    """Perfect-information optimum of every path."""
    out = np.empty(len(paths))
    for k, p in enumerate(paths):
        m = build_tree_model(inst, chain_nodes(inst, p.demands)).model
        out[k] = require_optimal(solve(m, rel_gap=rel_gap, check=False), f"PI scenario {p.id}").objective
    return out


def pi_bound(inst: MslotInstance, paths, level: float = 0.95):
    from .evalstat import confidence_interval

    return confidence_interval(pi_values(inst, paths), level, side="lower", method="pi")


class NaOracle:
    """Scenario values and supergradients of the NA dual for a fixed path set."""

    kind = NA

    def __init__(self, coeffs0: DualCoefficients, inst: MslotInstance, paths, rel_gap: float = 1e-9):
        self.template = coeffs0
        self.inst = inst
        self.paths = list(paths)
        self.rel_gap = rel_gap
        self.cache = [NaPath(coeffs0.layout, inst, p) for p in self.paths]
        self.probs = np.array([p.prob for p in self.paths])
        self.evaluations = 0

    @property
    def dim(self) -> int:
        return self.template.layout.size

    def scale(self) -> np.ndarray:
        if not self.cache:
            return np.ones(self.dim)
        mag = np.mean([np.abs(c.centered) for c in self.cache], axis=0)
        return 1.0 / np.maximum(mag, 1.0)

    def __call__(self, w: np.ndarray):
        coeffs = self.template.with_weights(w)
        vals = np.empty(len(self.paths))
        grads = np.empty((len(self.paths), self.dim))
        for k, (p, c) in enumerate(zip(self.paths, self.cache)):
            ev = evaluate_na(coeffs, self.inst, p, c, self.rel_gap)
            vals[k] = ev.value
            grads[k] = ev.grad
        self.evaluations += 1
        return vals, grads
