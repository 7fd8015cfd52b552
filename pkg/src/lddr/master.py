"""Regularized multi-cut cutting-plane maximization of a sampled concave dual.

The oracle maps a weight vector to per-scenario values and supergradients.
The master keeps one epigraph variable per scenario and maximizes the
probability-weighted model inside an infinity-norm trust region around the
incumbent (boxstep), intersected with the box ``|w| <= W``.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp

from .solve import MipModel, SolverFailure, Status, solve

log = logging.getLogger(__name__)

OPTIMAL = "Optimal"
LIMIT = "LimitReached"


@dataclass(frozen=True, eq=False)
class Cut:
    """``theta <= const + grad @ (w - point)`` for one scenario."""

    scenario: int
    const: float
    grad: np.ndarray
    point: np.ndarray
    iteration: int = 0

    def value(self, w) -> float:
        return float(self.const + self.grad @ (np.asarray(w, dtype=float) - self.point))

    @property
    def intercept(self) -> float:
        return float(self.const - self.grad @ self.point)

    def to_json(self) -> dict:
        return {"scenario": self.scenario, "const": self.const, "grad": self.grad.tolist(),
                "point": self.point.tolist(), "iteration": self.iteration}

    @classmethod
    def from_json(cls, obj) -> "Cut":
        return cls(int(obj["scenario"]), float(obj["const"]), np.asarray(obj["grad"], dtype=float),
                   np.asarray(obj["point"], dtype=float), int(obj["iteration"]))


class ConfigurationError(ValueError):
    """The master model would be unbounded."""


@dataclass
class MasterOptions:
    tol: float = 1e-3
    max_iter: int = 500
    time_limit: float | None = None
    delta0: float = 10.0
    delta_min: float = 1e-3
    delta_max: float = 1e3
    grow: float = 2.0
    shrink: float = 0.5
    serious_ratio: float = 0.1
    box: float = 1e3
    scaled: bool = True
    theta_cap: float | None = None


@dataclass(eq=False)
class MasterState:
    incumbent: np.ndarray
    inc_value: float
    delta: float
    scale: np.ndarray
    cuts: list[Cut] = field(default_factory=list)
    iteration: int = 0
    model_value: float = np.inf
    history: list[dict] = field(default_factory=list)
    status: str = "Running"
    inc_scenario_values: np.ndarray | None = None

    def to_json(self) -> dict:
        return {"incumbent": self.incumbent.tolist(), "incValue": self.inc_value, "delta": self.delta,
                "scale": self.scale.tolist(), "cuts": [c.to_json() for c in self.cuts],
                "iteration": self.iteration, "modelValue": _num(self.model_value),
                "history": self.history, "status": self.status,
                "incScenarioValues": None if self.inc_scenario_values is None
                else self.inc_scenario_values.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "MasterState":
        sv = obj.get("incScenarioValues")
        return cls(np.asarray(obj["incumbent"], dtype=float), float(obj["incValue"]), float(obj["delta"]),
                   np.asarray(obj["scale"], dtype=float), [Cut.from_json(c) for c in obj["cuts"]],
                   int(obj["iteration"]), float(obj["modelValue"]), list(obj["history"]), obj["status"],
                   None if sv is None else np.asarray(sv, dtype=float))


def _num(v: float):
    return v if np.isfinite(v) else str(v)


class CutPool:
    """Deduplicated cuts in LP row form ``theta_k - g w <= a``."""

    def __init__(self, n_scen: int, dim: int):
        self.n_scen = n_scen
        self.dim = dim
        self.scen: list[int] = []
        self.grads: list[np.ndarray] = []
        self.icpt: list[float] = []
        self._seen: set = set()

    def add(self, k: int, cut: Cut) -> bool:
        key = (k, np.round(cut.grad, 9).tobytes(), round(cut.intercept, 6))
        if key in self._seen:
            return False
        self._seen.add(key)
        self.scen.append(k)
        self.grads.append(cut.grad)
        self.icpt.append(cut.intercept)
        return True

    def __len__(self) -> int:
        return len(self.scen)

    def lp(self, probs, lo, hi, theta_cap=None, center=None, col_scale=None):
        """Master LP in shifted coordinates ``w = center + col_scale * u``.

        Each ``theta_k`` is measured from its model value at ``center``, which
        keeps right-hand sides small when gradients and intercepts are large.
        Returns the model and a map from its solution to ``(w, model value)``.
        """
        dim, N, m = self.dim, self.n_scen, len(self.scen)
        c0 = np.zeros(dim) if center is None else np.asarray(center, dtype=float)
        S = np.ones(dim) if col_scale is None else np.asarray(col_scale, dtype=float)
        G = np.asarray(self.grads).reshape(m, dim)
        scen = np.asarray(self.scen, dtype=int)
        at_center = np.asarray(self.icpt, dtype=float) + G @ c0
        shift = np.full(N, np.inf)
        np.minimum.at(shift, scen, at_center)
        shift[~np.isfinite(shift)] = 0.0
        rhs = at_center - shift[scen]
        rows = np.arange(m)
        blocks = sp.hstack([sp.csr_matrix(-G * S), sp.csr_matrix((np.ones(m), (rows, scen)), shape=(m, N))])
        c = np.concatenate([np.zeros(dim), probs])
        cap = np.full(N, np.inf) if theta_cap is None else theta_cap - shift
        lb = np.concatenate([(lo - c0) / S, np.full(N, -np.inf)])
        ub = np.concatenate([(hi - c0) / S, cap])
        model = MipModel(c, blocks.tocsr(), np.full(m, -np.inf), rhs, lb, ub,
                         np.zeros(dim + N, dtype=int), maximize=True, offset=float(probs @ shift))

        def back(x, objective):
            return np.clip(c0 + S * x[:dim], lo, hi), objective

        return model, back


def master_lp(pool: CutPool, probs, lo, hi, theta_cap=None, center=None,
              col_scale=None) -> tuple[np.ndarray, float]:
    """Maximize the cut model over the box ``[lo, hi]``; returns ``(w, model value)``."""
    if theta_cap is None:
        covered = set(pool.scen)
        if len(covered) < pool.n_scen:
            raise ConfigurationError("a scenario has no cut and no theta cap is set")
    model, back = pool.lp(probs, lo, hi, theta_cap, center, col_scale)
    res = solve(model, rel_gap=0.0, check=False)
    if res.status != Status.OPTIMAL:
        raise SolverFailure(f"master LP: status {res.status.value}")
    return back(res.x, float(res.objective))


@dataclass(eq=False)
class MasterResult:
    weights: np.ndarray
    value: float
    state: MasterState
    status: str
    generated: list[Cut]
    scenario_values: np.ndarray | None = None


def maximize(oracle, probs, dim: int, opts: MasterOptions | None = None, start=None,
             state: MasterState | None = None, record_cuts: bool = False,
             checkpoint=None, on_iteration=None) -> MasterResult:
    """Maximize ``sum_k probs[k] f_k(w)`` where ``oracle(w) -> (values, grads)``.

    ``checkpoint`` is called with the state after every iteration; passing a
    previously saved ``state`` resumes from it.
    """
    opts = opts or MasterOptions()
    probs = np.asarray(probs, dtype=float)
    N = len(probs)
    generated: list[Cut] = []
    t_start = time.perf_counter()

    def evaluate(w, it):
        vals, grads = oracle(w)
        cuts = [Cut(k, float(vals[k]), grads[k].copy(), w.copy(), it) for k in range(N)]
        if record_cuts:
            generated.extend(cuts)
        return float(probs @ vals), vals, cuts

    if state is None:
        w0 = np.zeros(dim) if start is None else np.clip(np.asarray(start, dtype=float), -opts.box, opts.box)
        if opts.scaled and hasattr(oracle, "scale"):
            scale = np.asarray(oracle.scale(), dtype=float)
        else:
            scale = np.ones(dim)
        f0, v0, cuts = evaluate(w0, 0)
        state = MasterState(w0, f0, opts.delta0, scale, cuts, 0, np.inf, [], "Running", v0)
        state.history.append(_row(0, f0, f0, np.nan, opts.delta0, "init", 0.0))
    elif state.status == LIMIT:
        state.status = "Running"
    pool = CutPool(N, dim)
    for cut in state.cuts:
        pool.add(cut.scenario, cut)

    if dim == 0:
        state.status = OPTIMAL
        state.model_value = state.inc_value
        return MasterResult(state.incumbent, state.inc_value, state, OPTIMAL, generated,
                            state.inc_scenario_values)

    box_lo, box_hi = np.full(dim, -opts.box), np.full(dim, opts.box)
    while state.status == "Running":
        if state.iteration >= opts.max_iter or (
                opts.time_limit is not None and time.perf_counter() - t_start > opts.time_limit):
            state.status = LIMIT
            break
        it = state.iteration + 1
        inc, f_inc = state.incumbent, state.inc_value
        thr = opts.tol * (1.0 + abs(f_inc))
        radius = state.delta * state.scale
        lo, hi = np.maximum(box_lo, inc - radius), np.minimum(box_hi, inc + radius)
        cand, model = master_lp(pool, probs, lo, hi, opts.theta_cap, inc, state.scale)
        step_kind = "trust"
        if model - f_inc <= thr:
            # locally converged; certify against the model over the whole box
            gcand, gmodel = master_lp(pool, probs, box_lo, box_hi, opts.theta_cap, inc, state.scale)
            if gmodel - f_inc <= thr:
                state.model_value = gmodel
                state.iteration = it
                state.status = OPTIMAL
                state.history.append(_row(it, np.nan, f_inc, gmodel, state.delta, "converged",
                                          time.perf_counter() - t_start))
                break
            cand, model, step_kind = gcand, gmodel, "global"
        state.model_value = model
        f_c, vals, cuts = evaluate(cand, it)
        for cut in cuts:
            if pool.add(cut.scenario, cut):
                state.cuts.append(cut)
        pred = model - f_inc
        if f_c - f_inc >= opts.serious_ratio * pred and f_c > f_inc:
            state.incumbent, state.inc_value, state.inc_scenario_values = cand, f_c, vals
            state.delta = min(opts.delta_max, state.delta * opts.grow)
            kind = "serious"
        else:
            state.delta = max(opts.delta_min, state.delta * opts.shrink)
            kind = "null"
        if step_kind == "global":
            kind += "-global"
        state.iteration = it
        state.history.append(_row(it, f_c, state.inc_value, model, state.delta, kind,
                                  time.perf_counter() - t_start))
        log.debug("iter %d cand %.6g inc %.6g model %.6g delta %.3g %s",
                  it, f_c, state.inc_value, model, state.delta, kind)
        if on_iteration is not None:
            on_iteration(state)
        if checkpoint is not None:
            checkpoint(state)
    return MasterResult(state.incumbent, state.inc_value, state, state.status, generated,
                        state.inc_scenario_values)


def _row(it, cand, inc, model, delta, step, wall) -> dict:
    return {"iter": it, "candidateValue": _num(float(cand)), "incumbentValue": _num(float(inc)),
            "modelValue": _num(float(model)), "delta": float(delta), "step": step,
            "wallTime": float(wall)}


def oracle_for(kind: str, coeffs0, inst, paths, rel_gap: float = 1e-9):
    from .dual_na import NaOracle
    from .dual_sw import SwOracle

    return (SwOracle if kind == "sw" else NaOracle)(coeffs0, inst, paths, rel_gap)


@dataclass(eq=False)
class TrainResult:
    coeffs: object
    value: float
    status: str
    state: MasterState
    generated: list[Cut]

    @property
    def log(self) -> list[dict]:
        return self.state.history


def train(kind: str, inst, paths, spec, opts: MasterOptions | None = None, record_cuts: bool = False,
          state: MasterState | None = None, checkpoint=None, start=None) -> TrainResult:
    """Fit decision-rule weights by maximizing the sampled dual."""
    from .basis import DualCoefficients

    if spec.kind != kind:
        raise ValueError(f"spec kind {spec.kind!r} does not match dual {kind!r}")
    coeffs0 = DualCoefficients.zeros(spec, inst)
    oracle = oracle_for(kind, coeffs0, inst, paths)
    res = maximize(oracle, oracle.probs, oracle.dim, opts, start=start, state=state,
                   record_cuts=record_cuts, checkpoint=checkpoint)
    return TrainResult(coeffs0.with_weights(res.weights), res.value, res.status, res.state, res.generated)


def save_state(state: MasterState, path) -> None:
    from .io import atomic_write_text

    atomic_write_text(path, json.dumps(state.to_json()))


def load_state(path) -> MasterState:
    with open(path) as fh:
        return MasterState.from_json(json.load(fh))


def options_to_json(opts: MasterOptions) -> dict:
    return asdict(opts)
