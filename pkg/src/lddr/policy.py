"""Rolling-horizon primal policies and their cost simulation.

At every stage the policy solves a model whose first block is the realized
stage, links it to the fixed previous decision, keeps the first block and
rolls forward. Three models are available:

* ``condexp``: future stages use conditional mean demands.
* ``sw``: as ``condexp`` with the SW lookahead penalty on the current stage
  and future costs scaled by ``1 - lam``.
* ``na``: a sampled two-stage model whose future costs carry the centered NA
  penalty.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np
from scipy.cluster.vq import ClusterError, kmeans2

from .basis import NA, SW, DualCoefficients
from .dual_na import penalized_positions
from .dual_sw import SwTables, _multipliers
from .instance import MslotInstance, TreeModel, TreeModelNode, build_tree_model, chain_nodes, state_matrices
from .process import make_rng
from .solve import SolverFailure, Status, solve

log = logging.getLogger(__name__)

CONDEXP, SWDRIVEN, NADRIVEN = "condexp", "sw", "na"


@dataclass(frozen=True, eq=False)
class PolicyConfig:
    kind: str = CONDEXP
    lam: float = 0.25
    coeffs: DualCoefficients | None = None
    n_raw: int = 100
    n_clusters: int = 24
    include_mean: bool = True
    node_limit: int | None = 10_000
    time_limit: float | None = 60.0
    tag: str = "policy"

    def __post_init__(self):
        if self.kind not in (CONDEXP, SWDRIVEN, NADRIVEN):
            raise ValueError(f"unknown policy kind {self.kind!r}")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must lie in [0, 1]")
        if self.kind == NADRIVEN and self.n_clusters >= self.n_raw:
            raise ValueError("cluster count must be below the raw sample size")
        if self.kind == SWDRIVEN and (self.coeffs is None or self.coeffs.kind != SW):
            raise ValueError("the SW-driven policy needs SW coefficients")
        if self.kind == NADRIVEN and (self.coeffs is None or self.coeffs.kind != NA):
            raise ValueError("the NA-driven policy needs NA coefficients")


@dataclass(eq=False)
class PolicyRun:
    scenario: int
    decisions: np.ndarray     # (T, n)
    stage_costs: np.ndarray
    total: float
    statuses: list[str]
    nodes: list[int]
    times: list[float]


def condexp_stage_model(inst: MslotInstance, path, t: int, prev_state) -> TreeModel:
    F = inst.process.forecast(path, t)
    return build_tree_model(inst, chain_nodes(inst, F, t), prev_state)


def swdriven_stage_model(inst: MslotInstance, path, t: int, prev_state, coeffs: DualCoefficients,
                         lam: float, tables: SwTables | None = None) -> TreeModel:
    if coeffs.kind != SW:
        raise ValueError("the SW-driven model needs SW coefficients")
    F = inst.process.forecast(path, t)
    costs = [inst.stage_cost(t)]
    if t < inst.T:
        tab = tables or SwTables(coeffs.layout, inst.process, path)
        _, B = state_matrices(inst)
        costs[0] = costs[0] + lam * (B.T @ _multipliers(coeffs.layout, tab.pre, coeffs.weights, t + 1))
    costs += [(1.0 - lam) * inst.stage_cost(s) for s in range(t + 1, inst.T + 1)]
    return build_tree_model(inst, chain_nodes(inst, F, t, costs), prev_state)


def cluster_scenarios(raw: np.ndarray, k: int, seed: int = 0, max_restarts: int = 50,
                      max_iter: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """k-means reduction of ``raw`` rows; returns ``(means, weights)`` with weights summing to 1."""
    raw = np.asarray(raw, dtype=float)
    n = len(raw)
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= {n}, got {k}")
    uniq, inverse = np.unique(raw, axis=0, return_inverse=True)
    if len(uniq) <= k:
        counts = np.bincount(inverse.ravel(), minlength=len(uniq))
        return uniq, counts / n
    for attempt in range(max_restarts):
        rng = make_rng(seed, "kmeans", attempt)
        try:
            means, labels = kmeans2(raw, k, iter=max_iter, minit="++", missing="raise", seed=rng)
        except ClusterError:
            continue
        counts = np.bincount(labels, minlength=k)
        if np.all(counts > 0):
            # exact group means rather than the last centroid update
            means = np.array([raw[labels == c].mean(axis=0) for c in range(k)])
            return means, counts / n
    raise RuntimeError(f"k-means left empty clusters after {max_restarts} restarts")


def nadriven_stage_model(inst: MslotInstance, path, t: int, prev_state, coeffs: DualCoefficients,
                         cfg: PolicyConfig) -> TreeModel:
    """Extensive form of the sampled two-stage model (root = stage ``t``)."""
    if coeffs.kind != NA:
        raise ValueError("the NA-driven model needs NA coefficients")
    T, J = inst.T, inst.J
    F = inst.process.forecast(path, t)
    if t == T:
        return build_tree_model(inst, chain_nodes(inst, F, t), prev_state)
    raw = inst.process.conditional_arrays(path, t, cfg.n_raw, cfg.tag)
    future = raw[:, t:, :].reshape(len(raw), -1)
    k = min(cfg.n_clusters, len(raw))
    means, weights = cluster_scenarios(future, k, seed=path.id * 1009 + t)
    scen = [np.vstack([path.demands[:t], m.reshape(T - t, J)]) for m in means]
    if cfg.include_mean:
        share = 1.0 / (len(scen) + 1)
        weights = np.append(weights * (1.0 - share), share)
        scen.append(F)
    lay = coeffs.layout
    pos = penalized_positions(lay, inst)
    n = inst.layout.n
    nodes = [TreeModelNode(t, -1, path.demands[t - 1], 1.0)]
    const = lay.b_stage == 0
    bs = np.where(const, 1, lay.b_stage) - 1
    for dem, p in zip(scen, weights):
        # Psi(xi^T) - E[Psi | xi^t] for every weight, evaluated on this scenario
        cen = np.where(const, 0.0, dem[bs, lay.b_product] - F[bs, lay.b_product])
        extra = np.zeros(T * n)
        np.add.at(extra, pos, cen * coeffs.weights)
        for s in range(t + 1, T + 1):
            cost = p * (inst.stage_cost(s) + extra[(s - 1) * n:s * n])
            parent = 0 if s == t + 1 else len(nodes) - 1
            nodes.append(TreeModelNode(s, parent, dem[s - 1], p, cost))
    return build_tree_model(inst, nodes, prev_state)


def stage_model(cfg: PolicyConfig, inst: MslotInstance, path, t: int, prev_state,
                tables: SwTables | None = None) -> TreeModel:
    if cfg.kind == CONDEXP:
        return condexp_stage_model(inst, path, t, prev_state)
    if cfg.kind == SWDRIVEN:
        return swdriven_stage_model(inst, path, t, prev_state, cfg.coeffs, cfg.lam, tables)
    return nadriven_stage_model(inst, path, t, prev_state, cfg.coeffs, cfg)


def simulate(cfg: PolicyConfig, inst: MslotInstance, path) -> PolicyRun:
    T = inst.T
    tables = SwTables(cfg.coeffs.layout, inst.process, path) if cfg.kind == SWDRIVEN and T > 1 else None
    decisions = np.zeros((T, inst.layout.n))
    costs = np.zeros(T)
    statuses, nodes, times = [], [], []
    prev = None
    for t in range(1, T + 1):
        tm = stage_model(cfg, inst, path, t, prev, tables)
        start = time.perf_counter()
        limits = {} if cfg.kind != NADRIVEN else {"node_limit": cfg.node_limit, "time_limit": cfg.time_limit}
        res = solve(tm.model, check=False, **limits)
        times.append(time.perf_counter() - start)
        if res.x is None:
            raise SolverFailure(f"policy {cfg.kind}, scenario {path.id}, stage {t}: {res.status.value}")
        if res.status == Status.LIMIT:
            log.info("policy %s scenario %d stage %d hit a limit; using the incumbent",
                     cfg.kind, path.id, t)
        x = tm.block(res.x, 0).copy()
        decisions[t - 1] = x
        costs[t - 1] = float(inst.stage_cost(t) @ x)
        statuses.append(res.status.value)
        nodes.append(res.nodes)
        prev = x
    return PolicyRun(path.id, decisions, costs, float(costs.sum()), statuses, nodes, times)


def run_costs(cfg: PolicyConfig, inst: MslotInstance, paths) -> np.ndarray:
    return np.array([simulate(cfg, inst, p).total for p in paths])


def check_run(inst: MslotInstance, path, run: PolicyRun) -> float:
    """Largest violation of the realized stage constraints along a run."""
    worst = 0.0
    prev = None
    for t in range(1, inst.T + 1):
        tm = build_tree_model(inst, [TreeModelNode(t, -1, path.demands[t - 1])], prev)
        worst = max(worst, tm.model.violation(run.decisions[t - 1]))
        ints = inst.layout.integrality().astype(bool)
        worst = max(worst, float(np.max(np.abs(run.decisions[t - 1][ints] - np.round(run.decisions[t - 1][ints])),
                                        initial=0.0)))
        prev = run.decisions[t - 1]
    return worst
