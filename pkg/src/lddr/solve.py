"""Narrow MIP/LP interface over the HiGHS solver shipped with SciPy."""

from __future__ import annotations

import enum
import logging
import time
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

try:
    from scipy.optimize import Bounds, LinearConstraint, milp
except ImportError:  # pragma: no cover - depends on the environment
    milp = None

log = logging.getLogger(__name__)

FEAS_TOL = 1e-6
INT_TOL = 1e-5


class SolverUnavailable(EnvironmentError):
    """No usable solver backend."""


class ModelError(ValueError):
    """Malformed model description."""


class SolverFailure(RuntimeError):
    """A subproblem did not solve to optimality; carries context in the message."""


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"
    LIMIT = "LimitReached"


@dataclass(eq=False)
class MipModel:
    """``min/max c x + offset`` s.t. ``row_lb <= A x <= row_ub``, ``lb <= x <= ub``.

    Equalities use ``row_lb == row_ub``; one-sided rows use ``+-inf``.
    ``integrality[i] == 1`` marks an integer variable.
    """

    c: np.ndarray
    A: sp.csr_matrix
    row_lb: np.ndarray
    row_ub: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    integrality: np.ndarray
    maximize: bool = False
    offset: float = 0.0

    @property
    def n(self) -> int:
        return len(self.c)

    def check(self) -> None:
        n = self.n
        m = self.A.shape[0]
        if self.A.shape[1] != n:
            raise ModelError(f"constraint matrix has {self.A.shape[1]} columns, expected {n}")
        for name, vec, size in [("row_lb", self.row_lb, m), ("row_ub", self.row_ub, m),
                                ("lb", self.lb, n), ("ub", self.ub, n),
                                ("integrality", self.integrality, n)]:
            if len(vec) != size:
                raise ModelError(f"{name} has length {len(vec)}, expected {size}")
        if not np.all(np.isfinite(self.c)) or not np.all(np.isfinite(self.A.data)):
            raise ModelError("objective and matrix entries must be finite")
        ints = self.integrality.astype(bool)
        if not (np.all(np.isfinite(self.lb[ints])) and np.all(np.isfinite(self.ub[ints]))):
            raise ModelError("integer variables need finite bounds")
        if np.any(np.isnan(self.row_lb)) or np.any(np.isnan(self.row_ub)):
            raise ModelError("row bounds must not be NaN")

    def objective(self, x: np.ndarray) -> float:
        return float(self.c @ x + self.offset)

    def violation(self, x: np.ndarray) -> float:
        """Largest bound or row violation of ``x``."""
        ax = self.A @ x
        viol = [np.max(self.lb - x, initial=0.0), np.max(x - self.ub, initial=0.0),
                np.max(self.row_lb - ax, initial=0.0), np.max(ax - self.row_ub, initial=0.0)]
        return float(max(viol))

    def to_lp(self, names: list[str] | None = None) -> str:
        """CPLEX LP-format text, for debugging."""
        names = names or [f"v{i}" for i in range(self.n)]

        def expr(coefs, idx):
            terms = [f"{'+' if v >= 0 else '-'} {abs(v):.12g} {names[i]}" for i, v in zip(idx, coefs)]
            return " ".join(terms) if terms else "0 " + names[0]

        out = ["Maximize" if self.maximize else "Minimize"]
        nz = np.nonzero(self.c)[0]
        out.append(" obj: " + expr(self.c[nz], nz))
        out.append("Subject To")
        A = self.A.tocsr()
        for r in range(A.shape[0]):
            s, e = A.indptr[r], A.indptr[r + 1]
            body = expr(A.data[s:e], A.indices[s:e])
            lo, hi = self.row_lb[r], self.row_ub[r]
            if lo == hi:
                out.append(f" r{r}: {body} = {lo:.12g}")
            else:
                if np.isfinite(lo):
                    out.append(f" r{r}_lo: {body} >= {lo:.12g}")
                if np.isfinite(hi):
                    out.append(f" r{r}_hi: {body} <= {hi:.12g}")
        out.append("Bounds")
        for i in range(self.n):
            lo = "-inf" if not np.isfinite(self.lb[i]) else f"{self.lb[i]:.12g}"
            hi = "+inf" if not np.isfinite(self.ub[i]) else f"{self.ub[i]:.12g}"
            out.append(f" {lo} <= {names[i]} <= {hi}")
        ints = [names[i] for i in np.nonzero(self.integrality)[0]]
        if ints:
            out.append("General")
            out.append(" " + " ".join(ints))
        out.append("End")
        return "\n".join(out) + "\n"


@dataclass(eq=False)
class SolveResult:
    status: Status
    objective: float
    x: np.ndarray | None
    gap: float
    wall_time: float
    nodes: int = 0

    @property
    def ok(self) -> bool:
        return self.status == Status.OPTIMAL


def solve(model: MipModel, rel_gap: float = 1e-6, time_limit: float | None = None,
          node_limit: int | None = None, check: bool = True) -> SolveResult:
    """Solve ``model`` with HiGHS (single thread, default seed).

    A limit hit with a feasible incumbent yields ``Status.LIMIT`` together with
    that incumbent; without one, ``x`` is ``None``.
    """
    if milp is None:
        raise SolverUnavailable("scipy.optimize.milp is not available")
    if check:
        model.check()
    opts = {"mip_rel_gap": rel_gap, "presolve": True}
    if time_limit is not None:
        opts["time_limit"] = float(time_limit)
    if node_limit is not None:
        opts["node_limit"] = int(node_limit)
    sign = -1.0 if model.maximize else 1.0
    cons = []
    if model.A.shape[0]:
        cons = [LinearConstraint(model.A, model.row_lb, model.row_ub)]
    start = time.perf_counter()
    res = milp(sign * model.c, constraints=cons, integrality=model.integrality,
               bounds=Bounds(model.lb, model.ub), options=opts)
    if res.status == 4:
        # HiGHS sometimes ends "unknown" after presolve on badly scaled LPs
        log.debug("HiGHS status 4 (%s); retrying without presolve", res.message)
        opts["presolve"] = False
        res = milp(sign * model.c, constraints=cons, integrality=model.integrality,
                   bounds=Bounds(model.lb, model.ub), options=opts)
    wall = time.perf_counter() - start
    nodes = int(getattr(res, "mip_node_count", 0) or 0)
    gap = getattr(res, "mip_gap", 0.0)
    gap = 0.0 if gap is None or not model.integrality.any() else float(gap)
    if res.status == 0:
        x = _clean(res.x, model)
        return SolveResult(Status.OPTIMAL, model.objective(x), x, gap, wall, nodes)
    if res.status == 1:
        if res.x is None:
            return SolveResult(Status.LIMIT, np.nan, None, np.inf, wall, nodes)
        x = _clean(res.x, model)
        return SolveResult(Status.LIMIT, model.objective(x), x, gap, wall, nodes)
    if res.status == 2:
        return SolveResult(Status.INFEASIBLE, np.nan, None, np.inf, wall, nodes)
    if res.status == 3:
        return SolveResult(Status.UNBOUNDED, -sign * np.inf, None, np.inf, wall, nodes)
    raise SolverFailure(f"HiGHS returned status {res.status}: {res.message}")


def _clean(x: np.ndarray, model: MipModel) -> np.ndarray:
    """Round integer variables and clip into bounds."""
    x = np.asarray(x, dtype=float).copy()
    ints = model.integrality.astype(bool)
    x[ints] = np.round(x[ints])
    return np.clip(x, model.lb, model.ub)


def require_optimal(res: SolveResult, context: str) -> SolveResult:
    if res.status != Status.OPTIMAL:
        raise SolverFailure(f"{context}: solver status {res.status.value}")
    return res
