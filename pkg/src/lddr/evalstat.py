"""Bound estimation, gap reporting and exact checks on small instances."""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy import stats

from .basis import NA, SW, DualCoefficients
from .dual_na import NaPath, evaluate_na, pi_values
from .dual_sw import SwTables, evaluate_sw
from .instance import MslotInstance, extensive_form
from .master import MasterOptions, maximize
from .solve import MipModel, require_optimal, solve

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BoundEstimate:
    mean: float
    halfwidth: float
    n: int
    level: float = 0.95
    side: str = "lower"
    method: str = ""
    flags: tuple[str, ...] = ()

    @property
    def bound(self) -> float:
        return self.mean - self.halfwidth if self.side == "lower" else self.mean + self.halfwidth

    def row(self, instance: str = "", wall_time: float | str = "") -> dict:
        return {"instance": instance, "method": self.method, "side": self.side, "mean": self.mean,
                "halfwidth": self.halfwidth, "n": self.n, "level": self.level, "wallTime": wall_time,
                "flags": ";".join(self.flags)}


def confidence_interval(values, level: float = 0.95, side: str = "lower", method: str = "") -> BoundEstimate:
    """Student-t interval ``mean +- t_{(1+level)/2, n-1} s / sqrt(n)``."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("need at least one value")
    if side not in ("lower", "upper"):
        raise ValueError("side must be 'lower' or 'upper'")
    mean = float(v.mean())
    if v.size == 1:
        log.warning("single observation: halfwidth reported as 0")
        return BoundEstimate(mean, 0.0, 1, level, side, method, ("single-sample",))
    s = float(v.std(ddof=1))
    hw = 0.0 if level <= 0 or s == 0 else float(stats.t.ppf(0.5 + level / 2, v.size - 1) * s / math.sqrt(v.size))
    return BoundEstimate(mean, hw, int(v.size), level, side, method)


def dual_values(coeffs: DualCoefficients, inst: MslotInstance, paths) -> np.ndarray:
    """Per-path restricted dual values at fixed coefficients."""
    if coeffs.kind == SW:
        return np.array([evaluate_sw(coeffs, inst, p, SwTables(coeffs.layout, inst.process, p)).total
                         for p in paths])
    return np.array([evaluate_na(coeffs, inst, p, NaPath(coeffs.layout, inst, p)).value for p in paths])


def lower_bound(kind: str, coeffs: DualCoefficients | None, inst: MslotInstance, paths,
                level: float = 0.95) -> BoundEstimate:
    if kind == "pi":
        return confidence_interval(pi_values(inst, paths), level, "lower", "pi")
    if coeffs is None or coeffs.kind != kind:
        raise ValueError(f"{kind} bound needs {kind} coefficients")
    if kind == NA and not np.any(coeffs.weights):
        return confidence_interval(pi_values(inst, paths), level, "lower", kind)
    return confidence_interval(dual_values(coeffs, inst, paths), level, "lower", kind)


def upper_bound(cfg, inst: MslotInstance, paths, level: float = 0.95) -> BoundEstimate:
    from .policy import run_costs

    return confidence_interval(run_costs(cfg, inst, paths), level, "upper", cfg.kind)


def expectation(values, probs) -> float:
    return float(np.dot(np.asarray(probs, dtype=float), np.asarray(values, dtype=float)))


# -- exact quantities on finite scenario trees -------------------------------

MAX_LEAVES = 64


def extensive_optimum(tree, inst: MslotInstance) -> float:
    leaves = tree.leaves()
    if len(leaves) > MAX_LEAVES:
        raise ValueError(f"tree has {len(leaves)} leaves; the exact oracle allows {MAX_LEAVES}")
    res = require_optimal(solve(extensive_form(inst, leaves).model, rel_gap=1e-9), "extensive form")
    return res.objective


def exact_dual_value(coeffs: DualCoefficients, inst: MslotInstance, tree) -> float:
    leaves = tree.leaves()
    return expectation(dual_values(coeffs, inst, leaves), [p.prob for p in leaves])


def exact_pi_value(inst: MslotInstance, tree) -> float:
    leaves = tree.leaves()
    return expectation(pi_values(inst, leaves), [p.prob for p in leaves])


def exact_policy_value(cfg, inst: MslotInstance, tree) -> float:
    from .policy import run_costs

    leaves = tree.leaves()
    return expectation(run_costs(cfg, inst, leaves), [p.prob for p in leaves])


# -- restricted Lagrangian dual of a small MIP, computed two ways --------------

@dataclass(frozen=True, eq=False)
class SmallMip:
    """``min c x`` over integer points of ``lo <= x <= hi`` with ``P x <= q``, relaxing ``D x = d``."""

    c: np.ndarray
    D: np.ndarray
    d: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    P: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    q: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def points(self, limit: int = 500) -> np.ndarray:
        ranges = [range(int(a), int(b) + 1) for a, b in zip(self.lo, self.hi)]
        count = int(np.prod([len(r) for r in ranges]))
        if count > limit:
            raise OverflowError(f"{count} lattice points exceed the enumeration limit {limit}")
        pts = np.array(list(itertools.product(*ranges)), dtype=float).reshape(-1, len(ranges))
        if self.P.size:
            pts = pts[np.all(pts @ self.P.T <= self.q + 1e-9, axis=1)]
        if len(pts) == 0:
            raise ValueError("the integer set is empty")
        return pts


@dataclass(frozen=True)
class Lemma2Result:
    cutting_plane: float
    primal: float
    passed: bool
    iterations: int


def restricted_dual_cutting_plane(mip: SmallMip, G: np.ndarray, box: float = 1e4,
                                  tol: float = 1e-10) -> tuple[float, int]:
    """``max_a min_{x in X} c x + (G a)' (D x - d)`` by the regularized cutting-plane master."""
    pts = mip.points()
    resid = pts @ mip.D.T - mip.d                 # (P, m)
    base = pts @ mip.c

    def oracle(a):
        lam = G @ a
        vals = base + resid @ lam
        k = int(np.argmin(vals))
        return np.array([vals[k]]), (G.T @ resid[k])[None, :]

    opts = MasterOptions(tol=tol, max_iter=2000, box=box, delta0=box / 10, delta_max=box,
                         delta_min=1e-9, scaled=False)
    res = maximize(oracle, np.ones(1), G.shape[1], opts)
    return res.value, res.state.iteration


def restricted_dual_primal(mip: SmallMip, G: np.ndarray) -> float:
    """``min c x`` over ``conv(X)`` with ``G' (D x - d) = 0`` via convex-combination weights."""
    pts = mip.points()
    P = len(pts)
    rows = [np.ones((1, P))]
    rhs = [np.ones(1)]
    if G.shape[1]:
        rows.append(G.T @ (mip.D @ pts.T))
        rhs.append(G.T @ mip.d)
    A = sp.csr_matrix(np.vstack(rows))
    b = np.concatenate(rhs)
    m = MipModel(pts @ mip.c, A, b, b, np.zeros(P), np.full(P, np.inf), np.zeros(P, dtype=int))
    return require_optimal(solve(m, rel_gap=0.0), "restricted dual primal form").objective


def lemma2_check(mip: SmallMip, G: np.ndarray, rtol: float = 1e-6) -> Lemma2Result:
    G = np.asarray(G, dtype=float).reshape(len(mip.d), -1)
    a, iters = restricted_dual_cutting_plane(mip, G)
    b = restricted_dual_primal(mip, G)
    return Lemma2Result(a, b, abs(a - b) <= rtol * (1 + abs(b)), iters)


def random_small_mip(rng: np.random.Generator) -> tuple[SmallMip, np.ndarray]:
    """Random instance: up to 3 integer variables, at most 500 lattice points,
    1-2 relaxed equalities made feasible by construction, G with 0-2 columns."""
    while True:
        nv = int(rng.integers(1, 4))
        lo = rng.integers(-3, 1, size=nv)
        hi = lo + rng.integers(1, 7, size=nv)
        if np.prod(hi - lo + 1) <= 500:
            break
    m = int(rng.integers(1, 3))
    D = rng.integers(-3, 4, size=(m, nv)).astype(float)
    nk = int(rng.integers(0, 2))
    P = rng.integers(-2, 3, size=(nk, nv)).astype(float)
    x0 = np.array([rng.integers(a, b + 1) for a, b in zip(lo, hi)], dtype=float)
    q = P @ x0 + rng.integers(0, 3, size=nk) if nk else np.zeros(0)
    c = rng.normal(size=nv).round(3)
    mip = SmallMip(c, D, D @ x0, lo.astype(float), hi.astype(float),
                   P if nk else np.zeros((0, 0)), q)
    k = int(rng.integers(0, 3))
    G = rng.integers(-2, 3, size=(m, k)).astype(float)
    return mip, G


# -- reporting ---------------------------------------------------------------

LB_METHODS = ("pi", "sw_lb", "na_lb")
UB_METHODS = ("condexp", "sw_ub", "na_ub")


@dataclass
class GapReport:
    instance: str
    bounds: dict
    improved_lb: float | None
    improved_ub: float | None
    rel_gap: float | None
    closure: float | str | None
    flags: list[str]

    def to_json(self) -> dict:
        return {"instance": self.instance,
                "bounds": {k: {"mean": b.mean, "halfwidth": b.halfwidth, "n": b.n, "level": b.level}
                           for k, b in self.bounds.items()},
                "improvedLB": self.improved_lb, "improvedUB": self.improved_ub,
                "relGap": self.rel_gap, "gapClosure": self.closure, "flags": self.flags}


def gap_closure(pi: float, lb: float, condexp: float, ub: float) -> float | str:
    den = condexp - pi
    if abs(den) <= 1e-12 * max(1.0, abs(condexp)):
        return "degenerate"
    return ((lb - pi) + (condexp - ub)) / den


def ordering_report(instance: str, bounds: dict) -> GapReport:
    """Gap summary and ordering flags; ``bounds`` maps method names to estimates.

    Method names: ``pi``, ``sw_lb``, ``na_lb`` (lower) and ``condexp``,
    ``sw_ub``, ``na_ub`` (upper). Missing entries are flagged.
    """
    flags = [f"missing:{m}" for m in LB_METHODS + UB_METHODS if m not in bounds]

    def beyond(lo_key, hi_key):
        # True when bounds[lo_key] exceeds bounds[hi_key] by more than both halfwidths
        a, b = bounds[lo_key], bounds[hi_key]
        return a.mean - b.mean > a.halfwidth + b.halfwidth

    if "sw_lb" in bounds and "na_lb" in bounds and beyond("sw_lb", "na_lb"):
        flags.append("violation:sw_lb>na_lb")
    if "pi" in bounds and "na_lb" in bounds and beyond("pi", "na_lb"):
        flags.append("violation:pi>na_lb")
    lbs = [m for m in LB_METHODS if m in bounds]
    ubs = [m for m in UB_METHODS if m in bounds]
    for u in ubs:
        for lb in lbs:
            if beyond(lb, u):
                flags.append(f"violation:{lb}>{u}")
    improved_lb = max((bounds[m].mean for m in lbs), default=None)
    improved_ub = min((bounds[m].mean for m in ubs), default=None)
    rel_gap = None
    if improved_lb is not None and improved_ub is not None and improved_ub != 0:
        rel_gap = (improved_ub - improved_lb) / abs(improved_ub)
    closure = None
    if "pi" in bounds and "condexp" in bounds:
        closure = gap_closure(bounds["pi"].mean, improved_lb, bounds["condexp"].mean, improved_ub)
    return GapReport(instance, dict(bounds), improved_lb, improved_ub, rel_gap, closure, flags)
