"""Multi-item stochastic lot-sizing instances and their stage data.

Each stage ``t`` has variables ``(x_j, i+_j, i-_j, y_j, o)`` laid out by
:class:`VariableLayout`. The state equations read

    A_t x_t + B_t x_{t-1} = b_t,   i.e.   i-_tj - i+_tj + i+_{t-1,j} - i-_{t-1,j} + x_{t-1,j} = D_tj,

and the recourse rows ``C_t x_t >= d_t`` cover the capacity/overtime row, the
setup forcing rows and the inventory-capacity rows.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp

from .process import FiniteSupportProcess, ParameterError, ProcessParams, StageRangeError, make_rng
from .solve import MipModel


class StructureError(ValueError):
    """Scenario paths that cannot be arranged into a prefix tree."""


@dataclass(frozen=True)
class Knobs:
    """Derived-parameter knobs of the lot-sizing generator."""

    backlog_factor: float = 2.0
    ts_rel: float = 0.25
    tbo: float = 2.0
    delta_y: float = 1.2
    util: float = 0.6
    delta_inv: float = 10.0
    delta_over: float = 0.25
    holding_cost: float = 15.0
    overtime_cost: float = 100.0
    tb: float = 1.0
    end_backlog_cost: float = 150.0
    bigm_factor: float = 6.0
    cap_factor: float = 0.9

    def __post_init__(self):
        for name, val in asdict(self).items():
            if not val > 0:
                raise ParameterError(f"knob {name} must be positive, got {val}")


@dataclass(frozen=True)
class VariableLayout:
    J: int

    @property
    def n(self) -> int:
        return 4 * self.J + 1

    def x(self, j: int) -> int:
        return j

    def ip(self, j: int) -> int:
        return self.J + j

    def im(self, j: int) -> int:
        return 2 * self.J + j

    def y(self, j: int) -> int:
        return 3 * self.J + j

    @property
    def o(self) -> int:
        return 4 * self.J

    def index(self, kind: str, j: int = 0) -> int:
        return {"x": self.x, "ip": self.ip, "im": self.im, "y": self.y}[kind](j) if kind != "o" else self.o

    def names(self, t: int) -> list[str]:
        J = self.J
        return ([f"x_{t}_{j}" for j in range(J)] + [f"ip_{t}_{j}" for j in range(J)]
                + [f"im_{t}_{j}" for j in range(J)] + [f"y_{t}_{j}" for j in range(J)] + [f"o_{t}"])

    def integrality(self) -> np.ndarray:
        out = np.zeros(self.n, dtype=int)
        out[3 * self.J:4 * self.J] = 1
        return out


@dataclass(frozen=True, eq=False)
class StageBlock:
    """Stage data: state equations ``A x_t + B x_{t-1} = b`` and recourse rows ``C x_t >= d``."""

    t: int
    c: np.ndarray
    A: np.ndarray
    B: np.ndarray | None
    b: np.ndarray
    C: np.ndarray
    d: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    integrality: np.ndarray

    @property
    def n(self) -> int:
        return len(self.c)


@dataclass(frozen=True, eq=False)
class MslotInstance:
    """A lot-sizing instance; all arrays are indexed ``[t - 1, j]``."""

    process: ProcessParams | FiniteSupportProcess
    knobs: Knobs
    mean: np.ndarray          # E[D_tj]
    hold: np.ndarray
    backlog: np.ndarray
    setup: np.ndarray
    overtime: np.ndarray      # (T,)
    ts: np.ndarray            # (J,)
    tb: np.ndarray            # (J,)
    cap: np.ndarray           # (T,)
    inv_cap: np.ndarray       # (T, J)
    over_cap: np.ndarray      # (T,)
    bigm: np.ndarray          # (J,)
    backlog_ub: np.ndarray    # (T, J)
    instance_id: str = ""
    mu_seed: int | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def T(self) -> int:
        return self.mean.shape[0]

    @property
    def J(self) -> int:
        return self.mean.shape[1]

    @property
    def layout(self) -> VariableLayout:
        return VariableLayout(self.J)

    def stage_cost(self, t: int) -> np.ndarray:
        lay, J = self.layout, self.J
        c = np.zeros(lay.n)
        c[J:2 * J] = self.hold[t - 1]
        c[2 * J:3 * J] = self.backlog[t - 1]
        c[3 * J:4 * J] = self.setup[t - 1]
        c[lay.o] = self.overtime[t - 1]
        return c

    def next_inv_cap(self, t: int) -> np.ndarray:
        # I_{T+1} is not defined; the last stage reuses I_T
        return self.inv_cap[min(t, self.T - 1)]

    def to_json(self) -> dict:
        if not isinstance(self.process, ProcessParams):
            raise ParameterError("only AR instances are serializable")
        return {"instanceId": self.instance_id, "knobs": asdict(self.knobs),
                "process": self.process.to_json(), "muSeed": self.mu_seed}

    @classmethod
    def from_json(cls, obj: dict) -> "MslotInstance":
        proc = ProcessParams.from_json(obj["process"])
        return build_mslot(proc, Knobs(**obj["knobs"]), obj.get("instanceId", ""), obj.get("muSeed"))

    def content_hash(self) -> str:
        if "hash" not in self._cache:
            if isinstance(self.process, ProcessParams):
                payload = json.dumps(self.to_json(), sort_keys=True)
            else:
                payload = repr([(n.stage, n.parent, n.demand.tolist(), n.prob) for n in self.process.nodes])
                payload += json.dumps(asdict(self.knobs), sort_keys=True)
            self._cache["hash"] = hashlib.sha256(payload.encode()).hexdigest()[:16]
        return self._cache["hash"]


def build_mslot(process, knobs: Knobs | None = None, instance_id: str = "",
                mu_seed: int | None = None) -> MslotInstance:
    """Derive all lot-sizing parameters from the demand means of ``process``."""
    k = knobs or Knobs()
    mean = np.asarray(process.mean_demand(), dtype=float)
    if not np.all(mean > 0):
        raise ParameterError("expected demands must be positive")
    T, J = mean.shape
    avg = mean.mean(axis=0)  # average expected demand per product
    hold = np.full((T, J), k.holding_cost)
    backlog = k.backlog_factor * hold
    backlog[T - 1] = k.end_backlog_cost
    setup = k.delta_y * avg[None, :] * k.tbo**2 * hold
    tb = np.full(J, k.tb)
    ts = k.ts_rel * avg * tb
    cap = k.cap_factor * mean.sum(axis=1) / k.util
    inv_cap = np.tile(k.delta_inv * avg, (T, 1))
    over_cap = k.delta_over * cap
    bigm = k.bigm_factor * avg
    # loose bound that keeps each stage polytope compact
    backlog_ub = np.cumsum(np.full((T, J), 10.0 * inv_cap.sum(axis=1, keepdims=True)), axis=0)
    return MslotInstance(process, k, mean, hold, backlog, setup, np.full(T, k.overtime_cost),
                         ts, tb, cap, inv_cap, over_cap, bigm, backlog_ub, instance_id, mu_seed)


def draw_means(T: int, J: int, seed: int, low: float = 40.0, high: float = 160.0) -> np.ndarray:
    """Stage-product demand means drawn uniformly from ``[low, high]``."""
    return make_rng(seed, "means", T, J).uniform(low, high, size=(T, J))


def generate_instance(T: int, J: int, rho: float = 0.6, rho_y: float = 0.2, seed: int = 0,
                      mu_seed: int | None = None, knobs: Knobs | None = None) -> MslotInstance:
    """Desk instance with means drawn from ``mu_seed`` (defaults to ``seed``)."""
    mu_seed = seed if mu_seed is None else mu_seed
    proc = ProcessParams(rho, rho_y, draw_means(T, J, mu_seed), seed)
    iid = f"T{T}_J{J}_rho{rho}_rhoY{rho_y}_s{seed}"
    return build_mslot(proc, knobs, iid, mu_seed)


def state_matrices(inst: MslotInstance) -> tuple[np.ndarray, np.ndarray]:
    """``(A, B)`` shared by every stage (``B`` is unused at stage 1)."""
    if "AB" not in inst._cache:
        lay, J = inst.layout, inst.J
        A = np.zeros((J, lay.n))
        B = np.zeros((J, lay.n))
        for j in range(J):
            A[j, lay.im(j)] = 1.0
            A[j, lay.ip(j)] = -1.0
            B[j, lay.ip(j)] = 1.0
            B[j, lay.im(j)] = -1.0
            B[j, lay.x(j)] = 1.0
        inst._cache["AB"] = (A, B)
    return inst._cache["AB"]


def recourse_rows(inst: MslotInstance, t: int):
    """``(C, d, lb, ub)`` of the stage-``t`` polytope ``X_t``."""
    key = ("rec", t)
    if key not in inst._cache:
        if not 1 <= t <= inst.T:
            raise StageRangeError(f"stage {t} outside 1..{inst.T}")
        lay, J = inst.layout, inst.J
        C = np.zeros((1 + 2 * J, lay.n))
        d = np.zeros(1 + 2 * J)
        # capacity with overtime: sum(TS y + TB x) - o <= Cap
        for j in range(J):
            C[0, lay.y(j)] = -inst.ts[j]
            C[0, lay.x(j)] = -inst.tb[j]
        C[0, lay.o] = 1.0
        d[0] = -inst.cap[t - 1]
        nxt = inst.next_inv_cap(t)
        for j in range(J):
            C[1 + j, lay.y(j)] = inst.bigm[j]      # M y - x >= 0
            C[1 + j, lay.x(j)] = -1.0
            C[1 + J + j, lay.ip(j)] = -1.0         # i+ + x <= I_{t+1}
            C[1 + J + j, lay.x(j)] = -1.0
            d[1 + J + j] = -nxt[j]
        lb = np.zeros(lay.n)
        ub = np.empty(lay.n)
        ub[:J] = nxt
        ub[J:2 * J] = inst.inv_cap[t - 1]
        ub[2 * J:3 * J] = inst.backlog_ub[t - 1]
        ub[3 * J:4 * J] = 1.0
        ub[lay.o] = inst.over_cap[t - 1]
        inst._cache[key] = (C, d, lb, ub)
    return inst._cache[key]


def stage_block(inst: MslotInstance, t: int, demand_t) -> StageBlock:
    if not 1 <= t <= inst.T:
        raise StageRangeError(f"stage {t} outside 1..{inst.T}")
    demand_t = np.asarray(demand_t, dtype=float)
    if demand_t.shape != (inst.J,) or np.any(demand_t < 0):
        raise ParameterError("demand_t must be a nonnegative vector of length J")
    A, B = state_matrices(inst)
    C, d, lb, ub = recourse_rows(inst, t)
    return StageBlock(t, inst.stage_cost(t), A.copy(), None if t == 1 else B.copy(),
                      demand_t.copy(), C.copy(), d.copy(), lb.copy(), ub.copy(),
                      inst.layout.integrality())


def zero_production_solution(inst: MslotInstance, prev: np.ndarray | None, t: int,
                             demand_t) -> np.ndarray:
    """Stage decision that produces nothing and pushes net demand into backlog.

    Existing inventory is carried as long as the capacity row allows it.
    """
    lay, J = inst.layout, inst.J
    A, B = state_matrices(inst)
    carried = np.zeros(J) if prev is None or t == 1 else B @ prev
    net = np.asarray(demand_t, dtype=float) - carried   # = im - ip
    x = np.zeros(lay.n)
    x[J:2 * J] = np.maximum(-net, 0.0)
    x[2 * J:3 * J] = np.maximum(net, 0.0)
    return x


# -- multi-stage models on prefix trees -------------------------------------

@dataclass(frozen=True, eq=False)
class TreeModelNode:
    """Node of a stage-indexed decision tree; ``cost`` overrides ``weight * c_t``."""

    stage: int
    parent: int
    demand: np.ndarray
    weight: float = 1.0
    cost: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class TreeModel:
    model: MipModel
    nodes: tuple[TreeModelNode, ...]
    n_stage: int

    def block(self, x: np.ndarray, node: int) -> np.ndarray:
        return x[node * self.n_stage:(node + 1) * self.n_stage]


def build_tree_model(inst: MslotInstance, nodes, prev_state: np.ndarray | None = None) -> TreeModel:
    """MIP over a tree of stage decisions.

    Each node gets a full copy of the stage variables. A node whose parent is
    ``-1`` links to ``prev_state`` (the fixed decision of the previous stage)
    or, at stage 1, to nothing.
    """
    nodes = tuple(nodes)
    lay, J = inst.layout, inst.J
    n = lay.n
    A, B = state_matrices(inst)
    N = len(nodes)
    rows, cols, vals = [], [], []
    lo, hi = [], []
    lb = np.empty(N * n)
    ub = np.empty(N * n)
    c = np.empty(N * n)
    integ = np.tile(lay.integrality(), N)
    r0 = 0
    Ai, Aj = np.nonzero(A)
    Bi, Bj = np.nonzero(B)
    for k, nd in enumerate(nodes):
        t = nd.stage
        off = k * n
        C, d, slb, sub = recourse_rows(inst, t)
        lb[off:off + n] = slb
        ub[off:off + n] = sub
        c[off:off + n] = nd.weight * inst.stage_cost(t) if nd.cost is None else nd.cost
        rhs = np.asarray(nd.demand, dtype=float).copy()
        rows.append(r0 + Ai); cols.append(off + Aj); vals.append(A[Ai, Aj])
        if nd.parent >= 0:
            if nodes[nd.parent].stage != t - 1:
                raise StructureError("parent must sit one stage earlier")
            rows.append(r0 + Bi); cols.append(nd.parent * n + Bj); vals.append(B[Bi, Bj])
        elif t > 1 and prev_state is not None:
            rhs = rhs - B @ prev_state
        lo.append(rhs); hi.append(rhs)
        r0 += J
        Ci, Cj = np.nonzero(C)
        rows.append(r0 + Ci); cols.append(off + Cj); vals.append(C[Ci, Cj])
        lo.append(d); hi.append(np.full(len(d), np.inf))
        r0 += len(d)
    M = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(r0, N * n))
    model = MipModel(c, M, np.concatenate(lo), np.concatenate(hi), lb, ub, integ)
    return TreeModel(model, nodes, n)


def chain_nodes(inst: MslotInstance, demands, t0: int = 1, costs=None) -> list[TreeModelNode]:
    """Single-path nodes for stages ``t0..T`` with the given demand rows."""
    out = []
    for s in range(t0, inst.T + 1):
        cost = None if costs is None else costs[s - t0]
        out.append(TreeModelNode(s, -1 if s == t0 else len(out) - 1, demands[s - 1], 1.0, cost))
    return out


def prefix_tree(paths) -> tuple[list[TreeModelNode], list[tuple[int, ...]]]:
    """Merge paths sharing a demand history into one node per distinct prefix.

    Returns the nodes (weights = total probability) and, per path, its node ids.
    """
    paths = list(paths)
    if not paths:
        raise StructureError("need at least one path")
    T, J = paths[0].demands.shape
    if any(p.demands.shape != (T, J) for p in paths):
        raise StructureError("paths disagree on (T, J)")
    total = sum(p.prob for p in paths)
    if abs(total - 1.0) > 1e-9:
        raise StructureError(f"path probabilities sum to {total}, not 1")
    index: dict[tuple, int] = {}
    weights: list[float] = []
    spec: list[tuple[int, int, np.ndarray]] = []
    ids = []
    for p in paths:
        parent = -1
        chain = []
        for t in range(1, T + 1):
            key = p.demands[:t].tobytes() if p.nodes is None else ("node", p.nodes[t - 1])
            if key not in index:
                index[key] = len(spec)
                spec.append((t, parent, p.demands[t - 1].copy()))
                weights.append(0.0)
            k = index[key]
            if spec[k][1] != parent:
                raise StructureError("inconsistent prefixes: a node has two parents")
            weights[k] += p.prob
            chain.append(k)
            parent = k
        ids.append(tuple(chain))
    nodes = [TreeModelNode(t, par, dem, w) for (t, par, dem), w in zip(spec, weights)]
    return nodes, ids


def extensive_form(inst: MslotInstance, paths) -> TreeModel:
    """Probability-weighted extensive form over the prefix tree of ``paths``."""
    nodes, _ = prefix_tree(paths)
    return build_tree_model(inst, nodes)
