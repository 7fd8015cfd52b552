"""Demand processes: the autoregressive lognormal model and finite scenario trees.

Stages are 1-based in every public signature (``t = 1..T``); products are
0-based (``j = 0..J-1``). Demand matrices are stored as ``(T, J)`` arrays, so
stage ``t`` lives in row ``t - 1``.

Both process types expose ``forecast(path, t)``, a ``(T, J)`` matrix holding
the realized demands for stages ``<= t`` and the exact conditional means
``E[D_s | xi^t]`` for ``s > t``. Everything downstream (dual centering,
lookahead terms, rolling-horizon policies) goes through it.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np


class ParameterError(ValueError):
    """Invalid process or instance parameters."""


class StageRangeError(IndexError):
    """A stage index outside the admissible range."""


def stream_key(tag) -> int:
    """Stable 64-bit integer for a stream label (str, int or tuple)."""
    digest = hashlib.blake2b(repr(tag).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def make_rng(seed: int, *tag) -> np.random.Generator:
    """Independent generator keyed by ``seed`` and an arbitrary label."""
    return np.random.default_rng(np.random.SeedSequence([int(seed) % 2**64, stream_key(tag)]))


def _continuation_rng(seed, path, t, n, tag) -> np.random.Generator:
    # the observed history is part of the key so equal ids in different sets diverge
    hist = hashlib.blake2b(np.ascontiguousarray(path.demands[:t]).tobytes(), digest_size=8).hexdigest()
    return make_rng(seed, "continuation", tag, path.id, t, n, hist)


def lognormal_from_mean_std(mean: float, std: float) -> tuple[float, float]:
    """Normal parameters ``(mu_n, sigma)`` of a lognormal with given moments.

    ``std == 0`` gives ``sigma == 0``; samplers treat that as a point mass at
    ``mean`` rather than ``exp(mu_n)``, which can be off by one ulp.
    """
    if not mean > 0:
        raise ParameterError(f"lognormal mean must be positive, got {mean}")
    if std < 0:
        raise ParameterError(f"lognormal std must be nonnegative, got {std}")
    var = np.log1p((std / mean) ** 2)
    return float(np.log(mean) - var / 2.0), float(np.sqrt(var))


def sample_lognormal(rng: np.random.Generator, mean, std, size) -> np.ndarray:
    """Lognormal draws with the given (broadcastable) mean and std."""
    mean = np.broadcast_to(np.asarray(mean, dtype=float), size)
    std = np.broadcast_to(np.asarray(std, dtype=float), size)
    if np.any(mean <= 0) or np.any(std < 0):
        raise ParameterError("lognormal needs mean > 0 and std >= 0")
    var = np.log1p((std / mean) ** 2)
    z = rng.standard_normal(size)
    out = np.exp(np.log(mean) - var / 2.0 + np.sqrt(var) * z)
    return np.where(std == 0, mean, out)


@dataclass(frozen=True, eq=False)
class ScenarioPath:
    """One sample path.

    ``nodes`` is only set for paths drawn from a :class:`FiniteSupportProcess`
    (node id per stage); AR paths carry the latent state instead.
    """

    demands: np.ndarray
    prob: float
    id: int
    latent_y: np.ndarray | None = None
    latent_delta: np.ndarray | None = None
    nodes: tuple[int, ...] | None = None

    @property
    def T(self) -> int:
        return self.demands.shape[0]

    @property
    def J(self) -> int:
        return self.demands.shape[1]

    def to_json(self) -> dict:
        out = {"id": int(self.id), "prob": float(self.prob), "demands": self.demands.tolist()}
        if self.latent_y is not None:
            out["latentY"] = self.latent_y.tolist()
            out["latentDelta"] = self.latent_delta.tolist()
        if self.nodes is not None:
            out["nodes"] = list(self.nodes)
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "ScenarioPath":
        arr = lambda key: None if key not in obj else np.asarray(obj[key], dtype=float)
        nodes = tuple(obj["nodes"]) if "nodes" in obj else None
        return cls(arr("demands"), float(obj["prob"]), int(obj["id"]),
                   arr("latentY"), arr("latentDelta"), nodes)


@dataclass(frozen=True, eq=False)
class ProcessParams:
    """AR(1) lognormal demand model.

    ``Y_1 = eps_1``, ``Y_{t+1} = rho Y_t + (1 - rho) eps_{t+1}`` and
    ``D_t = rho_y Y_t mu_t + (1 - rho_y) delta_t``, where ``eps`` has mean 1 and
    std ``eps_std`` and ``delta_t`` has mean ``mu_t`` and std
    ``delta_std_factor * t * mu_t``.
    """

    rho: float
    rho_y: float
    mu: np.ndarray
    seed: int = 0
    eps_std: float = 0.5
    delta_std_factor: float = 0.2

    def __post_init__(self):
        mu = np.array(self.mu, dtype=float)
        if mu.ndim != 2:
            raise ParameterError("mu must be a (T, J) matrix")
        mu.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        if not np.all(mu > 0):
            raise ParameterError("all mu_tj must be positive")
        if not 0 <= self.rho < 1:
            raise ParameterError(f"rho must lie in [0, 1), got {self.rho}")
        if not 0 <= self.rho_y <= 1:
            raise ParameterError(f"rho_y must lie in [0, 1], got {self.rho_y}")
        if self.T < 2 or self.J < 1:
            raise ParameterError("need T >= 2 and J >= 1")
        if self.eps_std < 0 or self.delta_std_factor < 0:
            raise ParameterError("standard deviations must be nonnegative")

    @property
    def T(self) -> int:
        return self.mu.shape[0]

    @property
    def J(self) -> int:
        return self.mu.shape[1]

    def mean_demand(self) -> np.ndarray:
        return self.mu.copy()

    def delta_std(self) -> np.ndarray:
        stages = np.arange(1, self.T + 1, dtype=float)[:, None]
        return self.delta_std_factor * stages * self.mu

    # -- sampling -------------------------------------------------------
    def _draw(self, rng, n: int, t0: int, y_prev: np.ndarray | None):
        """Draw stages ``t0+1..T`` for ``n`` paths; returns (Y, delta) of shape (n, T-t0, J)."""
        T, J = self.T, self.J
        k = T - t0
        eps = sample_lognormal(rng, 1.0, self.eps_std, (n, k, J))
        delta = sample_lognormal(rng, self.mu[t0:], self.delta_std()[t0:], (n, k, J))
        y = np.empty((n, k, J))
        prev = y_prev
        for s in range(k):
            if prev is None:
                y[:, s] = eps[:, s]
            else:
                y[:, s] = self.rho * prev + (1.0 - self.rho) * eps[:, s]
            prev = y[:, s]
        return y, delta

    def _demands(self, y: np.ndarray, delta: np.ndarray, t0: int = 0) -> np.ndarray:
        return self.rho_y * y * self.mu[t0:] + (1.0 - self.rho_y) * delta

    def sample_arrays(self, n: int, tag) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(D, Y, delta)`` arrays of shape ``(n, T, J)``."""
        if n < 1:
            raise ParameterError("need n >= 1")
        rng = make_rng(self.seed, "paths", tag, n)
        y, delta = self._draw(rng, n, 0, None)
        return self._demands(y, delta), y, delta

    def conditional_arrays(self, path: ScenarioPath, t: int, n: int, tag) -> np.ndarray:
        """Demand continuations ``(n, T, J)`` sharing stages ``1..t`` with ``path``."""
        if not 1 <= t < self.T:
            raise StageRangeError(f"conditioning stage {t} outside 1..{self.T - 1}")
        if path.latent_y is None:
            raise ParameterError("AR continuation needs the latent state on the path")
        rng = _continuation_rng(self.seed, path, t, n, tag)
        y, delta = self._draw(rng, n, t, path.latent_y[t - 1])
        out = np.empty((n, self.T, self.J))
        out[:, :t] = path.demands[:t]
        out[:, t:] = self._demands(y, delta, t)
        return out

    def conditional_sample(self, path: ScenarioPath, t: int, n: int, tag) -> list[ScenarioPath]:
        if not 1 <= t < self.T:
            raise StageRangeError(f"conditioning stage {t} outside 1..{self.T - 1}")
        if path.latent_y is None:
            raise ParameterError("AR continuation needs the latent state on the path")
        rng = _continuation_rng(self.seed, path, t, n, tag)
        y, delta = self._draw(rng, n, t, path.latent_y[t - 1])
        d = self._demands(y, delta, t)
        out = []
        for i in range(n):
            ys = np.concatenate([path.latent_y[:t], y[i]])
            ds = np.concatenate([path.latent_delta[:t], delta[i]])
            dem = np.concatenate([path.demands[:t], d[i]])
            out.append(ScenarioPath(dem, 1.0 / n, i, ys, ds))
        return out

    # -- conditional expectations --------------------------------------
    def conditional_mean_demand(self, path: ScenarioPath, t: int, h: int, j: int) -> float:
        if h < 1 or t < 1 or t + h > self.T:
            raise StageRangeError(f"need 1 <= t and t + h <= T, got t={t}, h={h}")
        y = path.latent_y[t - 1, j]
        return float(self.mu[t + h - 1, j] * (self.rho_y * self.rho**h * (y - 1.0) + 1.0))

    def forecast(self, path: ScenarioPath, t: int) -> np.ndarray:
        """Realized demands through stage ``t``, conditional means afterwards.

        ``t = 0`` gives the unconditional means.
        """
        if not 0 <= t <= self.T:
            raise StageRangeError(f"stage {t} outside 0..{self.T}")
        out = self.mu.copy()
        if t == 0:
            return out
        out[:t] = path.demands[:t]
        if t < self.T:
            h = np.arange(1, self.T - t + 1, dtype=float)[:, None]
            y = path.latent_y[t - 1][None, :]
            out[t:] = self.mu[t:] * (self.rho_y * self.rho**h * (y - 1.0) + 1.0)
        return out

    def to_json(self) -> dict:
        return {"type": "ar", "rho": self.rho, "rhoY": self.rho_y, "mu": self.mu.tolist(),
                "seed": int(self.seed), "epsStd": self.eps_std,
                "deltaStdFactor": self.delta_std_factor}

    @classmethod
    def from_json(cls, obj: dict) -> "ProcessParams":
        return cls(obj["rho"], obj["rhoY"], np.asarray(obj["mu"], dtype=float), int(obj["seed"]),
                   obj.get("epsStd", 0.5), obj.get("deltaStdFactor", 0.2))


def sample_paths(params: ProcessParams, n: int, tag) -> list[ScenarioPath]:
    """``n`` equiprobable paths, reproducible from ``(params.seed, tag, n)``."""
    d, y, delta = params.sample_arrays(n, tag)
    return [ScenarioPath(d[i], 1.0 / n, i, y[i], delta[i]) for i in range(n)]


def conditional_mean_demand(process, path: ScenarioPath, t: int, h: int, j: int) -> float:
    """``E[D_{t+h, j} | xi^t]`` for either process type."""
    if h < 1 or t < 1 or t + h > process.T:
        raise StageRangeError(f"need 1 <= t and t + h <= T, got t={t}, h={h}")
    return float(process.forecast(path, t)[t + h - 1, j])


def paths_to_json(paths) -> list[dict]:
    return [p.to_json() for p in paths]


def paths_from_json(objs) -> list[ScenarioPath]:
    return [ScenarioPath.from_json(o) for o in objs]


@dataclass(frozen=True)
class TreeNode:
    stage: int
    parent: int
    demand: np.ndarray
    prob: float  # conditional on the parent


@dataclass(frozen=True, eq=False)
class FiniteSupportProcess:
    """Scenario tree with a single root at stage 1.

    Built from explicit nodes or through :meth:`stagewise` / :meth:`multiplicative`.
    Conditional expectations are exact sums over subtrees.
    """

    nodes: tuple[TreeNode, ...]
    seed: int = 0
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if not self.nodes or self.nodes[0].parent != -1 or self.nodes[0].stage != 1:
            raise ParameterError("node 0 must be the stage-1 root")
        children: dict[int, list[int]] = {i: [] for i in range(len(self.nodes))}
        for i, nd in enumerate(self.nodes[1:], start=1):
            if not 0 <= nd.parent < i:
                raise ParameterError("parents must precede their children")
            if nd.stage != self.nodes[nd.parent].stage + 1:
                raise ParameterError("child stage must be parent stage + 1")
            children[nd.parent].append(i)
        for i, nd in enumerate(self.nodes):
            if not nd.prob > 0:
                raise ParameterError("all branch probabilities must be positive")
            if np.any(np.asarray(nd.demand) < 0):
                raise ParameterError("demands must be nonnegative")
            kids = children[i]
            if kids and abs(sum(self.nodes[k].prob for k in kids) - 1.0) > 1e-9:
                raise ParameterError(f"branch probabilities below node {i} do not sum to 1")
        leaves = [i for i in range(len(self.nodes)) if not children[i]]
        T = self.nodes[leaves[0]].stage
        if any(self.nodes[i].stage != T for i in leaves):
            raise ParameterError("all leaves must sit at the last stage")
        self._cache["children"] = children
        self._cache["leaves"] = leaves
        self._cache["T"] = T
        self._cache["expect"] = self._expectations()

    @classmethod
    def stagewise(cls, outcomes, probs, seed: int = 0) -> "FiniteSupportProcess":
        """Stagewise independent tree: ``outcomes[t]`` lists the stage-(t+1) demand vectors.

        ``outcomes[0]`` must hold exactly one vector (deterministic first stage).
        """
        return cls._grow(outcomes, probs, seed, lambda parent, out: np.asarray(out, dtype=float))

    @classmethod
    def multiplicative(cls, root, factors, probs, seed: int = 0) -> "FiniteSupportProcess":
        """History-dependent tree: child demand = parent demand * factor."""
        outcomes = [[np.asarray(root, dtype=float)]] + [list(f) for f in factors]
        probs = [[1.0]] + [list(p) for p in probs]
        return cls._grow(outcomes, probs, seed,
                         lambda parent, f: parent * np.asarray(f, dtype=float), skip_root=True)

    @classmethod
    def _grow(cls, outcomes, probs, seed, child_demand, skip_root=False):
        if len(outcomes[0]) != 1:
            raise ParameterError("the first stage must be deterministic")
        for ps in probs:
            if abs(sum(ps) - 1.0) > 1e-9 or min(ps) <= 0:
                raise ParameterError("per-stage probabilities must be positive and sum to 1")
        nodes = [TreeNode(1, -1, np.atleast_1d(np.asarray(outcomes[0][0], dtype=float)), 1.0)]
        frontier = [0]
        for s in range(1, len(outcomes)):
            nxt = []
            for par in frontier:
                for out, p in zip(outcomes[s], probs[s]):
                    dem = np.atleast_1d(child_demand(nodes[par].demand, out))
                    nodes.append(TreeNode(s + 1, par, dem, float(p)))
                    nxt.append(len(nodes) - 1)
            frontier = nxt
        return cls(tuple(nodes), seed)

    @property
    def T(self) -> int:
        return self._cache["T"]

    @property
    def J(self) -> int:
        return len(self.nodes[0].demand)

    def _expectations(self) -> dict[int, np.ndarray]:
        T, J = self._cache["T"], len(self.nodes[0].demand)
        children = self._cache["children"]
        sub = {}
        for i in reversed(range(len(self.nodes))):
            m = np.zeros((T, J))
            s = self.nodes[i].stage
            m[s - 1] = self.nodes[i].demand
            for k in children[i]:
                m[s:] += self.nodes[k].prob * sub[k][s:]
            sub[i] = m
        out = {}
        for i, nd in enumerate(self.nodes):
            m = sub[i].copy()
            p = nd.parent
            while p >= 0:
                m[self.nodes[p].stage - 1] = self.nodes[p].demand
                p = self.nodes[p].parent
            m.setflags(write=False)
            out[i] = m
        return out

    def _path_nodes(self, leaf: int) -> tuple[int, ...]:
        chain = []
        i = leaf
        while i >= 0:
            chain.append(i)
            i = self.nodes[i].parent
        return tuple(reversed(chain))

    def leaves(self) -> list[ScenarioPath]:
        """Every root-to-leaf path with its probability."""
        out = []
        for k, leaf in enumerate(self._cache["leaves"]):
            chain = self._path_nodes(leaf)
            prob = float(np.prod([self.nodes[i].prob for i in chain]))
            dem = np.array([self.nodes[i].demand for i in chain], dtype=float)
            out.append(ScenarioPath(dem, prob, k, nodes=chain))
        return out

    def mean_demand(self) -> np.ndarray:
        return self._cache["expect"][0].copy()

    def forecast(self, path: ScenarioPath, t: int) -> np.ndarray:
        if not 0 <= t <= self.T:
            raise StageRangeError(f"stage {t} outside 0..{self.T}")
        if t == 0:
            return self.mean_demand()
        return self._cache["expect"][path.nodes[t - 1]].copy()

    def conditional_mean_demand(self, path: ScenarioPath, t: int, h: int, j: int) -> float:
        return conditional_mean_demand(self, path, t, h, j)

    def conditional_support(self, path: ScenarioPath, t: int) -> list[tuple[ScenarioPath, float]]:
        """Leaves below ``path``'s stage-``t`` node with conditional probabilities."""
        node = path.nodes[t - 1]
        out = []
        for leaf in self.leaves():
            if leaf.nodes[t - 1] == node:
                cond = float(np.prod([self.nodes[i].prob for i in leaf.nodes[t:]]))
                out.append((leaf, cond))
        return out

    def conditional_arrays(self, path: ScenarioPath, t: int, n: int, tag) -> np.ndarray:
        if not 1 <= t < self.T:
            raise StageRangeError(f"conditioning stage {t} outside 1..{self.T - 1}")
        support = self.conditional_support(path, t)
        probs = np.array([p for _, p in support])
        rng = _continuation_rng(self.seed, path, t, n, tag)
        pick = rng.choice(len(support), size=n, p=probs / probs.sum())
        return np.array([support[k][0].demands for k in pick])

    def conditional_sample(self, path: ScenarioPath, t: int, n: int, tag) -> list[ScenarioPath]:
        if not 1 <= t < self.T:
            raise StageRangeError(f"conditioning stage {t} outside 1..{self.T - 1}")
        support = self.conditional_support(path, t)
        probs = np.array([p for _, p in support])
        rng = _continuation_rng(self.seed, path, t, n, tag)
        pick = rng.choice(len(support), size=n, p=probs / probs.sum())
        return [ScenarioPath(support[k][0].demands, 1.0 / n, i, nodes=support[k][0].nodes)
                for i, k in enumerate(pick)]
