"""Basis catalogs for Lagrangian dual decision rules and the coefficient model.

A basis function is either the constant ``1`` (``None``) or a single demand
``D_{s, j'}`` (a :class:`Demand`). Bases are row-local: each SW state-equation
row ``(t, j)`` and each NA penalized variable ``(t, var, j)`` owns its list.

SW multipliers are ``pi_tj = sum_k Phi_tjk beta_tjk``; NA multipliers are
``gamma_{t,var,j} = sum_k (Psi_k - E[Psi_k | xi^t]) alpha_{t,var,j,k}``. Bases
measurable at the row's own stage center to zero, so NA coefficient vectors
drop them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .process import StageRangeError

SW = "sw"
NA = "na"
NA_VAR_SETS = {"x": ("x",), "state": ("ip", "im"), "all": ("x", "ip", "im")}


class UnsupportedStructure(ValueError):
    """The instance does not have the constant +-1 state-equation pattern."""


class Demand(NamedTuple):
    stage: int
    product: int


Basis = Demand | None


@dataclass(frozen=True)
class BasisRow:
    stage: int
    var: str          # "state" for SW rows, "x" / "ip" / "im" for NA rows
    product: int
    bases: tuple

    def label(self) -> str:
        return f"{self.var}[{self.stage},{self.product}]"


def _sw_bases(option: int, t: int, j: int, J: int, include_constant: bool) -> list:
    if option == 1:
        out = [Demand(s, jj) for s in range(1, t + 1) for jj in range(J)]
    elif option == 2:
        out = [Demand(t, jj) for jj in range(J)]
    elif option == 3:
        out = [Demand(s, j) for s in range(1, t + 1)]
    elif option == 4:
        out = [Demand(t, j)]
    else:
        raise ValueError(f"basis option must be 1..4, got {option}")
    return ([None] if include_constant else []) + out


def _na_bases(option: int, t: int, j: int, J: int, T: int) -> list:
    if t >= T:
        return []
    if option == 1:
        return [Demand(s, jj) for s in range(t + 1, T + 1) for jj in range(J)]
    if option == 2:
        return [Demand(t + 1, jj) for jj in range(J)]
    if option == 3:
        return [Demand(s, j) for s in range(t + 1, T + 1)]
    if option == 4:
        return [Demand(t + 1, j)]
    raise ValueError(f"basis option must be 1..4, got {option}")


@dataclass(frozen=True)
class BasisSpec:
    """Which basis functions a dual uses.

    ``rows`` overrides the option-based catalog (used by :func:`lift_sw_to_na`).
    ``keep_stage1`` keeps the stage-1 state equations inside the SW stage
    subproblem, so no SW weights exist for stage 1.
    """

    kind: str
    option: int | None = 1
    na_vars: str = "x"
    include_constant: bool = True
    keep_stage1: bool = True
    rows: tuple | None = None

    def __post_init__(self):
        if self.kind not in (SW, NA):
            raise ValueError(f"dual kind must be 'sw' or 'na', got {self.kind!r}")
        if self.rows is None and self.option not in (1, 2, 3, 4):
            raise ValueError(f"basis option must be 1..4, got {self.option}")
        if self.kind == NA and self.na_vars not in NA_VAR_SETS:
            raise ValueError(f"NA variable set must be one of {sorted(NA_VAR_SETS)}")

    def catalog(self, T: int, J: int) -> tuple[BasisRow, ...]:
        """All rows with their bases, inert ones included."""
        if self.rows is not None:
            return tuple(self.rows)
        out = []
        if self.kind == SW:
            first = 2 if self.keep_stage1 else 1
            for t in range(first, T + 1):
                for j in range(J):
                    out.append(BasisRow(t, "state", j,
                                        tuple(_sw_bases(self.option, t, j, J, self.include_constant))))
        else:
            for t in range(1, T + 1):
                for var in NA_VAR_SETS[self.na_vars]:
                    for j in range(J):
                        out.append(BasisRow(t, var, j, tuple(_na_bases(self.option, t, j, J, T))))
        return tuple(out)

    def to_json(self) -> dict:
        out = {"kind": self.kind, "option": self.option, "naVars": self.na_vars,
               "includeConstant": self.include_constant, "keepStage1": self.keep_stage1}
        if self.rows is not None:
            out["rows"] = [[r.stage, r.var, r.product, [None if b is None else list(b) for b in r.bases]]
                           for r in self.rows]
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "BasisSpec":
        rows = None
        if obj.get("rows") is not None:
            rows = tuple(BasisRow(s, v, j, tuple(None if b is None else Demand(*b) for b in bases))
                         for s, v, j, bases in obj["rows"])
        return cls(obj["kind"], obj.get("option"), obj.get("naVars", "x"),
                   obj.get("includeConstant", True), obj.get("keepStage1", True), rows)


def is_inert(kind: str, row: BasisRow, basis) -> bool:
    """NA bases known at the row's stage center to zero and carry no weight."""
    return kind == NA and (basis is None or basis.stage <= row.stage)


@dataclass(frozen=True, eq=False)
class CoefLayout:
    """Flattened weight index for a spec on a ``(T, J)`` instance."""

    spec: BasisSpec
    T: int
    J: int
    rows: tuple[BasisRow, ...]
    row: np.ndarray        # row number of each weight
    stage: np.ndarray      # stage of the weight's row
    var: tuple[str, ...]
    product: np.ndarray
    b_stage: np.ndarray    # 0 for the constant basis
    b_product: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False)

    @classmethod
    def build(cls, spec: BasisSpec, T: int, J: int) -> "CoefLayout":
        rows = []
        cols = {k: [] for k in ("row", "stage", "var", "product", "bs", "bp")}
        for r in spec.catalog(T, J):
            if not 1 <= r.stage <= T or not 0 <= r.product < J:
                raise StageRangeError(f"row {r.label()} outside the instance")
            active = [b for b in r.bases if not is_inert(spec.kind, r, b)]
            if spec.kind == SW and any(b is not None and b.stage > r.stage for b in active):
                raise ValueError(f"SW row {r.label()} uses a future demand")
            if not active:
                continue
            ri = len(rows)
            rows.append(BasisRow(r.stage, r.var, r.product, tuple(active)))
            for b in active:
                cols["row"].append(ri)
                cols["stage"].append(r.stage)
                cols["var"].append(r.var)
                cols["product"].append(r.product)
                cols["bs"].append(0 if b is None else b.stage)
                cols["bp"].append(0 if b is None else b.product)
        ia = lambda k: np.asarray(cols[k], dtype=int)
        return cls(spec, T, J, tuple(rows), ia("row"), ia("stage"), tuple(cols["var"]),
                   ia("product"), ia("bs"), ia("bp"))

    @property
    def size(self) -> int:
        return len(self.row)

    def labels(self) -> list[str]:
        out = []
        for i in range(self.size):
            b = "1" if self.b_stage[i] == 0 else f"D[{self.b_stage[i]},{self.b_product[i]}]"
            out.append(f"{self.var[i]}[{self.stage[i]},{self.product[i]}]*{b}")
        return out

    def evaluate(self, table: np.ndarray, at_stage: np.ndarray | None = None) -> np.ndarray:
        """Basis values read from ``table``.

        ``table`` is either a ``(T, J)`` demand matrix or a ``(T+1, T, J)`` stack
        of forecasts, indexed by ``at_stage`` per weight.
        """
        const = self.b_stage == 0
        bs = np.where(const, 1, self.b_stage) - 1
        if table.ndim == 2:
            vals = table[bs, self.b_product]
        else:
            vals = table[at_stage, bs, self.b_product]
        return np.where(const, 1.0, vals)


@dataclass(frozen=True, eq=False)
class DualCoefficients:
    layout: CoefLayout
    weights: np.ndarray
    instance_hash: str = ""

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (self.layout.size,):
            raise ValueError(f"expected {self.layout.size} weights, got shape {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite")
        w = w.copy()
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def kind(self) -> str:
        return self.layout.spec.kind

    @property
    def spec(self) -> BasisSpec:
        return self.layout.spec

    @classmethod
    def zeros(cls, spec: BasisSpec, inst) -> "DualCoefficients":
        lay = CoefLayout.build(spec, inst.T, inst.J)
        return cls(lay, np.zeros(lay.size), inst.content_hash())

    def with_weights(self, w) -> "DualCoefficients":
        return DualCoefficients(self.layout, w, self.instance_hash)

    def row_weights(self) -> list[np.ndarray]:
        return [self.weights[self.layout.row == r] for r in range(len(self.layout.rows))]

    def to_json(self) -> dict:
        lay = self.layout
        return {"kind": self.kind, "option": lay.spec.option, "naVars": lay.spec.na_vars,
                "spec": lay.spec.to_json(), "stages": lay.T, "products": lay.J,
                "rows": [r.label() for r in lay.rows],
                "weights": [float(v) for v in self.weights],
                "instanceHash": self.instance_hash, "basisCountReported": lay.size}

    @classmethod
    def from_json(cls, obj: dict) -> "DualCoefficients":
        spec = BasisSpec.from_json(obj["spec"])
        lay = CoefLayout.build(spec, obj["stages"], obj["products"])
        return cls(lay, np.asarray(obj["weights"], dtype=float), obj.get("instanceHash", ""))

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1)


# -- per-path basis values --------------------------------------------------

def path_forecasts(process, path) -> np.ndarray:
    """``F[t]`` = forecast after observing stage ``t``, for ``t = 0..T``."""
    return np.stack([process.forecast(path, t) for t in range(process.T + 1)])


def sw_basis_values(spec: BasisSpec, inst, path, t: int) -> list[np.ndarray]:
    """Values of the stage-``t`` SW bases, one array per state row ``j``."""
    if spec.kind != SW:
        raise ValueError("SW basis values need an SW spec")
    if not 1 <= t <= inst.T:
        raise StageRangeError(f"stage {t} outside 1..{inst.T}")
    return [np.array([1.0 if b is None else path.demands[b.stage - 1, b.product] for b in r.bases])
            for r in spec.catalog(inst.T, inst.J) if r.stage == t]


def na_basis_values(spec: BasisSpec, inst, path, t: int) -> list[np.ndarray]:
    """Raw values of the stage-``t`` NA bases, one array per penalized row."""
    if spec.kind != NA:
        raise ValueError("NA basis values need an NA spec")
    if not 1 <= t <= inst.T:
        raise StageRangeError(f"stage {t} outside 1..{inst.T}")
    return [np.array([1.0 if b is None else path.demands[b.stage - 1, b.product] for b in r.bases])
            for r in spec.catalog(inst.T, inst.J) if r.stage == t]


def na_centered_values(spec: BasisSpec, inst, path, t: int) -> list[np.ndarray]:
    """``Psi - E[Psi | xi^t]`` for the stage-``t`` NA rows."""
    if spec.kind != NA:
        raise ValueError("NA basis values need an NA spec")
    f = inst.process.forecast(path, t)
    out = []
    for r in spec.catalog(inst.T, inst.J):
        if r.stage != t:
            continue
        out.append(np.array([0.0 if b is None else
                             path.demands[b.stage - 1, b.product] - f[b.stage - 1, b.product]
                             for b in r.bases]))
    return out


# -- SW -> NA lifting --------------------------------------------------------

def _check_state_pattern(inst) -> None:
    from .instance import state_matrices  # local import avoids a cycle

    try:
        A, B = state_matrices(inst)
    except AttributeError as exc:
        raise UnsupportedStructure("lifting needs a lot-sizing instance") from exc
    lay = inst.layout
    for j in range(inst.J):
        expect_a = {lay.im(j): 1.0, lay.ip(j): -1.0}
        expect_b = {lay.ip(j): 1.0, lay.im(j): -1.0, lay.x(j): 1.0}
        if ({int(k): A[j, k] for k in np.nonzero(A[j])[0]} != expect_a
                or {int(k): B[j, k] for k in np.nonzero(B[j])[0]} != expect_b):
            raise UnsupportedStructure("state equations are not the constant +-1 pattern")


# coefficient of each NA variable in B_t row j (the stage t-1 side)
B_SIGN = {"ip": 1.0, "im": -1.0, "x": 1.0}
A_SIGN = {"ip": -1.0, "im": 1.0}


def lift_sw_to_na(sw_spec: BasisSpec, inst) -> BasisSpec:
    """NA spec containing ``Phi^T A_t`` on stage ``t`` and ``Phi^T B_t`` on stage ``t-1``.

    With row-local bases and the +-1 state pattern, every product is (up to
    sign) the original basis attached to a penalized variable row, so the
    lifted rows simply inherit the SW bases. Signs are absorbed by the free
    weights; :func:`lift_sw_weights` gives the matching embedding.
    """
    if sw_spec.kind != SW:
        raise ValueError("lifting starts from an SW spec")
    _check_state_pattern(inst)
    T, J = inst.T, inst.J
    rows: dict[tuple[int, str, int], list] = {}

    def attach(stage, var, j, bases):
        lst = rows.setdefault((stage, var, j), [])
        for b in bases:
            if b not in lst:
                lst.append(b)

    for r in sw_spec.catalog(T, J):
        for var in ("ip", "im"):
            attach(r.stage, var, r.product, r.bases)
        if r.stage > 1:
            for var in ("ip", "im", "x"):
                attach(r.stage - 1, var, r.product, r.bases)
    order = {"x": 0, "ip": 1, "im": 2}
    keys = sorted(rows, key=lambda k: (k[0], order[k[1]], k[2]))
    return BasisSpec(NA, None, "all", False, sw_spec.keep_stage1,
                     tuple(BasisRow(s, v, j, tuple(rows[(s, v, j)])) for s, v, j in keys))


def lift_sw_weights(sw: DualCoefficients, na_layout: CoefLayout) -> np.ndarray:
    """NA weights whose multipliers reproduce the SW relaxation's objective terms.

    Only the ``B_t`` part matters: the ``A_t`` part attaches bases known at
    stage ``t``, which are inert in the NA dual.
    """
    lookup = {}
    sl = sw.layout
    for i in range(sl.size):
        lookup[(int(sl.stage[i]), int(sl.product[i]), int(sl.b_stage[i]), int(sl.b_product[i]))] = sw.weights[i]
    out = np.zeros(na_layout.size)
    for i in range(na_layout.size):
        key = (int(na_layout.stage[i]) + 1, int(na_layout.product[i]),
               int(na_layout.b_stage[i]), int(na_layout.b_product[i]))
        if key in lookup:
            out[i] = -B_SIGN[na_layout.var[i]] * lookup[key]
    return out


def default_sample_size(kind: str, T: int, n_weights: int, purpose: str = "train") -> int:
    """Sample-size rule: ceil(50/T) (SW) or ceil(100/T) (NA) per weight for
    training, ceil(250/T) per NA weight for evaluation."""
    per = {("sw", "train"): 50, ("na", "train"): 100}.get((kind, purpose), 250)
    return max(1, -(-per // T) * max(n_weights, 1))
