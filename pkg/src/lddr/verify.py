"""Self-check suites run by ``lddr verify``.

Each suite returns a :class:`SuiteReport` listing named checks. The exact
suites (oracle, lemma2, gradient) compare against enumeration on tiny
instances; the Monte Carlo suites (condexp, process) use 3-standard-error
bands.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .basis import BasisSpec, DualCoefficients, lift_sw_to_na
from .dual_na import evaluate_na
from .dual_sw import evaluate_sw
from .evalstat import (exact_dual_value, exact_pi_value, exact_policy_value, extensive_optimum,
                       lemma2_check, random_small_mip)
from .instance import build_mslot
from .master import MasterOptions, train
from .policy import PolicyConfig
from .process import FiniteSupportProcess, ProcessParams, make_rng, sample_paths

SUITES = ("oracle", "lemma2", "gradient", "condexp", "process")


@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class SuiteReport:
    suite: str
    checks: list[Check] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def add(self, name: str, passed: bool, detail: str = "") -> None:
        self.checks.append(Check(name, bool(passed), detail))

    def summary(self) -> str:
        ok = sum(c.passed for c in self.checks)
        return f"{self.suite}: {ok}/{len(self.checks)} checks passed"


def oracle_tree(seed: int = 0) -> FiniteSupportProcess:
    """Three stages, one product, two outcomes per stage, history-dependent demand."""
    return FiniteSupportProcess.multiplicative([100.0], [[[0.5], [1.6]], [[0.7], [1.4]]],
                                               [[0.4, 0.6], [0.5, 0.5]], seed)


def oracle_instance(seed: int = 0):
    tree = oracle_tree(seed)
    return tree, build_mslot(tree, instance_id="oracle")


def random_weights(coeffs: DualCoefficients, rng: np.random.Generator, box: float = 1e3) -> DualCoefficients:
    """Weights spread over many magnitudes inside the box."""
    n = coeffs.layout.size
    mag = box * 10.0 ** rng.uniform(-4, 0, size=n)
    return coeffs.with_weights(np.clip(rng.uniform(-1, 1, size=n) * mag, -box, box))


def rel_le(a: float, b: float, rtol: float = 1e-6) -> bool:
    return a <= b + rtol * max(1.0, abs(b))


def suite_oracle(n_draws: int = 20, seed: int = 0) -> SuiteReport:
    rep = SuiteReport("oracle")
    tree, inst = oracle_instance(seed)
    opt = extensive_optimum(tree, inst)
    rng = make_rng(seed, "oracle-draws")
    sw0 = DualCoefficients.zeros(BasisSpec("sw", 1), inst)
    na0 = DualCoefficients.zeros(BasisSpec("na", 1, "all"), inst)
    sw_ok = [rel_le(exact_dual_value(random_weights(sw0, rng), inst, tree), opt) for _ in range(n_draws)]
    na_ok = [rel_le(exact_dual_value(random_weights(na0, rng), inst, tree), opt) for _ in range(n_draws)]
    rep.add("weak duality SW", all(sw_ok), f"{sum(sw_ok)}/{n_draws}")
    rep.add("weak duality NA", all(na_ok), f"{sum(na_ok)}/{n_draws}")
    pi = exact_pi_value(inst, tree)
    rep.add("PI <= optimum", rel_le(pi, opt), f"PI={pi:.6f} opt={opt:.6f}")
    sw_spec = BasisSpec("sw", 4)
    opts = MasterOptions(tol=1e-9)
    leaves = tree.leaves()
    sw = train("sw", inst, leaves, sw_spec, opts)
    na = train("na", inst, leaves, lift_sw_to_na(sw_spec, inst), opts)
    rep.add("SW <= NA (lifted)", sw.value <= na.value + 1e-6 * abs(na.value),
            f"SW={sw.value:.6f} NA={na.value:.6f}")
    rep.add("NA <= optimum", rel_le(na.value, opt), f"NA={na.value:.6f}")
    rep.add("PI <= NA", rel_le(pi, na.value), "")
    ub = exact_policy_value(PolicyConfig("condexp"), inst, tree)
    rep.add("optimum <= CondExp policy", rel_le(opt, ub), f"policy={ub:.6f}")
    return rep


def suite_lemma2(n: int = 20, seed: int = 0) -> SuiteReport:
    rep = SuiteReport("lemma2")
    rng = make_rng(seed, "lemma2")
    for k in range(n):
        mip, G = random_small_mip(rng)
        res = lemma2_check(mip, G)
        rep.add(f"mip {k}", res.passed, f"cutting-plane={res.cutting_plane:.9g} primal={res.primal:.9g}")
    return rep


def probe_cuts(result, evaluate, rng, n_probes: int = 50, box: float = 1e3, rtol: float = 1e-6):
    """Tightness at the expansion point and validity at random probes for each cut.

    ``evaluate(scenario, w)`` returns the scenario function value.
    Returns ``(n_tight, n_valid, n_cuts)``.
    """
    tight = valid = 0
    for cut in result.generated:
        f0 = evaluate(cut.scenario, cut.point)
        tight += abs(cut.value(cut.point) - f0) <= rtol * max(1.0, abs(f0))
        ok = True
        for p in range(n_probes):
            if p % 2 == 0:
                w = cut.point + rng.normal(size=cut.point.size) * 10.0 ** rng.uniform(-3, 1)
            else:
                w = rng.uniform(-box, box, size=cut.point.size) * 10.0 ** rng.uniform(-3, 0)
            w = np.clip(w, -box, box)
            f = evaluate(cut.scenario, w)
            ok &= f <= cut.value(w) + rtol * max(1.0, abs(f))
        valid += ok
    return tight, valid, len(result.generated)


def suite_gradient(seed: int = 0, n_probes: int = 50) -> SuiteReport:
    rep = SuiteReport("gradient")
    tree, inst = oracle_instance(seed)
    leaves = tree.leaves()
    rng = make_rng(seed, "gradient")
    sw_spec = BasisSpec("sw", 4)
    opts = MasterOptions(tol=1e-6, max_iter=40)
    for kind, spec in (("sw", sw_spec), ("na", lift_sw_to_na(sw_spec, inst))):
        res = train(kind, inst, leaves, spec, opts, record_cuts=True)
        template = DualCoefficients.zeros(spec, inst)
        if kind == "sw":
            ev = lambda k, w: evaluate_sw(template.with_weights(w), inst, leaves[k])
            f = lambda k, w: ev(k, w).total
        else:
            ev = lambda k, w: evaluate_na(template.with_weights(w), inst, leaves[k])
            f = lambda k, w: ev(k, w).value
        # a sample of the generated cuts keeps the suite fast; the acceptance run probes all
        res.generated = res.generated[:: max(1, len(res.generated) // 12)]
        tight, valid, n = probe_cuts(res, f, rng, n_probes)
        rep.add(f"{kind} cuts tight", tight == n, f"{tight}/{n}")
        rep.add(f"{kind} cuts valid at {n_probes} probes", valid == n, f"{valid}/{n}")
        fd_ok = finite_difference_ok(template.layout.size, lambda w: f(0, w),
                                     lambda w: ev(0, w).grad, rng)
        rep.add(f"{kind} finite difference", fd_ok, "")
    return rep


def finite_difference_ok(dim: int, value, grad, rng, trials: int = 5, step: float = 1e-6) -> bool:
    """Directional derivatives of ``value`` match ``grad`` at random points.

    Points whose stencil straddles a kink are skipped.
    """
    hits = 0
    for _ in range(trials * 4):
        w = rng.normal(size=dim)
        d = rng.normal(size=dim)
        f0, f1, f2 = value(w), value(w + step * d), value(w + 2 * step * d)
        if abs((f2 - f1) - (f1 - f0)) > 1e-9 * max(1.0, abs(f0)):
            continue
        fd = (f1 - f0) / step
        if abs(fd - grad(w) @ d) > 1e-4 * max(1.0, abs(fd)):
            return False
        hits += 1
        if hits >= trials:
            return True
    return hits > 0


def suite_condexp(n_triples: int = 20, n_mc: int = 100_000, seed: int = 0) -> SuiteReport:
    rep = SuiteReport("condexp")
    rng = make_rng(seed, "condexp-triples")
    proc = ProcessParams(0.6, 0.2, rng.uniform(40, 160, size=(5, 3)), seed)
    paths = sample_paths(proc, 50, "condexp-base")
    hits = 0
    for k in range(n_triples):
        p = paths[int(rng.integers(len(paths)))]
        t = int(rng.integers(1, proc.T))
        h = int(rng.integers(1, proc.T - t + 1))
        j = int(rng.integers(proc.J))
        draws = proc.conditional_arrays(p, t, n_mc, ("verify", k))[:, t + h - 1, j]
        se = draws.std(ddof=1) / np.sqrt(n_mc)
        hits += abs(draws.mean() - proc.conditional_mean_demand(p, t, h, j)) <= 3 * se
    need = int(np.ceil(0.97 * n_triples)) if n_triples >= 34 else n_triples - 1
    rep.add("continuation means within 3 SE", hits >= need, f"{hits}/{n_triples}")
    return rep


def suite_process(n: int = 20_000, seed: int = 0) -> SuiteReport:
    rep = SuiteReport("process")
    rng = make_rng(seed, "process-means")
    proc = ProcessParams(0.6, 0.2, rng.uniform(40, 160, size=(4, 3)), seed)
    d, y, delta = proc.sample_arrays(n, "verify")
    se = d.std(axis=0, ddof=1) / np.sqrt(n)
    inside = np.abs(d.mean(axis=0) - proc.mu) <= 3 * se
    rep.add("unconditional means within 3 SE", inside.mean() >= 0.9, f"{inside.sum()}/{inside.size}")
    recon = proc.rho_y * y * proc.mu + (1 - proc.rho_y) * delta
    rep.add("reconstruction identity", np.array_equal(recon, d), "")
    rep.add("nonnegative demands", bool(np.all(d >= 0)), "")
    return rep


def run_suite(name: str, seed: int = 0) -> SuiteReport:
    start = time.perf_counter()
    if name == "oracle":
        rep = suite_oracle(seed=seed)
    elif name == "lemma2":
        rep = suite_lemma2(seed=seed)
    elif name == "gradient":
        rep = suite_gradient(seed=seed)
    elif name == "condexp":
        rep = suite_condexp(seed=seed)
    elif name == "process":
        rep = suite_process(seed=seed)
    else:
        raise ValueError(f"unknown suite {name!r}; choose from {', '.join(SUITES)}")
    rep.seconds = time.perf_counter() - start
    return rep
