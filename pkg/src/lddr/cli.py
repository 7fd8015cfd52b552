"""Command-line entry point.

Subcommands::

    lddr gen       write an instance file
    lddr train     fit SW or NA decision-rule weights
    lddr bound     append a lower-bound row (pi, sw or na) to results.csv
    lddr simulate  append a policy upper-bound row to results.csv
    lddr verify    run a self-check suite
    lddr report    build the gap report of an output directory
    lddr run       gen -> train -> bound -> simulate -> report for several T

Exit codes: 0 success, 1 usage or configuration error, 2 verification
failure, 3 solver or environment error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import io
from .basis import BasisSpec, CoefLayout, DualCoefficients, default_sample_size
from .evalstat import BoundEstimate, confidence_interval, dual_values, ordering_report
from .dual_na import pi_values
from .instance import Knobs, MslotInstance, generate_instance
from .master import MasterOptions, load_state, save_state, train
from .policy import PolicyConfig, simulate
from .process import paths_to_json, sample_paths
from .solve import SolverFailure, SolverUnavailable
from .verify import SUITES, run_suite

log = logging.getLogger("lddr")

RESULT_COLUMNS = ["instance", "method", "side", "mean", "halfwidth", "n", "level", "wallTime", "flags"]
TRAIN_COLUMNS = ["iter", "candidateValue", "incumbentValue", "modelValue", "delta", "step", "wallTime"]
CUT_COLUMNS = ["iter", "scenario", "const", "gradNorm"]
SIM_COLUMNS = ["scenario", "stage", "stageCost", "cumulativeCost", "status", "nodes", "time"]


class VerificationFailed(Exception):
    pass


@dataclass
class RunConfig:
    """Everything a pipeline run needs; every stochastic piece has a seed."""

    stages: list[int] = field(default_factory=lambda: [2, 3, 4])
    products: int = 3
    rho: float = 0.6
    rho_y: float = 0.2
    instance_seed: int = 1
    mu_seed: int | None = None
    sample_seed: int = 0
    sw_basis: int = 1
    na_basis: int = 3
    na_vars: str = "x"
    box: float = 1e3
    train_scen: int | None = None
    eval_scen: int | None = None
    tol: float = 1e-3
    max_iter: int = 500
    lam: float = 0.25
    policies: list[str] = field(default_factory=lambda: ["condexp", "sw"])
    node_limit: int = 10_000
    time_limit: float | None = 60.0
    timing_columns: bool = False

    @classmethod
    def from_json(cls, obj: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**obj)

    def digest(self) -> str:
        return io.text_hash(json.dumps(asdict(self), sort_keys=True))


# -- shared helpers ------------------------------------------------------------

def load_instance(path) -> MslotInstance:
    return MslotInstance.from_json(io.read_json(path))


def default_na_spec(na_vars: str = "x") -> BasisSpec:
    return BasisSpec("na", 3, na_vars)


def eval_size(inst: MslotInstance, requested: int | None) -> int:
    if requested:
        return requested
    n_na = CoefLayout.build(default_na_spec(), inst.T, inst.J).size
    return default_sample_size("na", inst.T, n_na, "eval")


def eval_paths(inst: MslotInstance, n: int, seed: int):
    return sample_paths(inst.process, n, ("eval", seed))


def train_paths(inst: MslotInstance, n: int, seed: int):
    return sample_paths(inst.process, n, ("train", seed))


def scenario_hash(paths) -> str:
    return io.text_hash(json.dumps(paths_to_json(paths)))


def record_timing(out: Path, key: str, seconds: float) -> None:
    """Wall times live in a sidecar file so the CSV artifacts stay reproducible."""
    path = out / "timings.json"
    data = io.read_json(path) if path.exists() else {}
    data[key] = round(seconds, 3)
    io.write_json(path, data)


def append_result(out: Path, row: dict) -> None:
    path = out / "results.csv"
    rows = io.read_csv(path) if path.exists() else []
    rows = [r for r in rows if not (r["instance"] == row["instance"] and r["method"] == row["method"])]
    rows.append({k: row[k] for k in RESULT_COLUMNS})
    io.write_csv(path, rows, RESULT_COLUMNS)


def _flags(**items) -> tuple[str, ...]:
    return tuple(f"{k}={v}" for k, v in items.items() if v is not None)


# -- commands -------------------------------------------------------------------

def cmd_gen(T: int, J: int, rho: float, rho_y: float, seed: int, out: Path, mu_seed=None,
            knobs: Knobs | None = None) -> Path:
    inst = generate_instance(T, J, rho, rho_y, seed, mu_seed, knobs)
    path = out / "instance.json"
    io.write_json(path, inst.to_json())
    return path


def cmd_train(inst_path: Path, kind: str, basis: int, na_vars: str, n_train: int | None, seed: int,
              out: Path, opts: MasterOptions, resume: bool = False, timing_columns: bool = False):
    inst = load_instance(inst_path)
    spec = BasisSpec(kind, basis, na_vars)
    dim = CoefLayout.build(spec, inst.T, inst.J).size
    n = n_train or default_sample_size(kind, inst.T, dim, "train")
    paths = train_paths(inst, n, seed)
    ck_path = out / f"checkpoint_{kind}.json"
    state = None
    if resume and ck_path.exists():
        state = load_state(ck_path)
        if state.status != "Optimal":
            state.status = "Running"
    start = time.perf_counter()
    res = train(kind, inst, paths, spec, opts, state=state, checkpoint=lambda s: save_state(s, ck_path))
    wall = time.perf_counter() - start
    save_state(res.state, ck_path)
    obj = res.coeffs.to_json()
    obj.update(trainValue=res.value, status=res.status, trainScenarios=n, trainHash=scenario_hash(paths),
               iterations=res.state.iteration)
    io.write_json(out / f"coeffs_{kind}.json", obj)
    rows = res.log if timing_columns else [{**r, "wallTime": ""} for r in res.log]
    io.write_csv(out / f"train_log_{kind}.csv", rows, TRAIN_COLUMNS)
    cut_rows = [{"iter": c.iteration, "scenario": c.scenario, "const": c.const,
                 "gradNorm": float(np.linalg.norm(c.grad))} for c in res.state.cuts]
    io.write_csv(out / f"cuts_{kind}.csv", cut_rows, CUT_COLUMNS)
    record_timing(out, f"train_{kind}", wall)
    return res


def load_coeffs(path) -> DualCoefficients:
    return DualCoefficients.from_json(io.read_json(path))


def cmd_bound(inst_path: Path, method: str, coeffs_path: Path | None, n_eval: int | None, seed: int,
              out: Path, timing_columns: bool = False, config_hash: str | None = None) -> BoundEstimate:
    inst = load_instance(inst_path)
    n = eval_size(inst, n_eval)
    paths = eval_paths(inst, n, seed)
    start = time.perf_counter()
    chash = None
    if method == "pi":
        vals = pi_values(inst, paths)
    else:
        if coeffs_path is None or not Path(coeffs_path).exists():
            raise FileNotFoundError(f"{method} bound needs a coefficient file")
        coeffs = load_coeffs(coeffs_path)
        if coeffs.kind != method:
            raise ValueError(f"coefficient file holds {coeffs.kind} weights, not {method}")
        chash = io.file_hash(coeffs_path)
        vals = dual_values(coeffs, inst, paths)
    wall = time.perf_counter() - start
    est = confidence_interval(vals, 0.95, "lower", f"{method}_lb" if method != "pi" else "pi")
    est = BoundEstimate(est.mean, est.halfwidth, est.n, est.level, est.side, est.method,
                        est.flags + _flags(eval=scenario_hash(paths), coeffs=chash,
                                           instance=io.file_hash(inst_path), config=config_hash))
    append_result(out, est.row(inst.instance_id, round(wall, 3) if timing_columns else ""))
    record_timing(out, f"bound_{est.method}", wall)
    return est


def cmd_simulate(inst_path: Path, policy: str, coeffs_path: Path | None, lam: float, n_eval: int | None,
                 seed: int, out: Path, node_limit: int | None, time_limit: float | None,
                 timing_columns: bool = False, config_hash: str | None = None) -> BoundEstimate:
    inst = load_instance(inst_path)
    n = eval_size(inst, n_eval)
    paths = eval_paths(inst, n, seed)
    coeffs = chash = None
    if policy != "condexp":
        if coeffs_path is None or not Path(coeffs_path).exists():
            raise FileNotFoundError(f"the {policy} policy needs a coefficient file")
        coeffs = load_coeffs(coeffs_path)
        chash = io.file_hash(coeffs_path)
    cfg = PolicyConfig(policy, lam, coeffs, node_limit=node_limit, time_limit=time_limit)
    start = time.perf_counter()
    totals, sim_rows = [], []
    for p in paths:
        run = simulate(cfg, inst, p)
        totals.append(run.total)
        cum = np.cumsum(run.stage_costs)
        for t in range(inst.T):
            row = {"scenario": p.id, "stage": t + 1, "stageCost": float(run.stage_costs[t]),
                   "cumulativeCost": float(cum[t]), "status": run.statuses[t], "nodes": run.nodes[t]}
            if timing_columns:
                row["time"] = round(run.times[t], 4)
            sim_rows.append(row)
    wall = time.perf_counter() - start
    method = "condexp" if policy == "condexp" else f"{policy}_ub"
    io.write_csv(out / f"sim_{method}.csv", sim_rows, SIM_COLUMNS)
    est = confidence_interval(totals, 0.95, "upper", method)
    lam_flag = None if policy != "sw" else lam
    est = BoundEstimate(est.mean, est.halfwidth, est.n, est.level, est.side, est.method,
                        est.flags + _flags(eval=scenario_hash(paths), coeffs=chash, lam=lam_flag,
                                           instance=io.file_hash(inst_path), config=config_hash))
    append_result(out, est.row(inst.instance_id, round(wall, 3) if timing_columns else ""))
    record_timing(out, f"simulate_{method}", wall)
    return est


def cmd_report(out: Path):
    """Gap reports for every ``results.csv`` under ``out``."""
    reports = []
    for path in sorted(Path(out).rglob("results.csv")):
        by_inst: dict[str, dict] = {}
        for r in io.read_csv(path):
            est = BoundEstimate(float(r["mean"]), float(r["halfwidth"]), int(r["n"]), float(r["level"]),
                                r["side"], r["method"], tuple(f for f in r["flags"].split(";") if f))
            by_inst.setdefault(r["instance"], {})[r["method"]] = est
        for iid, bounds in sorted(by_inst.items()):
            evals = {f for b in bounds.values() for f in b.flags if f.startswith("eval=")}
            rep = ordering_report(iid, bounds)
            if len(evals) > 1:
                rep.flags.append("violation:evaluation-sets-differ")
            reports.append(rep)
    io.write_json(Path(out) / "gap_report.json", [r.to_json() for r in reports])
    return reports


def format_report(reports) -> str:
    if not reports:
        return "no results found"
    lines = []
    for r in reports:
        lines.append(f"instance {r.instance}")
        for m, b in r.bounds.items():
            lines.append(f"  {m:<8} {b.side:<5} {b.mean:12.2f} +- {b.halfwidth:9.2f}  (n={b.n})")
        closure = r.closure if isinstance(r.closure, str) or r.closure is None else f"{100 * r.closure:.1f}%"
        lines.append(f"  gap closure: {closure}")
        for f in r.flags:
            lines.append(f"  flag: {f}")
    return "\n".join(lines)


def cmd_verify(suite: str, seed: int = 0):
    rep = run_suite(suite, seed)
    return rep


def run_pipeline(cfg: RunConfig, out: Path) -> list:
    """Generate, train, bound and simulate every configured instance, then report."""
    out.mkdir(parents=True, exist_ok=True)
    io.write_json(out / "config.json", asdict(cfg))
    opts = MasterOptions(tol=cfg.tol, max_iter=cfg.max_iter, box=cfg.box)
    ch = cfg.digest()
    for T in cfg.stages:
        d = out / f"T{T}"
        ipath = cmd_gen(T, cfg.products, cfg.rho, cfg.rho_y, cfg.instance_seed, d, cfg.mu_seed)
        log.info("T=%d: training", T)
        cmd_train(ipath, "sw", cfg.sw_basis, cfg.na_vars, cfg.train_scen, cfg.sample_seed, d, opts,
                  timing_columns=cfg.timing_columns)
        cmd_train(ipath, "na", cfg.na_basis, cfg.na_vars, cfg.train_scen, cfg.sample_seed, d, opts,
                  timing_columns=cfg.timing_columns)
        log.info("T=%d: bounds", T)
        cmd_bound(ipath, "pi", None, cfg.eval_scen, cfg.sample_seed, d, cfg.timing_columns, ch)
        cmd_bound(ipath, "sw", d / "coeffs_sw.json", cfg.eval_scen, cfg.sample_seed, d, cfg.timing_columns, ch)
        cmd_bound(ipath, "na", d / "coeffs_na.json", cfg.eval_scen, cfg.sample_seed, d, cfg.timing_columns, ch)
        for pol in cfg.policies:
            if pol == "na" and T > 6:
                log.info("skipping the NA-driven policy for T=%d > 6", T)
                continue
            log.info("T=%d: simulating %s", T, pol)
            cpath = None if pol == "condexp" else d / f"coeffs_{pol}.json"
            cmd_simulate(ipath, pol, cpath, cfg.lam, cfg.eval_scen, cfg.sample_seed, d,
                         cfg.node_limit, cfg.time_limit, cfg.timing_columns, ch)
    return cmd_report(out)


# -- argument parsing ------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lddr", description=__doc__.split("\n")[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, instance=True):
        if instance:
            p.add_argument("--instance", type=Path, required=True, help="instance JSON file")
        p.add_argument("--seed", type=int, default=0, help="sample seed")
        p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
        p.add_argument("--timing-columns", action="store_true",
                       help="also write wall times into the CSV files (breaks byte reproducibility)")

    g = sub.add_parser("gen", help="write an instance file")
    g.add_argument("--T", type=int, required=True)
    g.add_argument("--J", type=int, default=3)
    g.add_argument("--rho", type=float, default=0.6)
    g.add_argument("--rho-y", type=float, default=0.2)
    g.add_argument("--mu-seed", type=int, default=None, help="seed of the demand means (defaults to --seed)")
    g.add_argument("--seed", type=int, default=1, help="instance seed")
    g.add_argument("--out", type=Path, default=Path("out"))

    t = sub.add_parser("train", help="fit decision-rule weights")
    common(t)
    t.add_argument("--dual", choices=["sw", "na"], required=True)
    t.add_argument("--basis", type=int, choices=[1, 2, 3, 4], default=None,
                   help="basis option (default 1 for sw, 3 for na)")
    t.add_argument("--na-vars", choices=["x", "state", "all"], default="x")
    t.add_argument("--train-scen", type=int, default=None)
    t.add_argument("--tol", type=float, default=1e-3)
    t.add_argument("--max-iter", type=int, default=500)
    t.add_argument("--box", type=float, default=1e3)
    t.add_argument("--time-limit", type=float, default=None)
    t.add_argument("--resume", action="store_true", help="continue from the checkpoint in --out")

    b = sub.add_parser("bound", help="estimate a lower bound")
    common(b)
    b.add_argument("--method", choices=["pi", "sw", "na"], required=True)
    b.add_argument("--coeffs", type=Path, default=None, help="defaults to <out>/coeffs_<method>.json")
    b.add_argument("--eval-scen", type=int, default=None)

    s = sub.add_parser("simulate", help="estimate a policy upper bound")
    common(s)
    s.add_argument("--policy", choices=["condexp", "sw", "na"], required=True)
    s.add_argument("--coeffs", type=Path, default=None, help="defaults to <out>/coeffs_<policy>.json")
    s.add_argument("--lambda", dest="lam", type=float, default=0.25)
    s.add_argument("--eval-scen", type=int, default=None)
    s.add_argument("--node-limit", type=int, default=10_000)
    s.add_argument("--time-limit", type=float, default=60.0)
    s.add_argument("--allow-long", action="store_true", help="allow the NA-driven policy for T > 6")

    v = sub.add_parser("verify", help="run a self-check suite")
    v.add_argument("--verify", dest="suite", choices=SUITES, required=True)
    v.add_argument("--seed", type=int, default=0)

    r = sub.add_parser("report", help="gap report of an output directory")
    r.add_argument("--out", type=Path, default=Path("out"))

    p = sub.add_parser("run", help="full pipeline over several instances")
    p.add_argument("--config", type=Path, default=None, help="JSON RunConfig")
    p.add_argument("--T", type=int, nargs="+", default=None)
    p.add_argument("--train-scen", type=int, default=None)
    p.add_argument("--eval-scen", type=int, default=None)
    p.add_argument("--seed", type=int, default=None, help="sample seed")
    p.add_argument("--policy", choices=["condexp", "sw", "na"], nargs="+", default=None)
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--node-limit", type=int, default=None)
    p.add_argument("--time-limit", type=float, default=None)
    p.add_argument("--out", type=Path, default=Path("out"))
    return ap


def args_hash(args) -> str:
    keep = {k: str(v) for k, v in vars(args).items() if k not in ("out", "verbose", "instance", "coeffs")}
    return io.text_hash(json.dumps(keep, sort_keys=True))


def dispatch(args) -> int:
    if args.command == "gen":
        path = cmd_gen(args.T, args.J, args.rho, args.rho_y, args.seed, args.out, args.mu_seed)
        print(path)
        return 0
    if args.command == "train":
        basis = args.basis or (1 if args.dual == "sw" else 3)
        opts = MasterOptions(tol=args.tol, max_iter=args.max_iter, box=args.box, time_limit=args.time_limit)
        res = cmd_train(args.instance, args.dual, basis, args.na_vars, args.train_scen, args.seed, args.out,
                        opts, args.resume, args.timing_columns)
        print(f"{args.dual} value {res.value:.6f} after {res.state.iteration} iterations ({res.status})")
        return 0
    if args.command == "bound":
        coeffs = args.coeffs or (None if args.method == "pi" else args.out / f"coeffs_{args.method}.json")
        est = cmd_bound(args.instance, args.method, coeffs, args.eval_scen, args.seed, args.out,
                        args.timing_columns, args_hash(args))
        print(f"{est.method}: {est.mean:.4f} +- {est.halfwidth:.4f} (n={est.n})")
        return 0
    if args.command == "simulate":
        if args.policy == "na" and not args.allow_long and load_instance(args.instance).T > 6:
            raise ValueError("the NA-driven policy is limited to T <= 6 (use --allow-long)")
        coeffs = args.coeffs or (None if args.policy == "condexp" else args.out / f"coeffs_{args.policy}.json")
        est = cmd_simulate(args.instance, args.policy, coeffs, args.lam, args.eval_scen, args.seed, args.out,
                           args.node_limit, args.time_limit, args.timing_columns, args_hash(args))
        print(f"{est.method}: {est.mean:.4f} +- {est.halfwidth:.4f} (n={est.n})")
        return 0
    if args.command == "verify":
        rep = cmd_verify(args.suite, args.seed)
        for c in rep.checks:
            print(f"{'PASS' if c.passed else 'FAIL'}  {c.name}  {c.detail}")
        print(rep.summary())
        if not rep.passed:
            raise VerificationFailed(rep.summary())
        return 0
    if args.command == "report":
        print(format_report(cmd_report(args.out)))
        return 0
    if args.command == "run":
        cfg = RunConfig.from_json(io.read_json(args.config)) if args.config else RunConfig()
        for name, attr in [("T", "stages"), ("train_scen", "train_scen"), ("eval_scen", "eval_scen"),
                           ("seed", "sample_seed"), ("policy", "policies"), ("lam", "lam"),
                           ("node_limit", "node_limit"), ("time_limit", "time_limit")]:
            val = getattr(args, name)
            if val is not None:
                setattr(cfg, attr, val)
        print(format_report(run_pipeline(cfg, args.out)))
        return 0
    raise ValueError(f"unknown command {args.command}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return dispatch(args)
    except VerificationFailed as exc:
        log.error("verification failed: %s", exc)
        return 2
    except (SolverUnavailable, SolverFailure, MemoryError) as exc:
        log.error("solver or environment error: %s", exc)
        return 3
    except FileNotFoundError as exc:
        log.error("missing input: %s", exc)
        return 1
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return 3
    except ValueError as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
