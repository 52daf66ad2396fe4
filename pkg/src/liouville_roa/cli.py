"""
Command-line interface.

Subcommands::

    relax     assemble relaxations and write them as SDPA files
    solve     solve an order sweep and write certificates, volume reports and objectives
    levelset  tabulate v(0, x) and w(x) of a certificate on a grid (CSV)
    validate  check a certificate against sampled admissible points and its dual constraints

Exit codes: 0 success, 2 validation violations, 3 solver failure, 4 bad input.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import csv
import datetime as _dt
import hashlib
import json
import os
import sys
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .conic import LimitExceeded, SolverOptions, export_sdpa
from .poly import PolyError
from .relaxation import (DEFAULT_ACCEPT, Certificate, OrderTooLow, assemble_for_mode,
                         minimal_order, solve_relaxation, verify_sos)
from .roa import (GRID, MONTE_CARLO, OracleUndefined, OuterApprox, certificate_violations,
                  levelset_grid, levelset_table, oracle_for, sample_admissible_points,
                  volume_error)
from .semialg import (FIXED, FREE, InvalidSpec, ProblemSpec, ScalingMap, dumps_spec, loads_spec,
                      preprocess, validate)

EXIT_OK = 0
EXIT_VIOLATIONS = 2
EXIT_SOLVER = 3
EXIT_INPUT = 4

BUILTIN = ("cubic", "van_der_pol", "double_integrator", "brockett")


class InputError(Exception):
    pass


@dataclass
class RunConfig:
    problem: str
    orders: list[int]
    mode: str | None = None
    tol_feas: float = 1e-8
    tol_gap: float = 1e-8
    max_iter: int = 200
    seed: int = 0
    samples: int = 100000
    grid_points: int = 2000
    estimator: str | None = None
    out: str = "out"
    export_sdpa: bool = False
    verify_sos: bool = False
    oracle: str | None = None
    accept_accuracy: float = DEFAULT_ACCEPT
    jobs: int = 1
    extra: dict = field(default_factory=dict)

    def solver_options(self) -> SolverOptions:
        return SolverOptions(tol_feas=self.tol_feas, tol_gap=self.tol_gap, max_iter=self.max_iter)


# ---------------------------------------------------------------------------
# helpers

def load_problem(ref: str) -> tuple[ProblemSpec, str]:
    """Load a problem file, or a built-in problem by name; returns the spec and its text."""
    path = Path(ref)
    if path.is_file():
        text = path.read_text(encoding="utf-8")
    else:
        key = ref.replace("-", "_")
        if key not in BUILTIN:
            raise InputError(f"no problem file {ref!r} (built-in problems: {', '.join(BUILTIN)})")
        text = resources.files("liouville_roa").joinpath("problems", f"{key}.json").read_text(
            encoding="utf-8")
    try:
        spec = loads_spec(text)
    except (InvalidSpec, PolyError) as exc:
        raise InputError(f"invalid problem: {exc}") from None
    diags = validate(spec)
    if diags:
        raise InputError("invalid problem: " + "; ".join(diags))
    return spec, text


def problem_hash(spec: ProblemSpec) -> str:
    return hashlib.sha256(dumps_spec(spec).encode("utf-8")).hexdigest()


def parse_orders(text: str) -> list[int]:
    """``"2,4"``, ``"2:5"`` (inclusive) or a mix such as ``"2,4:6"``."""
    out = set()
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if ":" in part:
            a, b = part.split(":", 1)
            out.update(range(int(a), int(b) + 1))
        else:
            out.add(int(part))
    if not out:
        raise InputError("no relaxation orders given")
    return sorted(out)


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


class SidecarLog:
    """Timestamps and wall times; kept apart from the reproducible artifacts."""

    def __init__(self, path: Path):
        self.path = path
        path.parent.mkdir(parents=True, exist_ok=True)

    def __call__(self, message: str):
        stamp = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(f"{stamp} {message}\n")


def _metadata(spec, smap: ScalingMap, k, options: SolverOptions | None, seed, kind: str) -> dict:
    return {
        "artifact": kind,
        "version": __version__,
        "problem_hash": problem_hash(spec),
        "problem": json.loads(dumps_spec(spec)),
        "scaling": smap.to_dict(),
        "order": k,
        "solver_options": options.to_dict() if options else None,
        "seed": seed,
    }


def _check_orders(spec: ProblemSpec, orders: list[int]):
    kmin = minimal_order(preprocess(spec)[0])
    low = [k for k in orders if k < kmin]
    if low:
        raise InputError(f"relaxation order {low[0]} is too low; the minimal admissible "
                         f"order is {kmin}")


def load_certificate(path) -> tuple[Certificate, dict]:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        cert = Certificate.from_dict(data["certificate"])
    except (OSError, ValueError, KeyError) as exc:
        raise InputError(f"cannot read certificate {path}: {exc}") from None
    return cert, data


# ---------------------------------------------------------------------------
# commands

def cmd_relax(cfg: RunConfig, log=print) -> int:
    spec, _ = load_problem(cfg.problem)
    if cfg.mode:
        spec = spec.with_mode(cfg.mode)
    _check_orders(spec, cfg.orders)
    scaled, _ = preprocess(spec)
    out = Path(cfg.out)
    stem = (spec.name or "problem").replace("-", "_")
    for k in cfg.orders:
        problem, _ = assemble_for_mode(scaled, k)
        path = out / f"{stem}_{spec.mode}_k{k}.dat-s"
        path.parent.mkdir(parents=True, exist_ok=True)
        export_sdpa(problem, path)
        log(f"order {k}: {problem.num_vars} variables, {problem.num_eq} equalities, "
            f"blocks {problem.block_sizes()} -> {path}")
    return EXIT_OK


def _solve_order(spec: ProblemSpec, k: int, cfg: RunConfig) -> dict:
    scaled, smap = preprocess(spec)
    options = cfg.solver_options()
    start = time.perf_counter()
    try:
        res = solve_relaxation(scaled, k, options, accept_accuracy=cfg.accept_accuracy)
    except LimitExceeded as exc:
        return {"k": k, "error": str(exc), "wall": time.perf_counter() - start}
    wall = time.perf_counter() - start
    sol = res.solution
    row = {"k": k, "status": sol.status, "primal_objective": sol.primal_objective,
           "dual_objective": sol.dual_objective, "gap": sol.gap, "iterations": sol.iterations,
           "accuracy": sol.accuracy, "info": sol.info, "wall": wall,
           "certificate": res.certificate.to_dict() if res.certificate else None}
    if cfg.export_sdpa:
        row["problem"] = res.problem
    if cfg.verify_sos and res.certificate is not None:
        row["sos"] = verify_sos(res.certificate, scaled, options=options, raise_on_failure=False)
    return row


def cmd_solve(cfg: RunConfig, log=print) -> int:
    spec, _ = load_problem(cfg.problem)
    if cfg.mode:
        spec = spec.with_mode(cfg.mode)
    _check_orders(spec, cfg.orders)
    scaled, smap = preprocess(spec)
    options = cfg.solver_options()
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    side = SidecarLog(out / "run.log")
    side(f"solve {cfg.problem} orders {cfg.orders} mode {spec.mode} version {__version__}")

    if cfg.jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(cfg.jobs) as pool:
            rows = list(pool.map(_solve_order, [spec] * len(cfg.orders), cfg.orders,
                                 [cfg] * len(cfg.orders)))
    else:
        rows = [_solve_order(spec, k, cfg) for k in cfg.orders]

    # oracle for volume reports
    oracle = None
    oracle_name = cfg.oracle if cfg.oracle is not None else spec.name
    if oracle_name != "none":
        try:
            oracle = oracle_for(oracle_name, spec)
        except OracleUndefined as exc:
            log(f"no volume report: {exc}")
    box = spec.X.bounding_box()
    estimator = cfg.estimator or (GRID if spec.n == 1 else MONTE_CARLO)
    N = cfg.grid_points if estimator == GRID else cfg.samples
    points = truth = None

    failed = False
    table = []
    certs = []
    for row in rows:
        k = row["k"]
        side(f"order {k}: wall {row['wall']:.3f} s")
        if "error" in row:
            log(f"order {k}: {row['error']}")
            failed = True
            table.append({"k": k, "status": "LimitExceeded"})
            continue
        meta = _metadata(spec, smap, k, options, cfg.seed, "certificate")
        entry = {key: row[key] for key in ("k", "status", "primal_objective", "dual_objective",
                                          "gap", "iterations", "accuracy")}
        entry["certificate_recovered"] = row["certificate"] is not None
        table.append(entry)
        if "problem" in row:
            export_sdpa(row["problem"], out / f"relaxation_k{k}.dat-s")
        if row["certificate"] is None:
            failed = True
            log(f"order {k}: solver status {row['status']} ({row['info']}); no certificate")
            continue
        cert = Certificate.from_dict(row["certificate"])
        certs.append(cert)
        meta["certificate"] = row["certificate"]
        meta["solver"] = {"status": row["status"], "iterations": row["iterations"],
                          "accuracy": row["accuracy"], "info": row["info"]}
        if "sos" in row:
            meta["sos_verification"] = row["sos"]
        _write(out / f"certificate_k{k}.json", _dump(meta))
        if oracle is not None:
            approx = OuterApprox((cert,), smap)
            if points is None:
                from .roa import sample_box
                points = sample_box(box, N, cfg.seed, estimator)
                truth = np.asarray(oracle(points), dtype=bool)
            rep = volume_error(approx, oracle, box, N, cfg.seed, estimator, k, points, truth)
            vmeta = _metadata(spec, smap, k, options, cfg.seed, "volume-report")
            vmeta["report"] = rep.to_dict()
            _write(out / f"volume_k{k}.json", _dump(vmeta))
            entry["relative_volume_error"] = rep.relative_error
        log(f"order {k}: status {row['status']}  p* {row['primal_objective']:.8g}  "
            f"d* {row['dual_objective']:.8g}  iterations {row['iterations']}  "
            f"wall {row['wall']:.2f} s"
            + (f"  volume error {entry['relative_volume_error']:.4f}"
               if "relative_volume_error" in entry else ""))
    if oracle is not None and len(certs) > 1:
        running = OuterApprox(tuple(certs), smap, "running-min")
        for cert in certs:
            rep = volume_error(running, oracle, box, N, cfg.seed, estimator, cert.k, points, truth)
            next(e for e in table if e["k"] == cert.k)["running_min_volume_error"] = \
                rep.relative_error
    ometa = _metadata(spec, smap, None, options, cfg.seed, "objective-table")
    ometa["orders"] = table
    _write(out / "objectives.json", _dump(ometa))
    side("done")
    return EXIT_SOLVER if failed else EXIT_OK


def cmd_levelset(cfg: RunConfig, certificate: str, points: int, out_path: str, log=print) -> int:
    spec, _ = load_problem(cfg.problem)
    cert, data = load_certificate(certificate)
    smap = ScalingMap.from_dict(data["scaling"]) if "scaling" in data else preprocess(spec)[1]
    grid = levelset_grid(spec.X.bounding_box(), points)
    table = levelset_table(cert, smap, grid)
    header = list(spec.state_variables) + ["v0", "w"]
    path = Path(out_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for row in table:
            wr.writerow([repr(float(v)) for v in row])
    log(f"{table.shape[0]} grid points -> {path}")
    return EXIT_OK


def cmd_validate(cfg: RunConfig, certificates: list[str], log=print) -> int:
    spec, _ = load_problem(cfg.problem)
    certs = []
    smap = None
    for path in certificates:
        cert, data = load_certificate(path)
        certs.append(cert)
        if "scaling" in data:
            smap = ScalingMap.from_dict(data["scaling"])
    mode = cfg.mode or certs[0].mode
    spec = spec.with_mode(mode)
    scaled, smap0 = preprocess(spec)
    smap = smap or smap0
    traj = sample_admissible_points(spec, cfg.samples, cfg.seed)
    x0 = traj.initial_points
    approx = OuterApprox(tuple(certs), smap)
    report = {"samples": len(traj), "seed": cfg.seed, "mode": mode, "orders": []}
    bad = False
    for cert in approx.certificates:
        slack = 1e-6 * max(1.0, cert.coefficient_norm())
        vals = approx.values(x0)[:, approx.orders.index(cert.k)]
        outside = int(np.sum(vals < -slack))
        dual = certificate_violations(cert, scaled, seed=cfg.seed)
        ok = outside == 0 and all(dual["passed"].values())
        bad |= not ok
        report["orders"].append({"k": cert.k, "points_outside": outside,
                                 "min_v0": float(vals.min()) if vals.size else None,
                                 "slack": slack, "dual": dual, "passed": ok})
        log(f"order {cert.k}: {outside} of {len(traj)} admissible points outside; dual checks "
            + ", ".join(f"{key} {'ok' if v else 'VIOLATED'}" for key, v in dual["passed"].items()))
    meta = _metadata(spec, smap, None, None, cfg.seed, "validation-report")
    meta["report"] = report
    _write(Path(cfg.out) / "validation.json", _dump(meta))
    return EXIT_VIOLATIONS if bad else EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing

def _common(p: argparse.ArgumentParser, orders: bool = True):
    p.add_argument("--problem", required=True,
                   help="problem JSON file or built-in name (" + ", ".join(BUILTIN) + ")")
    if orders:
        p.add_argument("--orders", required=True, help="orders, e.g. 2,4 or 2:5")
    p.add_argument("--mode", choices=(FIXED, FREE), default=None)
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="liouville-roa", description=__doc__.split("\n")[1])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("relax", help="write relaxations as SDPA files")
    _common(p)

    p = sub.add_parser("solve", help="solve an order sweep")
    _common(p)
    p.add_argument("--tol-feas", type=float, default=1e-8)
    p.add_argument("--tol-gap", type=float, default=1e-8)
    p.add_argument("--max-iter", type=int, default=200)
    p.add_argument("--samples", type=int, default=100000, help="Monte Carlo sample count")
    p.add_argument("--grid-points", type=int, default=2000, help="grid points per axis")
    p.add_argument("--estimator", choices=(GRID, MONTE_CARLO), default=None)
    p.add_argument("--oracle", default=None,
                   help="cubic, double-integrator, brockett, van-der-pol or none "
                        "(default: the problem name)")
    p.add_argument("--export-sdpa", action="store_true")
    p.add_argument("--verify-sos", action="store_true")
    p.add_argument("--accept-accuracy", type=float, default=DEFAULT_ACCEPT,
                   help="accept an early-stopped solve whose residuals and gap are below this")
    p.add_argument("--jobs", type=int, default=1, help="orders solved in parallel")

    p = sub.add_parser("levelset", help="tabulate v(0,x) and w(x) on a grid")
    _common(p, orders=False)
    p.add_argument("--certificate", required=True)
    p.add_argument("--points", type=int, default=201, help="grid points per axis")
    p.add_argument("--csv", default=None, help="output CSV (default OUT/levelset.csv)")

    p = sub.add_parser("validate", help="check certificates against sampled trajectories")
    _common(p, orders=False)
    p.add_argument("--certificate", required=True, action="append")
    p.add_argument("--samples", type=int, default=1000)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code not in (0, None) else EXIT_OK
    try:
        orders = parse_orders(args.orders) if getattr(args, "orders", None) else []
        cfg = RunConfig(problem=args.problem, orders=orders, mode=args.mode, seed=args.seed,
                        out=args.out)
        if args.command == "relax":
            return cmd_relax(cfg)
        if args.command == "solve":
            cfg.tol_feas, cfg.tol_gap, cfg.max_iter = args.tol_feas, args.tol_gap, args.max_iter
            cfg.samples, cfg.grid_points, cfg.estimator = (args.samples, args.grid_points,
                                                           args.estimator)
            cfg.oracle, cfg.export_sdpa, cfg.verify_sos = (args.oracle, args.export_sdpa,
                                                           args.verify_sos)
            cfg.accept_accuracy, cfg.jobs = args.accept_accuracy, args.jobs
            return cmd_solve(cfg)
        if args.command == "levelset":
            csv_path = args.csv or os.path.join(args.out, "levelset.csv")
            return cmd_levelset(cfg, args.certificate, args.points, csv_path)
        if args.command == "validate":
            cfg.samples = args.samples
            return cmd_validate(cfg, args.certificate)
    except (InputError, OrderTooLow, InvalidSpec, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
