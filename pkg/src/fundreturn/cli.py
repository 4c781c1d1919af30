"""Command-line interface: ``fundreturn {simulate,return,verify,report}``.

Exit codes: 0 success, 1 validation error, 2 test failure, 3 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from .funds import FundPaths
from .market import ValidationError
from .returns import (average_return, average_return_drift_flows, deterministic_average_return,
                      discrete_average_return, discrete_snapshots, return_series)
from .scenario import Scenario, parse_scenario, simulate
from .verify import SUITES, _fsum_mean_se, run_suite

EXIT_OK, EXIT_VALIDATION, EXIT_FAILED, EXIT_IO = 0, 1, 2, 3
MODES = ("continuous", "drift-only", "discrete", "deterministic")


class IOFailure(Exception):
    pass


def _fmt(x) -> str:
    return format(float(x), ".17g")


def _atomic_write(path: Path, data: bytes) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except OSError as exc:
        raise IOFailure(f"cannot write {path}: {exc}") from exc


class Emitter:
    """Collects output files; the manifest is written last."""

    def __init__(self, out: Path, scenario: Scenario):
        self.out = out
        self.scenario = scenario
        self.files: list[dict] = []

    def write(self, rel: str, data: bytes) -> None:
        _atomic_write(self.out / rel, data)
        self.files.append({"path": rel, "size": len(data), "sha256": hashlib.sha256(data).hexdigest()})

    def csv(self, rel: str, header: list[str], rows) -> None:
        buf = io.StringIO()
        buf.write(f"# scenario_digest={self.scenario.digest}\n")
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(header)
        wr.writerows(rows)
        self.write(rel, buf.getvalue().encode())

    def json(self, rel: str, obj) -> None:
        obj = {"scenario_digest": self.scenario.digest, **obj}
        self.write(rel, (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode())

    def manifest(self, **extra) -> None:
        body = {"scenario_digest": self.scenario.digest, "seed": self.scenario.seed,
                "files": self.files, **extra}
        _atomic_write(self.out / "manifest.json", (json.dumps(body, indent=2, sort_keys=True) + "\n").encode())


def _load(args) -> Scenario:
    sc = parse_scenario(args.scenario)
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["rng"] = {"seed": args.seed}
    if getattr(args, "steps", None) is not None:
        changes["grid"] = {"steps": args.steps}
    if getattr(args, "paths", None) is not None and args.command in ("simulate", "return"):
        changes["run"] = {"paths": args.paths}
    return sc.with_changes(**changes) if changes else sc


def trajectory_header(sc: Scenario) -> list[str]:
    N, n = sc.market.N, sc.controls.n
    cols = ["time"] + [f"c_{j + 1}" for j in range(N)]
    for i in range(n):
        cols += [f"w_{i + 1}", f"k_{i + 1}", f"A_{i + 1}"]
    return cols + ["A", "D", "R", "rbar"]


def trajectory_rows(sc: Scenario, funds: FundPaths, p: int, R: np.ndarray):
    times = funds.grid.nodes
    Ai, A, D = funds.A_i[p], funds.A[p], funds.D[p].sum(axis=-1)
    for j, t in enumerate(times):
        row = [t, *funds.prices[p, j]]
        for i in range(funds.n):
            row += [funds.w[p, j, i], funds.k[p, j, i], Ai[j, i]]
        row += [A[j], D[j], R[j], np.expm1(R[j])]
        yield [_fmt(v) for v in row]


def load_trajectories(sc: Scenario, directory: Path) -> FundPaths:
    """Rebuild fund paths from stored trajectory CSVs.

    Per-fund net flows are not stored, so ``D`` is NaN in the result.
    """
    files = sorted(Path(directory).glob("path_*.csv"))
    if not files:
        raise ValidationError(f"no trajectory files in {directory}")
    header = trajectory_header(sc)
    N, n = sc.market.N, sc.controls.n
    data = []
    for f in files:
        lines = f.read_text().splitlines()
        if not lines or lines[0] != f"# scenario_digest={sc.digest}":
            raise ValidationError(f"{f}: scenario digest does not match the given scenario")
        rows = list(csv.reader(lines[1:]))
        if rows[0] != header:
            raise ValidationError(f"{f}: unexpected columns")
        data.append(np.array(rows[1:], dtype=float))
    arr = np.stack(data)
    grid = sc.grid
    if arr.shape[1] != grid.steps + 1:
        raise ValidationError("stored trajectories are not on the scenario grid")
    prices = arr[..., 1 : 1 + N]
    fund_cols = arr[..., 1 + N : 1 + N + 3 * n].reshape(arr.shape[0], arr.shape[1], n, 3)
    w, k = fund_cols[..., 0], fund_cols[..., 1]
    pi = sc.controls.weights.at(grid.nodes)
    u = pi * (k * w)[..., None] / prices[..., None, :]
    vol = sc.controls.flow_vol.at(grid.left_nodes) / w[:, :-1]
    M = arr.shape[0]
    return FundPaths(grid, prices, u, w, k, np.full_like(w, np.nan), vol,
                     np.ones(M, bool), np.full(M, -1), drift_only=sc.controls.drift_only_flows)


def cmd_simulate(args) -> int:
    sc = _load(args)
    assets, funds = simulate(sc, threads=args.threads)
    out = Path(args.out)
    em = Emitter(out, sc)
    nodes = [sc.grid.node_index(x, snap=args.snap) for x in sc.checkpoints]
    header = trajectory_header(sc)
    summary = []
    for p in range(funds.M):
        ok = bool(funds.valid[p])
        one = funds.select([p])
        R = return_series(one).R[0] if ok else np.full(sc.grid.steps + 1, np.nan)
        if not args.summary_only:
            em.csv(f"trajectories/path_{p:05d}.csv", header, trajectory_rows(sc, funds, p, R))
        summary.append([str(p), str(int(ok)), str(int(funds.first_invalid[p]))]
                       + [_fmt(np.expm1(R[j])) for j in nodes])
    em.csv("summary.csv", ["path", "valid", "first_invalid"] + [f"rbar_{x:g}" for x in sc.checkpoints], summary)
    em.manifest(command="simulate", paths=funds.M, invalid_paths=funds.invalid_count)
    print(f"simulated {funds.M} path(s), {funds.invalid_count} invalid; wrote {out}")
    for d in funds.diagnostics:
        print(d, file=sys.stderr)
    if args.strict and funds.invalid_count:
        return EXIT_FAILED
    return EXIT_OK


def compute_returns(sc: Scenario, funds: FundPaths, s: int, t: int, mode: str) -> np.ndarray:
    if mode == "continuous":
        return average_return(funds, s, t)
    if mode == "drift-only":
        return average_return_drift_flows(funds, s, t)
    if mode == "discrete":
        if s == t:
            return np.zeros(funds.M)
        return discrete_average_return(*discrete_snapshots(funds, s, t))
    if mode == "deterministic":
        return deterministic_average_return(funds.k, funds.w, s, t)
    raise ValidationError(f"unknown mode {mode!r}")


def cmd_return(args) -> int:
    sc = _load(args)
    if args.trajectories:
        funds = load_trajectories(sc, Path(args.trajectories))
    else:
        _, funds = simulate(sc, threads=args.threads)
    invalid = funds.invalid_count
    funds = funds.select(funds.valid)
    grid = sc.grid
    s = grid.node_index(0.0 if args.from_ is None else args.from_, snap=args.snap)
    t = grid.node_index(grid.horizon if args.to is None else args.to, snap=args.snap)
    if s > t:
        raise ValidationError("--from must not exceed --to")
    r = compute_returns(sc, funds, s, t, args.mode)
    mean, se = _fsum_mean_se(r) if r.size else (float("nan"), float("nan"))
    result = {"mode": args.mode, "from": float(grid.nodes[s]), "to": float(grid.nodes[t]),
              "paths": int(r.size), "invalid_paths": invalid, "mean": mean, "se": se}
    if args.out:
        em = Emitter(Path(args.out), sc)
        em.csv("return_summary.csv", ["path", "rbar"], ([str(i), _fmt(v)] for i, v in enumerate(r)))
        em.json("return.json", result)
        em.manifest(command="return")
    print(json.dumps({"scenario_digest": sc.digest, **result}, sort_keys=True))
    return EXIT_OK


def cmd_verify(args) -> int:
    sc = _load(args)
    names = list(SUITES) if args.suite == "all" else [args.suite]
    reports = []
    for name in names:
        rep = run_suite(sc, name, threads=args.threads, paths=args.paths)
        reports.append(rep)
        print(rep.line() + (f": {rep.error}" if rep.error else ""))
    if args.out:
        em = Emitter(Path(args.out), sc)
        em.json("reports.json", {"reports": [r.to_dict() for r in reports]})
        em.json("statistics.json", {"reports": [r.to_dict(timing=False) for r in reports]})
        em.manifest(command="verify", suite=args.suite)
    if any(r.error for r in reports):
        return EXIT_VALIDATION
    return EXIT_OK if all(r.passed for r in reports) else EXIT_FAILED


def _summary_value(rep: dict) -> str:
    st = rep.get("statistics", {})
    for key in ("errors", "max_residual", "flow", "order"):
        if key in st:
            v = st[key]
            if isinstance(v, dict):
                v = {k: x[-1] for k, x in v.items()}
                return ", ".join(f"{k}={x:.3g}" for k, x in v.items())
            if isinstance(v, list):
                return f"final={v[-1]:.3g}"
            return f"{key}={v:.3g}" if isinstance(v, float) else f"{key}={v}"
    if "checkpoints" in st:
        return "max|z|=" + f"{max(abs(c['z']) for c in st['checkpoints']):.2f}"
    if "pairs" in st:
        return "min increase=" + f"{min(p['mean_increase'] for p in st['pairs']):.3g}"
    return rep.get("error") or ""


def cmd_report(args) -> int:
    path = Path(args.out) / "reports.json"
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise IOFailure(f"cannot read {path}: {exc}") from exc
    rows = [("test", "status", "paths", "invalid", "seconds", "summary")]
    for r in doc["reports"]:
        status = "PASS" if r["pass"] else ("ERROR" if r.get("error") else "FAIL")
        rows.append((r["name"], status, str(r["paths"]), str(r["invalid_paths"]),
                     f"{r.get('wall_time', 0.0):.2f}", _summary_value(r)))
    widths = [max(len(row[i]) for row in rows) for i in range(len(rows[0]))]
    print(f"scenario {doc['scenario_digest'][:16]}")
    for row in rows:
        print("  ".join(cell.ljust(wd) for cell, wd in zip(row, widths)).rstrip())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fundreturn", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, paths=True):
        p.add_argument("--scenario", required=True, metavar="FILE")
        p.add_argument("--seed", type=int, metavar="U64")
        p.add_argument("--steps", type=int, metavar="K")
        if paths:
            p.add_argument("--paths", type=int, metavar="M")
        p.add_argument("--threads", type=int, default=1, metavar="K")

    p = sub.add_parser("simulate", help="simulate paths and write trajectories")
    common(p)
    p.add_argument("--out", required=True, metavar="DIR")
    p.add_argument("--strict", action="store_true", help="exit 2 if any path is invalid")
    p.add_argument("--snap", action="store_true", help="snap checkpoints to the nearest node")
    p.add_argument("--summary-only", action="store_true", help="skip per-path trajectory files")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("return", help="average return over [from, to]")
    common(p)
    p.add_argument("--from", dest="from_", type=float, metavar="S")
    p.add_argument("--to", type=float, metavar="T")
    p.add_argument("--mode", choices=MODES, default="continuous")
    p.add_argument("--snap", action="store_true")
    p.add_argument("--trajectories", metavar="DIR", help="use stored trajectory CSVs")
    p.add_argument("--out", metavar="DIR")
    p.set_defaults(func=cmd_return)

    p = sub.add_parser("verify", help="run verification suites")
    common(p)
    p.add_argument("--suite", default="all", choices=["all", *SUITES, "property2"])
    p.add_argument("--out", metavar="DIR")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("report", help="print stored verification reports")
    p.add_argument("--out", required=True, metavar="DIR")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "threads", 1) < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (IOFailure, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
