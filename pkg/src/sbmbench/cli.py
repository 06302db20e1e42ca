"""Command-line entry point.

Subcommands: generate, solve, oracle, bench, fit, convert, replay.
Gaps are given in percent on the command line and converted to
fractions immediately. Every command records a manifest (command,
resolved arguments, seed, version, input digests, timestamp); ``replay``
re-executes a manifest.
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import json
import math
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .engine import SbmParams, default_workers, solve
from .harness import (
    DEFAULT_BOOTSTRAP,
    DEFAULT_GRID_REPLICAS,
    DEFAULT_GRID_STEPS,
    TIMINGS,
    medians_to_rows,
    run_study,
    study_points,
)
from .instances import (
    convert_instance,
    generate_sidon_instance,
    complete_graph,
    king_graph,
    load_instance,
    save_instance,
)
from .oracle import OracleRefused, brute_force_ground_state
from .rng import derive_seed
from .scaling import (
    export_medians,
    fit_rows,
    fits_to_json,
    import_external_medians,
    write_plot_csv,
)

DEFAULT_EPS_PERCENT = (0.75, 1.00, 1.10, 1.25)
SCHEMA_VERSION = 1


class CliError(Exception):
    pass


def _digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _jsonable(x):
    if isinstance(x, float) and not math.isfinite(x):
        return "inf" if x > 0 else ("-inf" if x < 0 else "nan")
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.generic):
        return _jsonable(x.item())
    return x


def make_manifest(command: str, args: argparse.Namespace, argv: Sequence[str], inputs=()) -> dict:
    params = {k: v for k, v in vars(args).items() if k not in ("func",)}
    return {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "argv": list(argv),
        "params": _jsonable(params),
        "seed": params.get("seed"),
        "version": __version__,
        "inputs": {str(p): _digest(p) for p in inputs},
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
    }


def _write_json(doc, path) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(doc), fh, indent=2)
        fh.write("\n")


def _eps_fractions(percent: Sequence[float]) -> list[float]:
    out = []
    for p in percent:
        if p < 0:
            raise CliError(f"negative gap {p}%")
        out.append(p / 100.0)
    return out


def _params_from_args(args) -> SbmParams:
    return SbmParams(
        n_steps=args.steps, n_replicas=args.replicas, seed=args.seed,
        n_workers=args.workers, a0=args.a0, c0=args.c0,
        dt_range=(args.dt_min, args.dt_max), ternary_slope=args.ternary_slope,
        sigma_mode=args.sigma_mode, track_best=args.track_best,
    )


# -- commands -----------------------------------------------------------------

def cmd_generate(args, argv) -> int:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create {out}: {exc}") from None
    if not os.access(out, os.W_OK):
        raise CliError(f"{out} is not writable")

    written = []
    if args.graph == "edges":
        if not args.edges:
            raise CliError("--graph edges needs --edges FILE")
        edges = np.loadtxt(args.edges, dtype=np.int64, comments="#", ndmin=2)[:, :2]
        targets = [(None, edges, Path(args.edges).stem)]
    else:
        if not args.sizes:
            raise CliError(f"--graph {args.graph} needs --sizes")
        targets = []
        for size in args.sizes:
            edges = king_graph(size) if args.graph == "king" else complete_graph(size)
            targets.append((size, edges, f"{args.graph}_L{size}"))
    for size, edges, stem in targets:
        n = int(edges.max()) + 1 if edges.size else 1
        if args.graph == "king":
            n = size * size
        elif args.graph == "complete":
            n = size
        for k in range(args.count):
            name = f"{stem}_i{k:03d}"
            model = generate_sidon_instance(
                edges, derive_seed(args.seed, stem, k), n=n, name=name,
                size_L=size if args.graph == "king" else None,
            )
            path = out / f"{name}.txt"
            save_instance(model, path)
            written.append(str(path))
    man = make_manifest("generate", args, argv, inputs=[args.edges] if args.edges else ())
    man["outputs"] = written
    _write_json(man, out / "manifest.json")
    print(json.dumps({"written": len(written), "out": str(out)}))
    return 0


def cmd_solve(args, argv) -> int:
    model = load_instance(args.instance)
    params = _params_from_args(args)
    outcome = solve(model, params, trace_path=args.trace)
    doc = outcome.to_dict()
    doc["instance"] = model.name or str(args.instance)
    doc["n"] = model.n
    if model.ground_energy is not None:
        doc["ground_energy"] = model.ground_energy
    doc["manifest"] = make_manifest("solve", args, argv, inputs=[args.instance])
    print(json.dumps(_jsonable(doc)))
    return 0


def cmd_oracle(args, argv) -> int:
    model = load_instance(args.instance)
    manifest = make_manifest("oracle", args, argv, inputs=[args.instance])
    e0, spins = brute_force_ground_state(model, n_workers=args.workers)
    save_instance(model.replace(ground_energy=e0), args.instance)
    doc = {
        "instance": model.name or str(args.instance),
        "n": model.n,
        "E0": e0,
        "argmin": spins.astype(int).tolist(),
        "manifest": manifest,
    }
    print(json.dumps(_jsonable(doc)))
    return 0


RECORD_FIELDS = (
    "instance_id", "n", "n_steps", "n_replicas", "eps", "p_success", "t_f_total",
    "t_f_compute", "tte_total", "tte_compute", "ground_energy", "n_runs",
)


def _load_dir(path) -> tuple[dict[int, list], list[Path]]:
    files = sorted(p for p in Path(path).glob("*.txt"))
    if not files:
        raise CliError(f"no instance files (*.txt) in {path}")
    groups: dict[int, list] = {}
    for f in files:
        m = load_instance(f)
        if m.name is None:
            m = m.replace(name=f.stem)
        groups.setdefault(m.n, []).append(m)
    return groups, files


def cmd_bench(args, argv) -> int:
    eps_list = _eps_fractions(args.eps)
    groups, files = _load_dir(args.instances)
    base = SbmParams(
        n_workers=args.workers, a0=args.a0, c0=args.c0,
        dt_range=(args.dt_min, args.dt_max), ternary_slope=args.ternary_slope,
        sigma_mode=args.sigma_mode,
    )
    stamp = _dt.datetime.now().strftime("%Y%m%dT%H%M%S%f")
    out = Path(args.out) / f"bench-{stamp}"
    out.mkdir(parents=True, exist_ok=False)

    def progress(msg):
        if not args.quiet:
            print(msg, file=sys.stderr, flush=True)

    results = run_study(
        groups, (args.grid_steps, args.grid_replicas), args.runs,
        base_params=base, master_seed=args.seed, solver=solve,
        oracle_cap=args.oracle_cap, progress=progress,
    )

    records = []
    for n, res in sorted(results.items()):
        for cell in res.cells:
            for eps in eps_list:
                records.extend(res.records(cell, eps))
    rec_rows = [{k: getattr(r, k) for k in RECORD_FIELDS} for r in records]
    with open(out / "records.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=RECORD_FIELDS)
        w.writeheader()
        for row in rec_rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    _write_json({"schema_version": SCHEMA_VERSION, "records": rec_rows}, out / "records.json")

    points = []
    for eps in eps_list:
        points.extend(study_points(results, eps, args.timing, args.bootstrap, args.seed))
    summary = [p.to_dict() for p in points]
    if summary:
        with open(out / "summary.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(summary[0]))
            w.writeheader()
            for row in summary:
                w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    _write_json({"schema_version": SCHEMA_VERSION, "summary": summary}, out / "summary.json")
    export_medians(medians_to_rows(points), out / "medians.csv")

    man = make_manifest("bench", args, argv, inputs=files)
    _write_json(man, out / "manifest.json")
    print(json.dumps({"out": str(out), "records": len(records), "points": len(points)}))
    return 0


def cmd_fit(args, argv) -> int:
    table = import_external_medians(args.medians)
    if not table:
        raise CliError(f"{args.medians} holds no medians")
    eps_filter = _eps_fractions(args.eps) if args.eps else None
    n_range = tuple(args.range) if args.range else None
    fits = []
    for (solver, eps), rows in sorted(table.items()):
        if args.solver and solver not in args.solver:
            continue
        if eps_filter is not None and not any(math.isclose(eps, e, rel_tol=1e-9) for e in eps_filter):
            continue
        fit = fit_rows(rows, n_range, weighted=args.weighted,
                       n_bootstrap=args.bootstrap, seed=args.seed)
        fits.append((solver, eps, fit))
        if args.plot_dir:
            Path(args.plot_dir).mkdir(parents=True, exist_ok=True)
            write_plot_csv(rows, fit, Path(args.plot_dir) / f"{solver}_eps{eps:g}.csv")
    if not fits:
        raise CliError("no (solver, eps) series matched the filters")
    doc = fits_to_json(fits, manifest=make_manifest("fit", args, argv, inputs=[args.medians]))
    doc = _jsonable(doc)
    if args.out:
        _write_json(doc, args.out)
    print(json.dumps(doc))
    return 0


def cmd_convert(args, argv) -> int:
    model = convert_instance(args.src, args.dst, one_based=args.one_based)
    print(json.dumps({"n": model.n, "couplings": model.n_couplings, "out": str(args.dst)}))
    return 0


def cmd_replay(args, argv) -> int:
    with open(args.manifest) as fh:
        man = json.load(fh)
    stored = man.get("argv")
    if not stored:
        raise CliError(f"{args.manifest} has no argv to replay")
    if stored[0] == "replay":
        raise CliError("refusing to replay a replay")
    return main(stored)


# -- parser -------------------------------------------------------------------

def _add_dynamics(p, with_run=True):
    if with_run:
        p.add_argument("--steps", type=int, default=1000, help="integration steps N_s")
        p.add_argument("--replicas", type=int, default=64, help="replicas N_r")
        p.add_argument("--track-best", action="store_true",
                       help="keep the best readout along each trajectory")
    p.add_argument("--workers", type=int, default=default_workers(),
                   help="worker threads (default $SBMBENCH_WORKERS or 1)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dt-min", type=float, default=0.25)
    p.add_argument("--dt-max", type=float, default=1.5)
    p.add_argument("--c0", type=float, default=None, help="override the automatic coupling scale")
    p.add_argument("--a0", type=float, default=1.0)
    p.add_argument("--ternary-slope", type=float, default=0.7)
    p.add_argument("--sigma-mode", choices=("all", "nonzero"), default="all")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sbmbench", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write Sidon-28 instances")
    p.add_argument("--graph", choices=("king", "complete", "edges"), default="king")
    p.add_argument("--sizes", type=int, nargs="+",
                   help="king side lengths L or complete-graph sizes N")
    p.add_argument("--edges", help="edge list file for --graph edges")
    p.add_argument("--count", type=int, default=125, help="instances per size")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("solve", help="run the solver once, JSON to stdout")
    p.add_argument("instance")
    _add_dynamics(p)
    p.add_argument("--trace", help="write per-step readout energies to this CSV")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("oracle", help="exhaustive E0, written into the instance header")
    p.add_argument("instance")
    p.add_argument("--workers", type=int, default=default_workers())
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("bench", help="time-to-epsilon benchmark with grid search")
    p.add_argument("instances", help="directory of instance files")
    p.add_argument("--eps", type=float, nargs="+", default=list(DEFAULT_EPS_PERCENT),
                   help="optimality gaps in percent")
    p.add_argument("--runs", type=int, default=100)
    p.add_argument("--grid-steps", type=int, nargs="+", default=list(DEFAULT_GRID_STEPS))
    p.add_argument("--grid-replicas", type=int, nargs="+", default=list(DEFAULT_GRID_REPLICAS))
    p.add_argument("--timing", choices=TIMINGS, default="total")
    p.add_argument("--bootstrap", type=int, default=DEFAULT_BOOTSTRAP)
    p.add_argument("--oracle-cap", type=int, default=20,
                   help="use exhaustive E0 up to this many spins; larger use best found")
    p.add_argument("--out", required=True)
    p.add_argument("--quiet", action="store_true")
    _add_dynamics(p, with_run=False)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("fit", help="power-law fits of a median table")
    p.add_argument("medians", help="CSV with columns solver,N,eps,median,std")
    p.add_argument("--range", type=float, nargs=2, metavar=("NMIN", "NMAX"))
    p.add_argument("--eps", type=float, nargs="+", help="gaps in percent (default: all)")
    p.add_argument("--solver", nargs="+", help="restrict to these solvers")
    p.add_argument("--weighted", action="store_true")
    p.add_argument("--bootstrap", type=int, default=0,
                   help="parametric bootstrap samples for the exponent spread")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="also write the JSON here")
    p.add_argument("--plot-dir", help="write plot-ready CSVs here")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("convert", help="normalize a triplet file (e.g. 1-based)")
    p.add_argument("src")
    p.add_argument("dst")
    p.add_argument("--zero-based", dest="one_based", action="store_false")
    p.set_defaults(func=cmd_convert, one_based=True)

    p = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    p.add_argument("manifest")
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, argv)
    except (CliError, OracleRefused, OSError, ValueError, FloatingPointError) as exc:
        print(f"sbmbench {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
