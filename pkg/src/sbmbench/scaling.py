"""Power-law fits of median TTeps against problem size.

Fits are ordinary least squares of ``log10(TTeps)`` on ``log10(N)``;
the slope is the scaling exponent ``alpha``. Infinite medians are
excluded from a fit and counted; a fit where more than 20% of the
in-range points were infinite is flagged unreliable.
"""
from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import asdict, dataclass
from typing import Iterable, Optional, Sequence, Union

import numpy as np

UNRELIABLE_FRACTION = 0.2
MEDIAN_COLUMNS = ("solver", "N", "eps", "median", "std")

PathLike = Union[str, os.PathLike]


class MedianTableError(ValueError):
    pass


@dataclass(frozen=True)
class MedianRow:
    solver: str
    n: int
    eps: float
    median: float
    std: float


@dataclass(frozen=True)
class PowerLawFit:
    alpha: float
    log_intercept: float
    alpha_std: float
    rmse_log: float
    n_range: tuple[float, float]
    n_points: int
    n_infinite: int = 0
    unreliable: bool = False
    weighted: bool = False
    alpha_std_bootstrap: Optional[float] = None

    def predict(self, n) -> np.ndarray:
        return 10.0 ** (self.log_intercept + self.alpha * np.log10(np.asarray(n, dtype=float)))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["n_range"] = list(self.n_range)
        return d


def _ols(x: np.ndarray, y: np.ndarray, w: Optional[np.ndarray] = None):
    if w is None:
        w = np.ones_like(x)
    W = w.sum()
    xm = np.dot(w, x) / W
    ym = np.dot(w, y) / W
    dx, dy = x - xm, y - ym
    sxx = np.dot(w, dx * dx)
    slope = np.dot(w, dx * dy) / sxx
    intercept = ym - slope * xm
    resid = y - (intercept + slope * x)
    return slope, intercept, resid, sxx


def fit_power_law(
    points: Iterable[tuple[float, float]],
    n_range: Optional[tuple[float, float]] = None,
    *,
    stds: Optional[Sequence[float]] = None,
    weighted: bool = False,
    n_bootstrap: int = 0,
    seed: int = 0,
) -> PowerLawFit:
    """Fit ``median = 10**b * N**alpha`` to ``(N, median)`` points.

    ``n_range`` keeps points with ``N_min <= N <= N_max``. With
    ``weighted`` the bootstrap ``stds`` become inverse-variance weights in
    log space. ``n_bootstrap > 0`` additionally propagates the stds into
    a parametric bootstrap estimate of the exponent's spread.
    """
    pts = [(float(n), float(m)) for n, m in points]
    sd = None if stds is None else [float(s) for s in stds]
    if sd is not None and len(sd) != len(pts):
        raise ValueError("stds must match points")
    keep = [
        k for k, (n, _) in enumerate(pts)
        if n_range is None or n_range[0] <= n <= n_range[1]
    ]
    finite = [k for k in keep if math.isfinite(pts[k][1]) and pts[k][1] > 0 and pts[k][0] > 0]
    n_inf = sum(1 for k in keep if math.isinf(pts[k][1]))
    if len(finite) < 2:
        raise ValueError(f"need at least 2 finite points in range, got {len(finite)}")
    x = np.log10([pts[k][0] for k in finite])
    y = np.log10([pts[k][1] for k in finite])
    if np.ptp(x) == 0:
        raise ValueError("all points share the same N")

    sig = None
    if sd is not None:
        med = np.array([pts[k][1] for k in finite])
        sig = np.array([sd[k] for k in finite]) / (med * math.log(10))
    w = None
    if weighted:
        if sig is None:
            raise ValueError("weighted fit needs stds")
        if np.any(~np.isfinite(sig)) or np.any(sig <= 0):
            raise ValueError("weighted fit needs finite positive stds")
        w = 1.0 / sig ** 2

    slope, intercept, resid, sxx = _ols(x, y, w)
    m = len(x)
    rmse = float(math.sqrt(np.mean(resid ** 2)))
    if m > 2:
        if w is None:
            alpha_std = math.sqrt(np.dot(resid, resid) / (m - 2) / sxx)
        else:
            alpha_std = math.sqrt(np.dot(w, resid ** 2) / (m - 2) / sxx)
    else:
        alpha_std = 0.0

    boot = None
    if n_bootstrap > 0:
        if sig is None:
            raise ValueError("bootstrap exponent spread needs stds")
        s = np.where(np.isfinite(sig), sig, 0.0)
        gen = np.random.default_rng(seed)
        ys = y + gen.standard_normal((n_bootstrap, m)) * s
        xm = x.mean()
        slopes = (ys - ys.mean(axis=1, keepdims=True)) @ (x - xm) / np.dot(x - xm, x - xm)
        boot = float(np.std(slopes))

    ns = [pts[k][0] for k in keep]
    return PowerLawFit(
        alpha=float(slope), log_intercept=float(intercept), alpha_std=float(alpha_std),
        rmse_log=rmse, n_range=(min(ns), max(ns)), n_points=m, n_infinite=n_inf,
        unreliable=n_inf > UNRELIABLE_FRACTION * len(keep), weighted=weighted,
        alpha_std_bootstrap=boot,
    )


def group_table(rows: Iterable[MedianRow]) -> dict[tuple[str, float], list[MedianRow]]:
    """Key rows by ``(solver, eps)``, each list sorted by N."""
    out: dict[tuple[str, float], list[MedianRow]] = {}
    for r in rows:
        out.setdefault((r.solver, r.eps), []).append(r)
    for v in out.values():
        v.sort(key=lambda r: r.n)
    return out


def fit_rows(rows: Sequence[MedianRow], n_range=None, **kwargs) -> PowerLawFit:
    return fit_power_law([(r.n, r.median) for r in rows], n_range,
                         stds=[r.std for r in rows], **kwargs)


def alpha_vs_epsilon(
    table,
    eps_list: Sequence[float],
    n_range: Optional[tuple[float, float]] = None,
    solver: Optional[str] = None,
    **kwargs,
) -> list[tuple[float, PowerLawFit]]:
    """One power-law fit per gap over a common size range, sorted by gap.

    ``table`` is either a list of :class:`MedianRow` or the grouped dict
    from :func:`group_table`. ``solver`` may be omitted when the table
    holds a single solver.
    """
    grouped = table if isinstance(table, dict) else group_table(table)
    solvers = sorted({s for s, _ in grouped})
    if solver is None:
        if len(solvers) != 1:
            raise ValueError(f"table holds several solvers {solvers}; pick one")
        solver = solvers[0]
    out = []
    for eps in sorted(float(e) for e in eps_list):
        rows = _lookup(grouped, solver, eps)
        out.append((eps, fit_rows(rows, n_range, **kwargs)))
    return out


def _lookup(grouped, solver: str, eps: float) -> list[MedianRow]:
    for (s, e), rows in grouped.items():
        if s == solver and math.isclose(e, eps, rel_tol=1e-9, abs_tol=1e-12):
            return rows
    raise KeyError(f"no medians for solver={solver!r} eps={eps}")


def _parse_float(text: str) -> float:
    t = text.strip().lower()
    if t in ("inf", "+inf", "infinity"):
        return math.inf
    return float(t)


def import_external_medians(path: PathLike) -> dict[tuple[str, float], list[MedianRow]]:
    """Read a ``solver,N,eps,median,std`` CSV (``eps`` as a fraction)."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in MEDIAN_COLUMNS if c not in header]
        if missing:
            raise MedianTableError(f"{path}: missing columns {missing}")
        seen = set()
        for lineno, rec in enumerate(reader, start=2):
            try:
                row = MedianRow(
                    solver=rec["solver"].strip(),
                    n=int(rec["N"]),
                    eps=float(rec["eps"]),
                    median=_parse_float(rec["median"]),
                    std=_parse_float(rec["std"]),
                )
            except (TypeError, ValueError, AttributeError) as exc:
                raise MedianTableError(f"{path}: row {lineno}: {exc}") from None
            if not row.solver:
                raise MedianTableError(f"{path}: row {lineno}: empty solver name")
            if row.n < 1 or row.eps < 0 or not row.median > 0 or row.std < 0 or math.isnan(row.std):
                raise MedianTableError(f"{path}: row {lineno}: value out of range")
            key = (row.solver, row.n, row.eps)
            if key in seen:
                raise MedianTableError(f"{path}: row {lineno}: duplicate {key}")
            seen.add(key)
            rows.append(row)
    return group_table(rows)


def export_medians(rows: Iterable[MedianRow], path: PathLike) -> None:
    if isinstance(rows, dict):
        rows = [r for v in rows.values() for r in v]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(MEDIAN_COLUMNS)
        for r in rows:
            w.writerow([r.solver, r.n, repr(r.eps), repr(r.median), repr(r.std)])


def write_plot_csv(rows: Sequence[MedianRow], fit: PowerLawFit, path: PathLike) -> None:
    """``N, median, std, fitted`` for one (solver, eps) series."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["N", "median", "std", "fitted"])
        for r in rows:
            w.writerow([r.n, repr(r.median), repr(r.std), repr(float(fit.predict(r.n)))])


def fits_to_json(fits: Sequence[tuple[str, float, PowerLawFit]], path: Optional[PathLike] = None, **extra) -> dict:
    doc = {
        "schema_version": 1,
        **extra,
        "fits": [{"solver": s, "eps": e, **f.to_dict()} for s, e, f in fits],
    }
    if path is not None:
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=2)
    return doc
