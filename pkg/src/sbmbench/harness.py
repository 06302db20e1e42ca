"""Time-to-epsilon measurement protocol.

For every instance the solver is run ``n_runs`` times with independent
seeds. Success at gap ``eps`` means ``E <= E0 + eps * |E0|``; the mean
runtime ``t_f`` and success probability ``p`` give

    TTeps = t_f * log(1 - 0.99) / log(1 - p)

with the repeat factor floored at one. Per-size medians over instances
carry bootstrap standard deviations, and the solver's ``(n_steps,
n_replicas)`` are chosen by grid search to minimize the median.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from itertools import product
from typing import Callable, Optional, Sequence

import numpy as np

from . import rng
from .engine import SbmParams, solve
from .ising import IsingModel
from .oracle import MAX_SPINS, brute_force_ground_state

TARGET_CONFIDENCE = 0.99
DEFAULT_EPSILONS = (0.0075, 0.0100, 0.0110, 0.0125)
DEFAULT_GRID_STEPS = (32, 64, 128, 256, 512, 1024, 2048, 4096)
DEFAULT_GRID_REPLICAS = (16, 32, 64, 128, 256, 512, 1024)
DEFAULT_BOOTSTRAP = 1000
TIMINGS = ("total", "compute")

Solver = Callable[[IsingModel, SbmParams], object]


class MissingGroundEnergy(ValueError):
    pass


@dataclass(frozen=True)
class RunRecord:
    instance_id: str
    n_steps: int
    n_replicas: int
    run_index: int
    seed: int
    energy: float
    t_total: float
    t_compute: float

    def __post_init__(self):
        if not math.isfinite(self.energy):
            raise ValueError("run energy must be finite")
        if self.t_compute > self.t_total:
            raise ValueError("t_compute exceeds t_total")


@dataclass(frozen=True)
class TTEpsilonRecord:
    instance_id: str
    eps: float
    p_success: float
    t_f_total: float
    t_f_compute: float
    tte_total: float
    tte_compute: float
    ground_energy: float
    n_runs: int
    n: int = 0
    n_steps: int = 0
    n_replicas: int = 0

    def tte(self, timing: str) -> float:
        return self.tte_total if timing == "total" else self.tte_compute


@dataclass(frozen=True)
class MedianPoint:
    n: int
    eps: float
    timing: str
    median: float
    std: float
    n_finite: int
    n_instances: int
    n_steps: int
    n_replicas: int
    median_total: float
    std_total: float
    median_compute: float
    std_compute: float
    unsolved: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def success_threshold(ground_energy: float, eps: float) -> float:
    # relative slack absorbs last-ulp differences between summation orders
    slack = 1e-12 * max(1.0, abs(ground_energy))
    return ground_energy + eps * abs(ground_energy) + slack


def success_probability(energies, ground_energy: float, eps: float) -> float:
    """Fraction of runs with ``E <= E0 + eps * |E0|``."""
    e = np.asarray([getattr(r, "energy", r) for r in energies], dtype=np.float64)
    if e.size == 0:
        raise ValueError("no runs to evaluate")
    if not math.isfinite(ground_energy) or eps < 0:
        raise ValueError("ground energy must be finite and eps >= 0")
    return float(np.mean(e <= success_threshold(ground_energy, eps)))


def tt_epsilon(t_f: float, p: float, target: float = TARGET_CONFIDENCE) -> float:
    """Expected time to hit the target at ``target`` confidence.

    ``p == 0`` gives ``inf``; the repeat factor never drops below one, so
    ``p >= target`` gives ``t_f``.
    """
    if not t_f > 0:
        raise ValueError(f"t_f must be positive, got {t_f}")
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    if p == 0.0:
        return math.inf
    if p == 1.0:
        return t_f
    repeats = math.log1p(-target) / math.log1p(-p)
    return t_f * max(1.0, repeats)


def run_seed(master_seed: int, instance_id: str, run_index: int) -> int:
    return rng.derive_seed(master_seed, instance_id, run_index)


def collect_runs(
    model: IsingModel,
    params: SbmParams,
    n_runs: int,
    *,
    master_seed: int = 0,
    instance_id: Optional[str] = None,
    solver: Solver = solve,
) -> list[RunRecord]:
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    iid = instance_id if instance_id is not None else (model.name or "instance")
    out = []
    for k in range(n_runs):
        seed = run_seed(master_seed, iid, k)
        res = solver(model, params.replace(seed=seed))
        out.append(RunRecord(iid, params.n_steps, params.n_replicas, k, seed,
                             float(res.best_energy), float(res.t_total), float(res.t_compute)))
    return out


def summarize_runs(runs: Sequence[RunRecord], ground_energy: float, eps_list, n: int = 0) -> list[TTEpsilonRecord]:
    """One TTeps record per gap, with runtimes averaged over all runs."""
    if not runs:
        raise ValueError("no runs to summarize")
    t_tot = float(np.mean([r.t_total for r in runs]))
    t_cmp = float(np.mean([r.t_compute for r in runs]))
    # timer resolution can report a zero-length loop on trivial problems
    t_cmp = max(t_cmp, 1e-9)
    t_tot = max(t_tot, t_cmp)
    out = []
    for eps in eps_list:
        p = success_probability(runs, ground_energy, eps)
        out.append(TTEpsilonRecord(
            instance_id=runs[0].instance_id, eps=float(eps), p_success=p,
            t_f_total=t_tot, t_f_compute=t_cmp,
            tte_total=tt_epsilon(t_tot, p), tte_compute=tt_epsilon(t_cmp, p),
            ground_energy=float(ground_energy), n_runs=len(runs), n=n,
            n_steps=runs[0].n_steps, n_replicas=runs[0].n_replicas,
        ))
    return out


def reference_energy(model: IsingModel, oracle_cap: int = 0) -> float:
    """Ground energy from metadata, or by exhaustive search when ``n <= oracle_cap``."""
    if model.ground_energy is not None:
        return model.ground_energy
    if model.n <= min(oracle_cap, MAX_SPINS):
        return brute_force_ground_state(model)[0]
    raise MissingGroundEnergy(
        f"instance {model.name!r} has no E0; run the oracle or add '# E0=' metadata"
    )


def benchmark_instance(
    model: IsingModel,
    params: SbmParams,
    n_runs: int,
    eps_list,
    *,
    master_seed: int = 0,
    instance_id: Optional[str] = None,
    ground_energy: Optional[float] = None,
    solver: Solver = solve,
) -> list[TTEpsilonRecord]:
    """Run the solver ``n_runs`` times and compute TTeps for every gap."""
    e0 = ground_energy if ground_energy is not None else reference_energy(model)
    runs = collect_runs(model, params, n_runs, master_seed=master_seed,
                        instance_id=instance_id, solver=solver)
    return summarize_runs(runs, e0, eps_list, n=model.n)


def _sorted_extended(values) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("median of an empty set")
    if np.any(np.isnan(v)):
        raise ValueError("NaN in values")
    return np.sort(v)


def _median_sorted(v: np.ndarray) -> float:
    n = v.shape[-1]
    mid = n // 2
    if n % 2:
        return v[..., mid]
    lo, hi = v[..., mid - 1], v[..., mid]
    with np.errstate(invalid="ignore"):
        m = 0.5 * (lo + hi)
    # inf/inf midpoint would be nan only for (-inf, inf), which cannot occur here
    return np.where(lo == hi, lo, m)


def median_with_bootstrap(values, n_resamples: int = DEFAULT_BOOTSTRAP, seed: int = 0) -> tuple[float, float]:
    """Median over extended reals and bootstrap std of the median.

    ``inf`` sorts above every finite value. The std is ``inf`` when any
    resampled median is infinite but they are not all equal.
    """
    if n_resamples < 1:
        raise ValueError("n_resamples must be >= 1")
    v = _sorted_extended(values)
    med = float(_median_sorted(v))
    gen = np.random.Generator(np.random.Philox(key=int(seed) & rng.MASK64))
    idx = gen.integers(0, v.size, size=(n_resamples, v.size))
    samples = np.sort(v[idx], axis=1)
    meds = np.asarray(_median_sorted(samples), dtype=np.float64)
    if np.all(meds == meds[0]):
        return med, 0.0
    if not np.all(np.isfinite(meds)):
        return med, math.inf
    return med, float(np.std(meds))


@dataclass
class GridResult:
    """Runs of every grid cell on every instance of one size."""

    n: int
    instance_ids: list[str]
    ground_energies: list[float]
    runs: dict[tuple[int, int], list[list[RunRecord]]] = field(default_factory=dict)

    @property
    def cells(self) -> list[tuple[int, int]]:
        return sorted(self.runs)

    def records(self, cell: tuple[int, int], eps: float) -> list[TTEpsilonRecord]:
        return [
            summarize_runs(runs, e0, [eps], n=self.n)[0]
            for runs, e0 in zip(self.runs[cell], self.ground_energies)
        ]

    def cell_point(self, cell, eps: float, timing: str = "total",
                   n_resamples: int = DEFAULT_BOOTSTRAP, seed: int = 0) -> MedianPoint:
        recs = self.records(cell, eps)
        stats = {}
        for tm in TIMINGS:
            vals = [r.tte(tm) for r in recs]
            stats[tm] = median_with_bootstrap(vals, n_resamples, seed)
        med, std = stats[timing]
        n_finite = sum(math.isfinite(r.tte_total) for r in recs)
        return MedianPoint(
            n=self.n, eps=float(eps), timing=timing, median=med, std=std,
            n_finite=n_finite, n_instances=len(recs),
            n_steps=cell[0], n_replicas=cell[1],
            median_total=stats["total"][0], std_total=stats["total"][1],
            median_compute=stats["compute"][0], std_compute=stats["compute"][1],
            unsolved=not math.isfinite(med),
        )

    def best(self, eps: float, timing: str = "total",
             n_resamples: int = DEFAULT_BOOTSTRAP, seed: int = 0) -> MedianPoint:
        """Cell with the smallest median TTeps; ties go to fewer steps, then fewer replicas."""
        if timing not in TIMINGS:
            raise ValueError(f"timing must be one of {TIMINGS}")
        if not self.runs:
            raise ValueError("empty grid")
        best_cell, best_med = None, math.inf
        for cell in self.cells:
            vals = [r.tte(timing) for r in self.records(cell, eps)]
            med = float(_median_sorted(_sorted_extended(vals)))
            if best_cell is None or med < best_med:
                best_cell, best_med = cell, med
        return self.cell_point(best_cell, eps, timing, n_resamples, seed)


def resolve_ground_energies(
    instances: Sequence[IsingModel],
    runs_by_cell: dict,
    ground_energies: Optional[Sequence[Optional[float]]] = None,
    oracle_cap: int = 0,
) -> list[float]:
    """Ground energy per instance: explicit value, metadata, oracle, or best found.

    The best-found fallback uses the lowest energy seen in any run of
    any grid cell on that instance.
    """
    out = []
    for k, model in enumerate(instances):
        e0 = ground_energies[k] if ground_energies is not None else None
        if e0 is None:
            try:
                e0 = reference_energy(model, oracle_cap)
            except MissingGroundEnergy:
                e0 = min(r.energy for cell in runs_by_cell.values() for r in cell[k])
        out.append(float(e0))
    return out


def evaluate_grid(
    instances: Sequence[IsingModel],
    grid_steps: Sequence[int],
    grid_replicas: Sequence[int],
    n_runs: int,
    *,
    base_params: Optional[SbmParams] = None,
    master_seed: int = 0,
    solver: Solver = solve,
    ground_energies: Optional[Sequence[Optional[float]]] = None,
    oracle_cap: int = 0,
    instance_ids: Optional[Sequence[str]] = None,
    progress: Optional[Callable[[str], None]] = None,
) -> GridResult:
    """Run every ``(n_steps, n_replicas)`` cell on every instance of one size.

    Runs are shared across gaps: evaluate any ``eps`` afterwards with
    :meth:`GridResult.best`.
    """
    if not instances:
        raise ValueError("empty instance set")
    sizes = {m.n for m in instances}
    if len(sizes) != 1:
        raise ValueError(f"instances of mixed sizes {sorted(sizes)}")
    cells = sorted(set(product((int(s) for s in grid_steps), (int(r) for r in grid_replicas))))
    if not cells:
        raise ValueError("empty grid")
    base = base_params or SbmParams()
    ids = list(instance_ids) if instance_ids is not None else [
        m.name or f"instance{k}" for k, m in enumerate(instances)
    ]
    runs: dict[tuple[int, int], list[list[RunRecord]]] = {}
    for cell in cells:
        params = base.replace(n_steps=cell[0], n_replicas=cell[1])
        runs[cell] = [
            collect_runs(m, params, n_runs, master_seed=master_seed, instance_id=iid, solver=solver)
            for m, iid in zip(instances, ids)
        ]
        if progress:
            progress(f"N={instances[0].n} cell n_steps={cell[0]} n_replicas={cell[1]} done")
    e0s = resolve_ground_energies(instances, runs, ground_energies, oracle_cap)
    return GridResult(n=instances[0].n, instance_ids=ids, ground_energies=e0s, runs=runs)


def grid_search(
    instances: Sequence[IsingModel],
    grid_steps: Sequence[int],
    grid_replicas: Sequence[int],
    n_runs: int,
    eps: float,
    *,
    timing: str = "total",
    n_resamples: int = DEFAULT_BOOTSTRAP,
    bootstrap_seed: int = 0,
    **kwargs,
) -> MedianPoint:
    """Optimal grid cell for one gap; see :func:`evaluate_grid` for options."""
    res = evaluate_grid(instances, grid_steps, grid_replicas, n_runs, **kwargs)
    return res.best(eps, timing, n_resamples, bootstrap_seed)


def medians_to_rows(points: Sequence[MedianPoint], solver: str = "sbm"):
    """Flatten median points into ``(solver, N, eps, median, std)`` rows, one per timing."""
    from .scaling import MedianRow

    rows = []
    for pt in points:
        rows.append(MedianRow(f"{solver}_total", pt.n, pt.eps, pt.median_total, pt.std_total))
        rows.append(MedianRow(f"{solver}_compute", pt.n, pt.eps, pt.median_compute, pt.std_compute))
    return rows


def scaled_steps_grid(n: int, coeff: float = 8.0, exponent: float = 0.5,
                      factors: Sequence[float] = (1.0, 2.0)) -> list[int]:
    """Step counts ``factor * coeff * n**exponent`` (rounded), for size-aware grids."""
    base = coeff * n ** exponent
    return sorted({max(1, int(round(f * base))) for f in factors})


def run_study(
    groups: dict[int, Sequence[IsingModel]],
    grids,
    n_runs: int,
    *,
    base_params: Optional[SbmParams] = None,
    master_seed: int = 0,
    solver: Solver = solve,
    oracle_cap: int = 0,
    progress: Optional[Callable[[str], None]] = None,
) -> dict[int, GridResult]:
    """Evaluate a grid on every size group.

    ``grids`` is either one ``(steps, replicas)`` pair used for every size
    or a callable ``n -> (steps, replicas)``.
    """
    out = {}
    for n in sorted(groups):
        steps, replicas = grids(n) if callable(grids) else grids
        out[n] = evaluate_grid(
            groups[n], steps, replicas, n_runs, base_params=base_params,
            master_seed=master_seed, solver=solver, oracle_cap=oracle_cap,
            progress=progress,
        )
    return out


def study_points(results: dict[int, GridResult], eps: float, timing: str = "total",
                 n_resamples: int = DEFAULT_BOOTSTRAP, seed: int = 0) -> list[MedianPoint]:
    return [results[n].best(eps, timing, n_resamples, seed) for n in sorted(results)]
