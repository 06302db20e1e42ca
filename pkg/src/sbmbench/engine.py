"""Discretized simulated bifurcation (dSB) with ternary discretization.

Each replica integrates, with symplectic Euler and step ``dt``,

    dq_i/dt = a0 p_i
    dp_i/dt = -(a0 - a(t)) q_i + c0 (sum_j J_ij f(q_j) + h_i)

where ``a(t) = a0 t / T``, ``T = n_steps * dt`` and ``f`` is the
ternary sign with threshold ``ternary_slope * t / T``. After each step
any ``|q_i| > 1`` is clamped to ``sign(q_i)`` with ``p_i = 0``.
Schedules are evaluated at the start time of the step. Spins are read
out as ``sign(q_i)`` with ``sign(0) = +1``.

Replicas are independent; :func:`solve` shards them across worker
threads. Numba kernels release the GIL, so workers run in parallel.
"""
from __future__ import annotations

import csv
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numba
import numpy as np

from . import rng
from .ising import IsingModel, energy

INIT_HALF_WIDTH = 0.1


class NonFiniteStateError(FloatingPointError):
    """Integration produced NaN/inf; usually a misconfigured ``c0`` or ``dt``."""

    def __init__(self, replica_id: int, step: int):
        self.replica_id = replica_id
        self.step = step
        super().__init__(
            f"replica {replica_id} produced a non-finite state at step {step}; "
            "check c0 and the dt range"
        )


@dataclass(frozen=True)
class SbmParams:
    """Solver hyperparameters.

    ``c0`` overrides the automatic coupling scale when set. ``sigma_mode``
    selects which coupling entries enter the automatic scale: ``"all"``
    off-diagonal entries of the dense matrix (zeros included) or only the
    ``"nonzero"`` ones.
    """

    n_steps: int = 1000
    n_replicas: int = 64
    seed: int = 0
    n_workers: int = 1
    a0: float = 1.0
    c0: Optional[float] = None
    dt_range: tuple[float, float] = (0.25, 1.5)
    ternary_slope: float = 0.7
    sigma_mode: str = "all"
    track_best: bool = False

    def __post_init__(self):
        lo, hi = (float(x) for x in self.dt_range)
        object.__setattr__(self, "dt_range", (lo, hi))
        if not (lo > 0 and lo <= hi):
            raise ValueError(f"dt_range must satisfy 0 < min <= max, got {self.dt_range}")
        for name in ("n_steps", "n_replicas", "n_workers"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.a0 <= 0:
            raise ValueError("a0 must be positive")
        if self.ternary_slope < 0:
            raise ValueError("ternary_slope must be >= 0")
        if self.sigma_mode not in ("all", "nonzero"):
            raise ValueError(f"unknown sigma_mode {self.sigma_mode!r}")

    def replace(self, **changes) -> "SbmParams":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dt_range"] = list(self.dt_range)
        return d


@dataclass
class ReplicaState:
    q: np.ndarray
    p: np.ndarray
    dt: float
    step_index: int = 0


@dataclass
class SolveOutcome:
    best_spins: np.ndarray
    best_energy: float
    replica_energies: np.ndarray
    t_total: float
    t_compute: float
    params_used: SbmParams
    best_replica: int = 0
    worker_times: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "best_energy": self.best_energy,
            "best_replica": self.best_replica,
            "best_spins": self.best_spins.astype(int).tolist(),
            "replica_energies": self.replica_energies.tolist(),
            "t_total": self.t_total,
            "t_compute": self.t_compute,
            "worker_times": list(self.worker_times),
            "params_used": self.params_used.to_dict(),
        }


def coupling_sigma(model: IsingModel, mode: str = "all") -> float:
    """Population std of the off-diagonal coupling entries."""
    w = model.weights
    if mode == "nonzero":
        w = w[w != 0]
        return float(np.std(w)) if w.size else 0.0
    n = model.n
    n_off = n * (n - 1)
    if n_off == 0:
        return 0.0
    # each stored pair occupies two off-diagonal slots
    mean = 2.0 * w.sum() / n_off
    second = 2.0 * np.dot(w, w) / n_off
    return float(math.sqrt(max(second - mean * mean, 0.0)))


def resolve_c0(model: IsingModel, params: SbmParams) -> float:
    """Coupling scale ``0.7 a0 / (sigma sqrt(N))`` unless overridden."""
    if params.c0 is not None:
        return float(params.c0)
    if model.n < 2:
        raise ValueError("automatic c0 needs n >= 2; pass an explicit c0")
    sigma = coupling_sigma(model, params.sigma_mode)
    if sigma == 0.0:
        raise ValueError("couplings have zero spread; pass an explicit c0")
    return 0.7 * params.a0 / (sigma * math.sqrt(model.n))


def ternary_sign(x, threshold: float):
    """``0`` where ``|x| <= threshold``, else ``sign(x)``."""
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    x = np.asarray(x, dtype=np.float64)
    out = np.where(x > threshold, 1.0, np.where(x < -threshold, -1.0, 0.0))
    return out if out.ndim else float(out)


def schedule(step_index: int, n_steps: int, dt: float, a0: float = 1.0,
             ternary_slope: float = 0.7) -> tuple[float, float]:
    """Drive ``a(t)`` and ternary threshold at the start of ``step_index``."""
    t = step_index * dt
    T = n_steps * dt
    return a0 * t / T, ternary_slope * t / T


def readout(q: np.ndarray) -> np.ndarray:
    return np.where(q >= 0, 1, -1).astype(np.int8)


def init_replica(model: IsingModel, params: SbmParams, replica_id: int) -> ReplicaState:
    """Initial positions uniform in ``[-0.1, 0.1]``, zero momenta, per-replica dt."""
    q = rng.stream(params.seed, replica_id, rng.INIT_POSITIONS).uniform(
        -INIT_HALF_WIDTH, INIT_HALF_WIDTH, size=model.n
    )
    lo, hi = params.dt_range
    dt = float(rng.stream(params.seed, replica_id, rng.TIME_STEP).uniform(lo, hi))
    return ReplicaState(q=q, p=np.zeros(model.n), dt=dt)


def sbm_step(model: IsingModel, state: ReplicaState, params: SbmParams, c0: float,
             replica_id: int = -1) -> ReplicaState:
    """One symplectic Euler step (momentum, then position, then wall).

    Reference implementation; :func:`run_replica` and :func:`solve` use a
    compiled kernel performing the same arithmetic.
    """
    if state.step_index >= params.n_steps:
        raise ValueError(f"step_index {state.step_index} >= n_steps {params.n_steps}")
    indptr, indices, data = model.csr
    a0, dt = params.a0, state.dt
    a, thr = schedule(state.step_index, params.n_steps, dt, a0, params.ternary_slope)
    f = ternary_sign(state.q, thr)
    rows = np.repeat(np.arange(model.n), np.diff(indptr))
    local = np.bincount(rows, weights=data * f[indices], minlength=model.n)
    with np.errstate(over="ignore", invalid="ignore"):
        p = state.p + dt * (-(a0 - a) * state.q + c0 * (local + model.fields))
    if not np.all(np.isfinite(p)):
        raise NonFiniteStateError(replica_id, state.step_index)
    q = state.q + dt * a0 * p
    hit = np.abs(q) > 1.0
    q = np.where(hit, np.where(q >= 0, 1.0, -1.0), q)
    p = np.where(hit, 0.0, p)
    return ReplicaState(q=q, p=p, dt=dt, step_index=state.step_index + 1)


@numba.njit(nogil=True, cache=True)
def _readout_energy(indptr, indices, data, h, q):
    n = q.shape[0]
    e = 0.0
    for i in range(n):
        si = 1.0 if q[i] >= 0 else -1.0
        acc = 0.0
        for kk in range(indptr[i], indptr[i + 1]):
            j = indices[kk]
            if j > i:
                acc += data[kk] * (1.0 if q[j] >= 0 else -1.0)
        e -= si * (acc + h[i])
    return e


@numba.njit(nogil=True, cache=True)
def _integrate(indptr, indices, data, h, a0, c0, slope, n_steps, q, p, dts,
               per_step, trace, best_q, best_e, monitor, status):
    R, N = q.shape
    f = np.empty(N)
    use_monitor = monitor.shape[0] > 0
    use_trace = trace.shape[0] > 0
    track = best_q.shape[0] > 0
    for r in range(R):
        dt = dts[r]
        T = n_steps * dt
        status[r] = -1
        if track:
            best_e[r] = np.inf
        for k in range(n_steps):
            t = k * dt
            a = a0 * t / T
            thr = slope * t / T
            bad_f = 0
            for j in range(N):
                x = q[r, j]
                if x > thr:
                    f[j] = 1.0
                elif x < -thr:
                    f[j] = -1.0
                else:
                    f[j] = 0.0
            if use_monitor:
                for j in range(N):
                    if f[j] != 1.0 and f[j] != 0.0 and f[j] != -1.0:
                        bad_f += 1
            qmax = 0.0
            for i in range(N):
                acc = 0.0
                for kk in range(indptr[i], indptr[i + 1]):
                    acc += data[kk] * f[indices[kk]]
                pi = p[r, i] + dt * (-(a0 - a) * q[r, i] + c0 * (acc + h[i]))
                if not math.isfinite(pi):
                    status[r] = k
                    return
                qi = q[r, i] + dt * a0 * pi
                if qi > 1.0:
                    qi = 1.0
                    pi = 0.0
                elif qi < -1.0:
                    qi = -1.0
                    pi = 0.0
                q[r, i] = qi
                p[r, i] = pi
                if abs(qi) > qmax:
                    qmax = abs(qi)
            if use_monitor:
                monitor[r, k, 0] = a
                monitor[r, k, 1] = thr
                monitor[r, k, 2] = qmax
                monitor[r, k, 3] = bad_f
            if per_step:
                e = _readout_energy(indptr, indices, data, h, q[r])
                if use_trace:
                    trace[r, k] = e
                if track and e < best_e[r]:
                    best_e[r] = e
                    for j in range(N):
                        best_q[r, j] = q[r, j]


@numba.njit(nogil=True, cache=True)
def _integrate_block(indptr, indices, data, h, a0, c0, slope, n_steps, q, p, dts, status):
    # Same arithmetic as _integrate, with replicas in the fast axis of
    # (N, B) arrays so the inner loops vectorize across replicas. Lanes
    # never interact, so results match the scalar kernel bit for bit.
    N, B = q.shape
    f = np.empty((N, B))
    acc = np.empty(B)
    a = np.empty(B)
    thr = np.empty(B)
    T = np.empty(B)
    for b in range(B):
        T[b] = n_steps * dts[b]
    for k in range(n_steps):
        for b in range(B):
            t = k * dts[b]
            a[b] = a0 * t / T[b]
            thr[b] = slope * t / T[b]
        for j in range(N):
            for b in range(B):
                x = q[j, b]
                f[j, b] = 1.0 if x > thr[b] else (-1.0 if x < -thr[b] else 0.0)
        nbad = 0
        for i in range(N):
            for b in range(B):
                acc[b] = 0.0
            for kk in range(indptr[i], indptr[i + 1]):
                w = data[kk]
                jj = indices[kk]
                for b in range(B):
                    acc[b] += w * f[jj, b]
            hi = h[i]
            for b in range(B):
                dt = dts[b]
                pi = p[i, b] + dt * (-(a0 - a[b]) * q[i, b] + c0 * (acc[b] + hi))
                nbad += pi - pi != 0.0
                qi = q[i, b] + dt * a0 * pi
                if qi > 1.0:
                    qi = 1.0
                    pi = 0.0
                elif qi < -1.0:
                    qi = -1.0
                    pi = 0.0
                q[i, b] = qi
                p[i, b] = pi
        if nbad:
            for b in range(B):
                status[b] = k
            return


BLOCK = 16


@dataclass
class ReplicaBatch:
    """Raw result of integrating a block of replicas on one worker."""

    replica_ids: np.ndarray
    spins: np.ndarray
    q: np.ndarray
    p: np.ndarray
    dts: np.ndarray
    elapsed: float
    trace: Optional[np.ndarray] = None
    monitor: Optional[np.ndarray] = None


def integrate_replicas(
    model: IsingModel,
    params: SbmParams,
    c0: float,
    replica_ids: Sequence[int],
    *,
    trace: bool = False,
    monitor: bool = False,
) -> ReplicaBatch:
    """Run full trajectories for ``replica_ids`` sequentially.

    ``elapsed`` covers only the integration loop, not state setup.
    ``monitor`` records ``(a, threshold, max|q|, bad f count)`` per step.
    """
    ids = np.asarray(replica_ids, dtype=np.int64)
    R, N, S = len(ids), model.n, params.n_steps
    q = np.empty((R, N))
    p = np.zeros((R, N))
    dts = np.empty(R)
    for k, rid in enumerate(ids):
        st = init_replica(model, params, int(rid))
        q[k], dts[k] = st.q, st.dt
    indptr, indices, data = model.csr
    h = np.ascontiguousarray(model.fields)
    per_step = trace or params.track_best
    tr = np.empty((R, S)) if trace else np.empty((0, 0))
    best_q = np.empty((R, N)) if params.track_best else np.empty((0, 0))
    best_e = np.empty(R if params.track_best else 0)
    mon = np.zeros((R, S, 4)) if monitor else np.empty((0, 0, 4))
    status = np.full(R, -1, dtype=np.int64)

    args = (float(params.a0), float(c0), float(params.ternary_slope), S)
    q_init = q.copy()

    t0 = time.perf_counter()
    if per_step or monitor:
        _integrate(indptr, indices, data, h, *args, q, p, dts, per_step, tr,
                   best_q, best_e, mon, status)
    else:
        for lo in range(0, R, BLOCK):
            hi = min(lo + BLOCK, R)
            qb = np.ascontiguousarray(q[lo:hi].T)
            pb = np.ascontiguousarray(p[lo:hi].T)
            _integrate_block(indptr, indices, data, h, *args, qb, pb, dts[lo:hi],
                             status[lo:hi])
            q[lo:hi] = qb.T
            p[lo:hi] = pb.T
    elapsed = time.perf_counter() - t0

    bad = np.flatnonzero(status >= 0)
    if bad.size and not (per_step or monitor):
        # blocked kernel flags whole blocks; replay the block per replica to find the culprit
        lo = int(bad[0])
        hi = min(lo + BLOCK, R)
        status[lo:hi] = -1
        _integrate(indptr, indices, data, h, *args, q_init[lo:hi].copy(),
                   np.zeros((hi - lo, N)), dts[lo:hi], False, np.empty((0, 0)),
                   np.empty((0, 0)), np.empty(0), np.empty((0, 0, 4)), status[lo:hi])
        bad = np.flatnonzero(status >= 0)
    if bad.size:
        raise NonFiniteStateError(int(ids[bad[0]]), int(status[bad[0]]))
    spins = readout(best_q if params.track_best else q)
    return ReplicaBatch(ids, spins, q, p, dts, elapsed,
                        tr if trace else None, mon if monitor else None)


def run_replica(model: IsingModel, params: SbmParams, c0: float, replica_id: int) -> tuple[float, np.ndarray]:
    """Integrate one replica; returns ``(energy, spins)``."""
    batch = integrate_replicas(model, params, c0, [replica_id])
    s = batch.spins[0]
    return energy(model, s), s


_compiled = False


def warm_up() -> None:
    """Compile kernels so JIT time never lands inside a timed solve."""
    global _compiled
    if _compiled:
        return
    m = IsingModel(2, [[0, 1]], [1.0])
    p = SbmParams(n_steps=2, n_replicas=1, c0=1.0)
    integrate_replicas(m, p, 1.0, [0])
    integrate_replicas(m, p.replace(n_replicas=BLOCK), 1.0, range(BLOCK))
    integrate_replicas(m, p.replace(track_best=True), 1.0, [0], trace=True, monitor=True)
    _compiled = True


def default_workers() -> int:
    return int(os.environ.get("SBMBENCH_WORKERS", "1"))


def write_trace(batches: Sequence[ReplicaBatch], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "replica", "energy"])
        for b in batches:
            for k, rid in enumerate(b.replica_ids):
                for step, e in enumerate(b.trace[k]):
                    w.writerow([step + 1, int(rid), repr(float(e))])


def solve(model: IsingModel, params: SbmParams, *, trace_path=None) -> SolveOutcome:
    """Run ``n_replicas`` replicas sharded over ``n_workers`` threads.

    Replica ``r`` always uses the streams keyed by ``(seed, r)``, so the
    result does not depend on ``n_workers``. ``t_total`` is the wall time
    of the whole call; ``t_compute`` is the mean integration-loop time of
    the workers that received replicas.
    """
    warm_up()
    t0 = time.perf_counter()
    c0 = resolve_c0(model, params)
    R = params.n_replicas
    W = min(params.n_workers, R)
    shards = np.array_split(np.arange(R), W)
    want_trace = trace_path is not None

    def work(ids):
        return integrate_replicas(model, params, c0, ids, trace=want_trace)

    if W == 1:
        batches = [work(shards[0])]
    else:
        with ThreadPoolExecutor(max_workers=W) as pool:
            batches = list(pool.map(work, shards))

    spins = np.concatenate([b.spins for b in batches])
    energies = np.array([energy(model, s) for s in spins])
    best = int(np.argmin(energies))
    worker_times = [b.elapsed for b in batches]
    if want_trace:
        write_trace(batches, trace_path)
    t_total = time.perf_counter() - t0
    return SolveOutcome(
        best_spins=spins[best].copy(),
        best_energy=float(energies[best]),
        replica_energies=energies,
        t_total=t_total,
        t_compute=float(np.mean(worker_times)),
        params_used=params.replace(c0=c0),
        best_replica=best,
        worker_times=worker_times,
    )
