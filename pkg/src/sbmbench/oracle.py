"""Exhaustive ground-state search for small models."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numba
import numpy as np

from .ising import IsingModel, energy

MAX_SPINS = 30
_PREFIX_BITS = 4


class OracleRefused(ValueError):
    """Model too large for exhaustive enumeration."""


@numba.njit(nogil=True, cache=True)
def _enumerate_chunk(indptr, indices, data, h, n, k, chunk, tol):
    # spins 0..k-1 are fixed by `chunk` (spin 0 most significant bit);
    # spins k..n-1 are walked in Gray-code order starting from all -1
    s = np.empty(n)
    for i in range(n):
        if i < k:
            s[i] = 1.0 if (chunk >> (k - 1 - i)) & 1 else -1.0
        else:
            s[i] = -1.0
    local = h.copy()
    for i in range(n):
        for kk in range(indptr[i], indptr[i + 1]):
            local[i] += data[kk] * s[indices[kk]]
    e = 0.0
    for i in range(n):
        e -= h[i] * s[i]
        for kk in range(indptr[i], indptr[i + 1]):
            j = indices[kk]
            if j > i:
                e -= data[kk] * s[i] * s[j]

    m = n - k
    g = 0
    best_e = e
    best_g = 0
    for t in range(1, 1 << m):
        b = 0
        while (t >> b) & 1 == 0:
            b += 1
        i = n - 1 - b
        si = s[i]
        e += 2.0 * si * local[i]
        for kk in range(indptr[i], indptr[i + 1]):
            local[indices[kk]] -= 2.0 * data[kk] * si
        s[i] = -si
        g ^= 1 << b
        if e < best_e - tol:
            best_e = e
            best_g = g
        elif e <= best_e + tol and g < best_g:
            best_g = g
            if e < best_e:
                best_e = e
    return best_e, best_g


def _key_to_spins(key: int, n: int) -> np.ndarray:
    bits = (key >> np.arange(n - 1, -1, -1, dtype=np.int64)) & 1
    return np.where(bits == 1, 1, -1).astype(np.int8)


def brute_force_ground_state(model: IsingModel, n_workers: int = 1) -> tuple[float, np.ndarray]:
    """Exact minimum energy and minimizer by enumerating all ``2**n`` states.

    Ties are broken towards the lexicographically smallest configuration
    with -1 ordered before +1. Refuses models with more than
    ``MAX_SPINS`` spins.
    """
    n = model.n
    if n > MAX_SPINS:
        raise OracleRefused(
            f"exhaustive search over 2**{n} states refused (cap is n <= {MAX_SPINS})"
        )
    indptr, indices, data = model.csr
    h = np.ascontiguousarray(model.fields)
    scale = 1.0 + np.abs(model.weights).sum() + np.abs(h).sum()
    tol = 1e-9 * scale
    k = min(n, _PREFIX_BITS)
    m = n - k

    def run(chunk):
        return _enumerate_chunk(indptr, indices, data, h, n, k, chunk, tol)

    chunks = range(1 << k)
    if n_workers > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(run, chunks))
    else:
        results = [run(c) for c in chunks]

    best_e, best_key = np.inf, -1
    for chunk, (e, g) in enumerate(results):
        key = (chunk << m) | int(g)
        if e < best_e - tol or (e <= best_e + tol and key < best_key):
            best_e = min(e, best_e) if e <= best_e + tol else e
            best_key = key
    spins = _key_to_spins(best_key, n)
    return energy(model, spins), spins
