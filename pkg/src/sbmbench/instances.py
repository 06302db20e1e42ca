"""Graph families, Sidon-28 instance generation and the triplet file format.

File format, one record per line::

    # name=king_L10_i000
    # L=10
    # E0=-123.25
    u v value

``u == v`` sets the field ``h_u``; ``u != v`` sets the coupling
``J_uv``. Blank lines and lines starting with ``#`` are ignored, except
``# key=value`` headers which carry metadata (``n``, ``name``, ``L``,
``E0``). Indices are 0-based.
"""
from __future__ import annotations

import os
from pathlib import Path
from typing import Iterable, Optional, Union

import numpy as np

from . import rng
from .ising import IsingModel, ModelError

SIDON_28 = np.array([8 / 28, 13 / 28, 19 / 28, 1.0])
SIDON_28_VALUES = np.concatenate([-SIDON_28[::-1], SIDON_28])

PathLike = Union[str, os.PathLike]


class InstanceFormatError(ValueError):
    def __init__(self, path, lineno: int, msg: str):
        self.path = str(path)
        self.lineno = lineno
        super().__init__(f"{path}:{lineno}: {msg}")


def complete_graph(n: int) -> np.ndarray:
    i, j = np.triu_indices(n, k=1)
    return np.stack([i, j], axis=1).astype(np.int64)


def king_graph(L: int, width: Optional[int] = None) -> np.ndarray:
    """Edges of an ``L x width`` king's graph (grid plus both diagonals).

    Site ``(r, c)`` has index ``r * width + c``. Interior vertices have
    degree 8.
    """
    W = L if width is None else width
    if L < 1 or W < 1:
        raise ValueError("king graph dimensions must be positive")
    idx = np.arange(L * W).reshape(L, W)
    parts = [
        (idx[:, :-1], idx[:, 1:]),      # horizontal
        (idx[:-1, :], idx[1:, :]),      # vertical
        (idx[:-1, :-1], idx[1:, 1:]),   # diagonal
        (idx[:-1, 1:], idx[1:, :-1]),   # anti-diagonal
    ]
    edges = np.concatenate(
        [np.stack([a.ravel(), b.ravel()], axis=1) for a, b in parts]
    )
    edges = np.sort(edges, axis=1)
    return edges[np.lexsort((edges[:, 1], edges[:, 0]))]


def generate_sidon_instance(
    edges,
    seed: int,
    n: Optional[int] = None,
    **metadata,
) -> IsingModel:
    """Assign Sidon-28 couplings uniformly at random to every edge.

    Fields are zero. ``n`` defaults to ``max index + 1`` (1 for an empty
    edge list).
    """
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if np.any(edges[:, 0] == edges[:, 1]):
        raise ModelError("self-loop in edge list")
    canon = np.sort(edges, axis=1)
    if len(np.unique(canon, axis=0)) != len(canon):
        raise ModelError("duplicate edge in edge list")
    if n is None:
        n = int(edges.max()) + 1 if edges.size else 1
    gen = rng.stream(seed, 0, rng.GENERATOR)
    weights = SIDON_28_VALUES[gen.integers(0, len(SIDON_28_VALUES), size=len(edges))]
    return IsingModel(n, edges, weights, None, **metadata)


def _format_value(x: float) -> str:
    return repr(float(x))


def save_instance(model: IsingModel, path: PathLike) -> None:
    """Write ``model`` in the triplet format, values in shortest round-trip form."""
    lines = [f"# n={model.n}"]
    if model.name is not None:
        lines.append(f"# name={model.name}")
    if model.size_L is not None:
        lines.append(f"# L={model.size_L}")
    if model.ground_energy is not None:
        lines.append(f"# E0={_format_value(model.ground_energy)}")
    for i in np.flatnonzero(model.fields):
        lines.append(f"{i} {i} {_format_value(model.fields[i])}")
    for (u, v), w in zip(model.edges.tolist(), model.weights.tolist()):
        lines.append(f"{u} {v} {_format_value(w)}")
    Path(path).write_text("\n".join(lines) + "\n")


def parse_triplets(lines: Iterable[str], path="<string>", one_based: bool = False) -> IsingModel:
    meta: dict[str, str] = {}
    fields: dict[int, float] = {}
    couplings: dict[tuple[int, int], float] = {}
    where: dict[tuple[int, int], int] = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if "=" in body and " " not in body.split("=", 1)[0]:
                key, val = body.split("=", 1)
                meta[key.strip()] = val.strip()
            continue
        parts = line.split()
        if len(parts) != 3:
            raise InstanceFormatError(path, lineno, f"expected 'u v value', got {line!r}")
        try:
            u, v = int(parts[0]), int(parts[1])
            val = float(parts[2])
        except ValueError:
            raise InstanceFormatError(path, lineno, f"cannot parse {line!r}") from None
        if one_based:
            u, v = u - 1, v - 1
        if u < 0 or v < 0:
            raise InstanceFormatError(path, lineno, "negative index")
        if not np.isfinite(val):
            raise InstanceFormatError(path, lineno, "non-finite value")
        key = (min(u, v), max(u, v))
        if key in where:
            raise InstanceFormatError(
                path, lineno, f"duplicate entry for {key}, first seen on line {where[key]}"
            )
        where[key] = lineno
        if u == v:
            fields[u] = val
        else:
            couplings[key] = val

    max_idx = max([k for pair in where for k in pair], default=-1)
    if "n" in meta:
        try:
            n = int(meta["n"])
        except ValueError:
            raise InstanceFormatError(path, 0, f"bad header n={meta['n']!r}") from None
        if max_idx >= n:
            bad = max(where, key=lambda k: k[1])
            raise InstanceFormatError(
                path, where[bad], f"index {max_idx} out of range for n={n}"
            )
    else:
        n = max(max_idx + 1, 1)
    h = np.zeros(n)
    for i, val in fields.items():
        h[i] = val
    try:
        L = int(meta["L"]) if "L" in meta else None
        E0 = float(meta["E0"]) if "E0" in meta else None
    except ValueError as exc:
        raise InstanceFormatError(path, 0, f"bad metadata header: {exc}") from None
    return IsingModel.from_couplings(
        n, couplings, h, name=meta.get("name"), size_L=L, ground_energy=E0
    )


def load_instance(path: PathLike, one_based: bool = False) -> IsingModel:
    """Read a triplet file. ``one_based`` shifts all indices down by one."""
    with open(path) as fh:
        return parse_triplets(fh, path=path, one_based=one_based)


def convert_instance(src: PathLike, dst: PathLike, one_based: bool = True) -> IsingModel:
    """Normalize an external triplet file (e.g. 1-based) into the canonical form.

    Archived instances must first be flattened to ``u v value`` lines;
    this only fixes indexing and rewrites headers.
    """
    model = load_instance(src, one_based=one_based)
    save_instance(model, dst)
    return model
