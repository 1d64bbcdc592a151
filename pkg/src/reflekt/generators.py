"""Deterministic test instances on the unit interval / unit square.

All planar instances use the lattice ``h * Z^2`` with ``h = 1 / (n - 1)`` and
point mass ``h**2``; distances are computed from integer offsets so that they
are exactly symmetric.  Domains are described in units of 1/16 so that the
dyadic lattices ``n = 17, 33, 65`` resolve them exactly.
"""
from __future__ import annotations

import os
from typing import Optional

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import shortest_path

from .errors import ResolutionTooLarge, UnknownGenerator
from .space import DomainSpec, MetricMeasureSpace, build_space, domain_from_mask

DEFAULT_MAX_POINTS = 4096
MAX_POINTS_ENV = "REFLEKT_MAX_POINTS"

# slit columns (x, in sixteenths) and whether the slit hangs from the top
SLITS = ((5, False), (7, True), (9, False), (11, True))
TEETH = ((3, 5), (7, 9), (11, 13))


def max_points(override: Optional[int] = None) -> int:
    if override is not None:
        return int(override)
    env = os.environ.get(MAX_POINTS_ENV)
    return int(env) if env else DEFAULT_MAX_POINTS


def _check_size(n_points: int, cap: Optional[int]):
    cap = max_points(cap)
    if n_points > cap:
        raise ResolutionTooLarge(f"{n_points} points requested, cap is {cap} (set {MAX_POINTS_ENV} to raise it)")


def _lattice_space(ij: np.ndarray, h: float, mass: float) -> MetricMeasureSpace:
    off = ij[:, None, :] - ij[None, :, :]
    d = h * np.sqrt((off.astype(float) ** 2).sum(-1))
    return build_space(range(len(ij)), d, np.full(len(ij), mass), coords=ij * h)


def _in16(k: np.ndarray, lo16: float, hi16: float, n: int) -> np.ndarray:
    """Lattice index ``k`` (spacing 1/(n-1)) lies in ``[lo16/16, hi16/16]``."""
    # compare k / (n - 1) with a / 16 in integers: 16 k vs a (n - 1)
    return (16 * k >= lo16 * (n - 1)) & (16 * k <= hi16 * (n - 1))


def path_interval(N: int = 101, D=(0.25, 0.75), max_points_override=None):
    """Path ``{k / (N - 1)}`` on [0, 1] with mass ``1 / (N - 1)``; ``D`` a closed sub-interval."""
    N = int(N)
    if N < 2:
        raise ValueError("path_interval needs N >= 2")
    _check_size(N, max_points_override)
    h = 1.0 / (N - 1)
    k = np.arange(N)
    d = h * np.abs(k[:, None] - k[None, :]).astype(float)
    space = build_space(range(N), d, np.full(N, h), coords=(k * h)[:, None])
    a, b = D
    mask = (k * h >= a - 1e-12) & (k * h <= b + 1e-12)
    return space, domain_from_mask(space, mask)


def _grid(n: int, cap):
    n = int(n)
    if n < 2:
        raise ValueError("grid generators need n >= 2")
    _check_size(n * n, cap)
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    ij = np.stack([i.ravel(), j.ravel()], axis=1)
    h = 1.0 / (n - 1)
    return ij, h


def grid_square(n: int = 17, D=(3, 13), max_points_override=None):
    """Square lattice on [0,1]^2; ``D`` the closed square ``[D0/16, D1/16]^2``."""
    ij, h = _grid(n, max_points_override)
    space = _lattice_space(ij, h, h * h)
    mask = _in16(ij[:, 0], *D, n) & _in16(ij[:, 1], *D, n)
    return space, domain_from_mask(space, mask)


def _slit_mask(ij: np.ndarray, n: int) -> np.ndarray:
    """Points removed by the slits: one lattice column each, alternating from bottom and top."""
    removed = np.zeros(len(ij), dtype=bool)
    for x16, from_top in SLITS:
        col = 16 * ij[:, 0] == x16 * (n - 1)
        ylo, yhi = (6, 13) if from_top else (3, 10)
        removed |= col & _in16(ij[:, 1], ylo, yhi, n)
    return removed


def grid_with_slits(n: int = 17, max_points_override=None):
    """Square domain with four thin slits cut alternately from the bottom and top edges."""
    if (n - 1) % 16:
        raise ValueError("grid_with_slits needs n - 1 divisible by 16 so the slits sit on lattice columns")
    ij, h = _grid(n, max_points_override)
    space = _lattice_space(ij, h, h * h)
    square = _in16(ij[:, 0], 3, 13, n) & _in16(ij[:, 1], 3, 13, n)
    return space, domain_from_mask(space, square & ~_slit_mask(ij, n))


def comb(n: int = 17, max_points_override=None):
    """Comb-shaped domain: a horizontal bar with three vertical teeth."""
    ij, h = _grid(n, max_points_override)
    space = _lattice_space(ij, h, h * h)
    x, y = ij[:, 0], ij[:, 1]
    bar = _in16(x, 3, 13, n) & _in16(y, 3, 6, n)
    teeth = np.zeros(len(ij), dtype=bool)
    for lo, hi in TEETH:
        teeth |= _in16(x, lo, hi, n) & _in16(y, 6, 13, n)
    return space, domain_from_mask(space, bar | teeth)


def _carpet_cells(level: int) -> np.ndarray:
    side = 3**level
    i, j = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
    keep = np.ones_like(i, dtype=bool)
    a, b = i.copy(), j.copy()
    for _ in range(level):
        keep &= ~((a % 3 == 1) & (b % 3 == 1))
        a //= 3
        b //= 3
    return np.stack([i[keep], j[keep]], axis=1)


def carpet_prefractal(level: int = 2, max_points_override=None):
    """Level-``level`` Sierpinski carpet cells with the graph metric of 4-adjacency.

    Distances are hop counts times ``3**-level``; each cell carries mass
    ``8**-level``.  ``D`` is the set of cells whose centre has x < 1/2.
    """
    level = int(level)
    if level < 1:
        raise ValueError("carpet level must be >= 1")
    _check_size(8**level, max_points_override)
    cells = _carpet_cells(level)
    side = 3**level
    lookup = -np.ones((side, side), dtype=int)
    lookup[cells[:, 0], cells[:, 1]] = np.arange(len(cells))
    rows, cols = [], []
    for di, dj in ((1, 0), (0, 1)):
        ni, nj = cells[:, 0] + di, cells[:, 1] + dj
        ok = (ni < side) & (nj < side)
        nb = np.full(len(cells), -1)
        nb[ok] = lookup[ni[ok], nj[ok]]
        good = nb >= 0
        rows.append(np.flatnonzero(good))
        cols.append(nb[good])
    rows, cols = np.concatenate(rows), np.concatenate(cols)
    adj = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(cells),) * 2).tocsr()
    hops = shortest_path(adj, method="D", directed=False, unweighted=True)
    h = 3.0**-level
    space = build_space(range(len(cells)), hops * h, np.full(len(cells), 8.0**-level), coords=(cells + 0.5) * h)
    mask = 2 * cells[:, 0] + 1 < side  # centre x < 1/2
    return space, domain_from_mask(space, mask)


GENERATORS = {
    "path_interval": path_interval,
    "grid_square": grid_square,
    "grid_with_slits": grid_with_slits,
    "comb": comb,
    "carpet_prefractal": carpet_prefractal,
}


def generate_example(name: str, params: Optional[dict] = None, max_points_override=None):
    """Build ``(space, domain)`` for a named instance.

    ``params`` holds the generator's keyword arguments plus the optional flag
    ``full_domain`` which replaces ``D`` by the whole space.
    """
    if name not in GENERATORS:
        raise UnknownGenerator(f"unknown generator {name!r}; choose from {sorted(GENERATORS)}")
    params = dict(params or {})
    full = bool(params.pop("full_domain", False))
    if "D" in params and isinstance(params["D"], list):
        params["D"] = tuple(params["D"])
    space, domain = GENERATORS[name](**params, max_points_override=max_points_override)
    if full:
        domain = domain_from_mask(space, np.ones(space.n, dtype=bool))
    return space, domain


__all__ = ["generate_example", "GENERATORS", "max_points", "DomainSpec"]
