"""Finite metric measure spaces, balls, greedy nets and volume regularity.

A space is stored as a dense distance table plus a mass vector.  Balls are
open, ``B(x, r) = {y : d(x, y) < r}``, everywhere in the package.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Hashable, Iterable, Optional, Sequence

import numpy as np

from .errors import EmptyDomain, MetricAxiomViolation, NonPositiveMass, UnknownPoint

# Relative slack allowed in the triangle inequality check.  Distances built
# from floating point coordinates can miss collinear equality by an ulp.
TRIANGLE_RTOL = 1e-12
EXHAUSTIVE_TRIANGLE_MAX_N = 512
SAMPLED_TRIANGLES = 200_000


def _readonly(a):
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class MetricMeasureSpace:
    """Finite metric measure space ``(X, d, m)``.

    Point identifiers are kept in ``points``; every array in the package is
    indexed by position in that tuple.
    """

    points: tuple
    dist: np.ndarray
    mass: np.ndarray
    diam: float
    mesh: float
    coords: Optional[np.ndarray] = None
    _index: dict = field(default_factory=dict, repr=False)

    @property
    def n(self) -> int:
        return len(self.points)

    @property
    def total_mass(self) -> float:
        return float(self.mass.sum())

    def index(self, point: Hashable) -> int:
        try:
            return self._index[point]
        except KeyError:
            raise UnknownPoint(point) from None

    def ball_mask(self, i: int, r: float) -> np.ndarray:
        return self.dist[i] < r

    def volume(self, i: int, r: float) -> float:
        return float(self.mass[self.dist[i] < r].sum())

    def volumes(self, r: float) -> np.ndarray:
        """``V(x, r)`` for every centre ``x``."""
        return (self.dist < r) @ self.mass

    def nearest_neighbor_distance(self) -> np.ndarray:
        """``d(x, X \\ {x})`` for every ``x``."""
        d = self.dist + np.where(np.eye(self.n, dtype=bool), np.inf, 0.0)
        return d.min(axis=1)

    def dyadic_radii(self, lo: Optional[float] = None, hi: Optional[float] = None) -> np.ndarray:
        """Radii ``mesh * 2**j`` lying in ``[lo, hi]`` (defaults: mesh, diam)."""
        lo = self.mesh if lo is None else lo
        hi = self.diam if hi is None else min(hi, self.diam)
        out = []
        r = self.mesh
        while r <= hi * (1 + 1e-12):
            if r >= lo * (1 - 1e-12):
                out.append(r)
            r *= 2.0
        return np.asarray(out, dtype=float)


@dataclass(frozen=True, eq=False)
class DomainSpec:
    """Subset ``D`` of a space.  The closure of ``D`` is identified with ``D``."""

    mask: np.ndarray
    indices: np.ndarray
    diam: float

    @property
    def exterior(self) -> np.ndarray:
        return np.flatnonzero(~self.mask)

    @property
    def is_proper(self) -> bool:
        return bool((~self.mask).any())

    def m0(self, space: MetricMeasureSpace) -> np.ndarray:
        """The measure ``m`` restricted to ``D`` (zero off ``D``)."""
        return np.where(self.mask, space.mass, 0.0)


def _metric_table(points, metric) -> np.ndarray:
    if callable(metric):
        n = len(points)
        d = np.zeros((n, n))
        for a in range(n):
            for b in range(a + 1, n):
                d[a, b] = d[b, a] = float(metric(points[a], points[b]))
        return d
    d = np.array(metric, dtype=float)
    if d.shape != (len(points), len(points)):
        raise ValueError(f"metric table has shape {d.shape}, expected {(len(points),) * 2}")
    return d


def _check_triangles(points, d, rng_seed=0):
    n = d.shape[0]
    if n <= EXHAUSTIVE_TRIANGLE_MAX_N:
        for y in range(n):
            # d(x, z) <= d(x, y) + d(y, z) for all x, z through the pivot y
            bound = d[:, y][:, None] + d[y, :][None, :]
            bad = d > bound * (1 + TRIANGLE_RTOL)
            if bad.any():
                x, z = np.argwhere(bad)[0]
                raise MetricAxiomViolation(
                    f"triangle inequality fails for ({points[x]!r}, {points[y]!r}, {points[z]!r})",
                    (points[x], points[y], points[z]),
                )
        return
    rng = np.random.default_rng(rng_seed)
    x, y, z = rng.integers(0, n, size=(3, SAMPLED_TRIANGLES))
    bad = d[x, z] > (d[x, y] + d[y, z]) * (1 + TRIANGLE_RTOL)
    if bad.any():
        k = int(np.flatnonzero(bad)[0])
        raise MetricAxiomViolation(
            "triangle inequality fails (sampled)",
            (points[x[k]], points[y[k]], points[z[k]]),
        )


def build_space(
    points: Sequence[Hashable],
    metric,
    mass,
    coords=None,
) -> MetricMeasureSpace:
    """Validate and freeze a finite metric measure space.

    Parameters
    ----------
    points : sequence of hashable identifiers (at least two).
    metric : ``(N, N)`` array or a callable ``metric(a, b)`` on identifiers.
    mass : per-point weights, all strictly positive.
    coords : optional ``(N, k)`` embedding, only used by test functions and plots.

    Raises
    ------
    NonPositiveMass, MetricAxiomViolation
    """
    points = tuple(points)
    if len(points) < 2:
        raise ValueError("a space needs at least two points")
    index = {p: k for k, p in enumerate(points)}
    if len(index) != len(points):
        raise ValueError("point identifiers must be unique")
    mass = np.asarray(mass, dtype=float).reshape(-1)
    if mass.shape != (len(points),):
        raise ValueError("mass must have one entry per point")
    if not np.all(mass > 0):
        k = int(np.flatnonzero(~(mass > 0))[0])
        raise NonPositiveMass(f"point {points[k]!r} has mass {mass[k]}")

    d = _metric_table(points, metric)
    if not np.all(np.isfinite(d)) or (d < 0).any():
        a, b = np.argwhere(~np.isfinite(d) | (d < 0))[0]
        raise MetricAxiomViolation("distances must be finite and nonnegative", (points[a], points[b]))
    if not np.array_equal(d, d.T):
        a, b = np.argwhere(d != d.T)[0]
        raise MetricAxiomViolation(f"asymmetric distance between {points[a]!r} and {points[b]!r}", (points[a], points[b]))
    if np.any(np.diag(d) != 0):
        a = int(np.flatnonzero(np.diag(d) != 0)[0])
        raise MetricAxiomViolation(f"d(x, x) != 0 at {points[a]!r}", (points[a], points[a]))
    off = ~np.eye(len(points), dtype=bool)
    if np.any(d[off] == 0):
        a, b = np.argwhere((d == 0) & off)[0]
        raise MetricAxiomViolation(
            f"distinct points {points[a]!r} and {points[b]!r} at distance 0", (points[a], points[b], points[b])
        )
    _check_triangles(points, d)

    if coords is not None:
        coords = _readonly(np.asarray(coords, dtype=float).reshape(len(points), -1))
    return MetricMeasureSpace(
        points=points,
        dist=_readonly(d),
        mass=_readonly(mass),
        diam=float(d.max()),
        mesh=float(d[off].min()),
        coords=coords,
        _index=index,
    )


def make_domain(space: MetricMeasureSpace, interior: Iterable[Hashable]) -> DomainSpec:
    """Build ``D`` from point identifiers."""
    idx = sorted({space.index(p) for p in interior})
    if not idx:
        raise EmptyDomain("the domain has no points")
    return domain_from_mask(space, np.isin(np.arange(space.n), idx))


def domain_from_mask(space: MetricMeasureSpace, mask) -> DomainSpec:
    mask = np.asarray(mask, dtype=bool).copy()
    if mask.shape != (space.n,):
        raise ValueError("domain mask must have one entry per point")
    if not mask.any():
        raise EmptyDomain("the domain has no points")
    indices = np.flatnonzero(mask)
    diam = float(space.dist[np.ix_(indices, indices)].max())
    return DomainSpec(mask=_readonly(mask), indices=_readonly(indices), diam=diam)


def restrict_space(space: MetricMeasureSpace, domain: DomainSpec) -> MetricMeasureSpace:
    """``(D, d, m0)`` as a space of its own."""
    idx = domain.indices
    coords = None if space.coords is None else space.coords[idx]
    sub = np.asarray(space.dist[np.ix_(idx, idx)])
    return build_space([space.points[i] for i in idx], sub, space.mass[idx], coords=coords)


def distance_to_set(space: MetricMeasureSpace, mask) -> np.ndarray:
    """``d(x, A)`` for all ``x``; ``A`` given as a boolean mask."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise EmptyDomain("distance to an empty set")
    return space.dist[:, mask].min(axis=1)


def ball_query(space: MetricMeasureSpace, x: Hashable, r: float) -> list:
    """Identifiers of the open ball ``{y : d(x, y) < r}``, in index order."""
    if not r > 0:
        raise ValueError("radius must be positive")
    i = space.index(x)
    return [space.points[k] for k in np.flatnonzero(space.dist[i] < r)]


def _greedy_net_idx(space: MetricMeasureSpace, members: np.ndarray, r: float) -> np.ndarray:
    centers = []
    covered = np.zeros(space.n, dtype=bool)
    for k in members:
        if covered[k]:
            continue
        centers.append(k)
        covered |= space.dist[k] < r
    return np.asarray(centers, dtype=int)


def greedy_net(space: MetricMeasureSpace, subset: Iterable[Hashable], r: float) -> list:
    """Greedy ``r``-net of ``subset``, scanning identifiers in index order.

    A point becomes a centre when it lies outside every open ball of radius
    ``r`` around earlier centres, so centres are pairwise at distance ``>= r``
    and the open balls ``B(x_i, r)`` cover the subset.
    """
    if not r > 0:
        raise ValueError("radius must be positive")
    members = np.asarray(sorted({space.index(p) for p in subset}), dtype=int)
    if members.size == 0:
        raise ValueError("greedy_net needs a nonempty subset")
    return [space.points[k] for k in _greedy_net_idx(space, members, r)]


def net_overlap(space: MetricMeasureSpace, centers: Sequence[Hashable], radius: float) -> int:
    """Largest number of balls ``B(c, radius)`` containing a single point."""
    idx = [space.index(c) for c in centers]
    return int((space.dist[:, idx] < radius).sum(axis=1).max())


def net_size_bound(c1: float, d1: float, diam_e: float, r: float) -> float:
    return c1 * (1 + 4 * diam_e / r) ** d1


def overlap_bound(c1: float, d1: float, eta: float) -> float:
    return c1 * (2 * eta + 1) ** d1


# ---------------------------------------------------------------------------
# volume regularity
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DoublingReport:
    c1: float
    d1: float
    c1_witness: Optional[tuple]  # (x, r, R)
    doubling_constant: float
    doubling_witness: Optional[tuple]  # (x, r)
    qrvd_lambda0: float
    qrvd_C: float
    qrvd_witness: Optional[tuple]  # (x, r)
    ahlfors_cD: Optional[float] = None
    ahlfors_witness: Optional[tuple] = None
    radii: tuple = ()

    def reevaluate(self, space: MetricMeasureSpace) -> dict:
        """Recompute every constant from its witness."""
        out = {}
        if self.c1_witness is not None:
            x, r, big = self.c1_witness
            i = space.index(x)
            out["c1"] = space.volume(i, big) / space.volume(i, r) / (big / r) ** self.d1
        if self.doubling_witness is not None:
            x, r = self.doubling_witness
            i = space.index(x)
            out["doubling_constant"] = space.volume(i, 2 * r) / space.volume(i, r)
        if self.qrvd_witness is not None:
            x, r = self.qrvd_witness
            i = space.index(x)
            out["qrvd_C"] = space.volume(i, self.qrvd_lambda0 * r) / space.volume(i, r)
        return out


@dataclass(frozen=True)
class AhlforsReport:
    c_D: float
    witness: Optional[tuple]  # (x, r)
    boundary_mass_ok: bool
    radii: tuple = ()


def _volume_table(space: MetricMeasureSpace, radii) -> np.ndarray:
    return np.stack([space.volumes(r) for r in radii], axis=1) if len(radii) else np.zeros((space.n, 0))


def _fit_growth_exponent(space, radii, vol) -> float:
    """Largest ``log2 V(x, 2r) / V(x, r)`` over the bulk range of scales.

    The bulk range ``[4 mesh, diam / 4]`` drops the lattice-quantised small
    balls and the saturated large ones; when it holds no (r, 2r) pair every
    available pair is used.
    """
    lo, hi = 4 * space.mesh, space.diam / 4
    pairs = [(k, k + 1) for k in range(len(radii) - 1)]
    bulk = [(a, b) for a, b in pairs if radii[a] >= lo * (1 - 1e-12) and radii[b] <= hi * (1 + 1e-12)]
    use = bulk or pairs
    if not use:
        return 0.0
    return float(max(np.log2(vol[:, b] / vol[:, a]).max() for a, b in use))


def check_doubling(space: MetricMeasureSpace, domain: Optional[DomainSpec] = None) -> DoublingReport:
    """Fit the volume doubling and quasi-reverse doubling constants.

    ``d1`` is the bulk growth exponent; ``c1`` is then the smallest constant
    with ``V(x, R) / V(x, r) <= c1 (R / r) ** d1`` over all centres and all
    dyadic ``r <= R`` in ``[mesh, diam]``.
    """
    radii = space.dyadic_radii()
    vol = _volume_table(space, radii)
    d1 = _fit_growth_exponent(space, radii, vol)

    c1, c1_w = 1.0, None
    dbl, dbl_w = 1.0, None
    for a in range(len(radii)):
        for b in range(a, len(radii)):
            ratio = vol[:, b] / vol[:, a]
            scaled = ratio / (radii[b] / radii[a]) ** d1
            k = int(np.argmax(scaled))
            if scaled[k] > c1 or c1_w is None:
                c1, c1_w = float(scaled[k]), (space.points[k], float(radii[a]), float(radii[b]))
            if b == a + 1 and ratio.max() > dbl:
                k = int(np.argmax(ratio))
                dbl, dbl_w = float(ratio[k]), (space.points[k], float(radii[a]))

    nn = space.nearest_neighbor_distance()
    lam0, q_c, q_w = 2.0, float("inf"), None
    for lam in (2.0, 4.0, 8.0):
        best, best_w = float("inf"), None
        for a, r in enumerate(radii):
            if not r < space.diam / lam:
                continue
            ok = nn <= r
            if not ok.any():
                continue
            ratio = space.volumes(lam * r)[ok] / vol[ok, a]
            k = int(np.argmin(ratio))
            if ratio[k] < best:
                best, best_w = float(ratio[k]), (space.points[np.flatnonzero(ok)[k]], float(r))
        lam0, q_c, q_w = lam, best, best_w
        if best > 1:
            break

    cd = cd_w = None
    if domain is not None:
        ah = check_ahlfors(space, domain)
        cd, cd_w = ah.c_D, ah.witness
    return DoublingReport(
        c1=c1,
        d1=d1,
        c1_witness=c1_w,
        doubling_constant=dbl,
        doubling_witness=dbl_w,
        qrvd_lambda0=lam0,
        qrvd_C=q_c,
        qrvd_witness=q_w,
        ahlfors_cD=cd,
        ahlfors_witness=cd_w,
        radii=tuple(float(r) for r in radii),
    )


def check_ahlfors(space: MetricMeasureSpace, domain: DomainSpec) -> AhlforsReport:
    """Worst ratio ``m(B(x, r) & D) / m(B(x, r))`` over ``x`` in ``D`` and dyadic ``r < diam(D) / 2``."""
    if domain is None or not np.asarray(domain.mask).any():
        raise EmptyDomain("check_ahlfors needs a nonempty domain")
    m0 = domain.m0(space)
    # the boundary is empty in the finite model, so m0 must agree with m on D exactly
    boundary_ok = bool(np.array_equal(m0[domain.mask], space.mass[domain.mask]))
    radii = [r for r in space.dyadic_radii() if r < domain.diam / 2]
    c_d, wit = 1.0, None
    rows = domain.indices
    for r in radii:
        inside = space.dist[rows] < r
        ratio = (inside @ m0) / (inside @ space.mass)
        k = int(np.argmin(ratio))
        if ratio[k] < c_d or wit is None:
            c_d, wit = float(ratio[k]), (space.points[rows[k]], float(r))
    return AhlforsReport(c_D=c_d, witness=wit, boundary_mass_ok=boundary_ok, radii=tuple(radii))
