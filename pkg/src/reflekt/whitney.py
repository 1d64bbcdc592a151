"""Quarter-Whitney covers of the exterior of a domain.

Balls ``B_i = B(x_i, r_i)`` with ``r_i = d(x_i, D) / 5`` are chosen greedily
from the exterior, farthest points first, subject to being pairwise disjoint
as point sets.  A rejected point ``x`` meets an earlier ball ``B_j`` with
``r_j >= r_x``, so ``d(x, x_j) < 2 r_j`` and the dilates ``(5/2) B_j`` cover.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import CoverageFailure, GeometryViolation
from .space import DomainSpec, MetricMeasureSpace, distance_to_set

EPSILON = 0.25
# relative slack for identities that hold exactly in real arithmetic but are
# evaluated in floating point (5 * (d / 5) == d)
METRIC_RTOL = 1e-12


@dataclass(frozen=True, eq=False)
class WhitneyCover:
    space: MetricMeasureSpace
    domain: DomainSpec
    centers: np.ndarray  # point indices x_i
    radii: np.ndarray  # r_i
    dist_to_domain: np.ndarray  # d(x, D) for every point
    epsilon: float = EPSILON
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def size(self) -> int:
        return len(self.centers)

    @property
    def lambda_set(self) -> np.ndarray:
        return lambda_index_set(self, self.domain)

    def membership(self, lam: float) -> np.ndarray:
        """Boolean ``(N, |I|)`` table of ``x in lam * B_i``."""
        key = ("member", float(lam))
        if key not in self._cache:
            m = self.space.dist[:, self.centers] < lam * self.radii[None, :]
            m.flags.writeable = False
            self._cache[key] = m
        return self._cache[key]

    def neighbors(self, lam: float) -> np.ndarray:
        """Boolean ``(|I|, |I|)`` table of ``lam B_i  &  lam B_j != {}``."""
        key = ("nbr", float(lam))
        if key not in self._cache:
            M = self.membership(lam).astype(np.float64)
            nb = (M.T @ M) > 0
            nb.flags.writeable = False
            self._cache[key] = nb
        return self._cache[key]

    def ball_mass(self, lam: float = 1.0) -> np.ndarray:
        return self.space.mass @ self.membership(lam)


def build_cover(space: MetricMeasureSpace, domain: DomainSpec) -> WhitneyCover:
    exterior = domain.exterior
    if exterior.size == 0:
        raise ValueError("the exterior of the domain is empty; nothing to cover")
    dD = distance_to_set(space, domain.mask)
    order = exterior[np.lexsort((exterior, -dD[exterior]))]
    occupied = np.zeros(space.n, dtype=bool)
    covered = np.zeros(space.n, dtype=bool)
    need = ~domain.mask
    centers, radii = [], []
    remaining = int(need.sum())
    for x in order:
        r = dD[x] / 5.0
        ball = space.dist[x] < r
        if (ball & occupied).any():
            continue
        centers.append(x)
        radii.append(r)
        occupied |= ball
        newly = (space.dist[x] < 2.5 * r) & need & ~covered
        covered |= newly
        remaining -= int(newly.sum())
        if remaining == 0:
            break
    if remaining:
        missing = np.flatnonzero(need & ~covered)
        raise CoverageFailure(f"{missing.size} exterior points are not covered, e.g. {space.points[missing[0]]!r}")
    dD.flags.writeable = False
    return WhitneyCover(
        space=space,
        domain=domain,
        centers=np.asarray(centers, dtype=int),
        radii=np.asarray(radii, dtype=float),
        dist_to_domain=dD,
    )


def lambda_index_set(cover: WhitneyCover, domain: Optional[DomainSpec] = None) -> np.ndarray:
    """Indices ``i`` with ``0 < r_i < diam(D) / 2``."""
    domain = cover.domain if domain is None else domain
    return np.flatnonzero((cover.radii > 0) & (cover.radii < domain.diam / 2))


@dataclass(frozen=True)
class GeometryReport:
    disjoint: bool
    distance_identity: bool
    covers: bool
    ratio_bounds: dict  # lam -> (min r_j/r_i, max r_j/r_i) over intersecting pairs
    max_degree: dict  # lam -> max #{j : lam B_i & lam B_j != {}}
    distance_band: dict  # lam -> (min d(x,D)/r_i, max d(x,D)/r_i) over x in lam B_i
    max_multiplicity: dict  # lam -> max #{i : x in lam B_i}
    far_counts: dict  # lam -> #{i : r_i < r, lam B_i not inside the s-neighbourhood}
    lambda_cover_ok: bool
    n_balls: int
    n_lambda: int


def verify_geometry(cover: WhitneyCover, lambdas=(2, 3, 4)) -> GeometryReport:
    """Check the disjointness/distance/covering properties and the dilate geometry, exhaustively."""
    sp, dD, c, r = cover.space, cover.dist_to_domain, cover.centers, cover.radii
    ext = ~cover.domain.mask

    M1 = cover.membership(1.0)
    counts = M1.sum(axis=1)
    if counts.max() > 1:
        x = int(np.argmax(counts))
        i, j = np.flatnonzero(M1[x])[:2]
        raise GeometryViolation("Whitney balls overlap", (int(i), int(j), sp.points[x]))
    err = np.abs(5 * r - dD[c])
    if (err > METRIC_RTOL * dD[c]).any():
        i = int(np.argmax(err))
        raise GeometryViolation("d(x_i, D) != 5 r_i", (i, i, sp.points[c[i]]))
    cov = cover.membership(2.5).any(axis=1)
    if (ext & ~cov).any():
        x = int(np.flatnonzero(ext & ~cov)[0])
        raise GeometryViolation("exterior point outside every (5/2)B_i", (-1, -1, sp.points[x]))

    ratio_bounds, degree, band, mult, far = {}, {}, {}, {}, {}
    for lam in lambdas:
        lo_c, hi_c = (5 - lam) / (5 + lam), (5 + lam) / (5 - lam)
        nb = cover.neighbors(lam)
        ii, jj = np.nonzero(nb)
        q = r[jj] / r[ii]
        bad = (q < lo_c) | (q > hi_c)
        if bad.any():
            k = int(np.flatnonzero(bad)[0])
            M = cover.membership(lam)
            x = int(np.flatnonzero(M[:, ii[k]] & M[:, jj[k]])[0])
            raise GeometryViolation(f"radius comparability fails for lambda={lam}", (int(ii[k]), int(jj[k]), sp.points[x]))
        ratio_bounds[lam] = (float(q.min()), float(q.max()))
        degree[lam] = int(nb.sum(axis=1).max())

        M = cover.membership(lam)
        xs, bs = np.nonzero(M)
        lo = (5 - lam) * r[bs]
        hi = (5 + lam) * r[bs]
        bad = (dD[xs] < lo) | (dD[xs] > hi)
        if bad.any():
            k = int(np.flatnonzero(bad)[0])
            raise GeometryViolation(f"distance band fails for lambda={lam}", (int(bs[k]), int(bs[k]), sp.points[xs[k]]))
        t = dD[xs] / r[bs]
        band[lam] = (float(t.min()), float(t.max()))
        mult[lam] = int(M.sum(axis=1).max())

        # finitely many balls that are small but reach beyond the s-neighbourhood of D
        s = cover.domain.diam
        rr = cover.domain.diam / 2
        outside = dD >= s
        reach = (M & outside[:, None]).any(axis=0)
        far[lam] = int(((r < rr) & reach).sum())

    lam_set = np.zeros(cover.size, dtype=bool)
    lam_set[lambda_index_set(cover)] = True
    near = ext & (dD < cover.domain.diam)
    in3 = (cover.membership(3.0)[:, lam_set]).any(axis=1)
    lambda_ok = bool(not (near & ~in3).any())
    if not lambda_ok:
        x = int(np.flatnonzero(near & ~in3)[0])
        raise GeometryViolation("near-domain exterior point outside every 3B_i with i in Lambda", (-1, -1, sp.points[x]))

    return GeometryReport(
        disjoint=True,
        distance_identity=True,
        covers=True,
        ratio_bounds=ratio_bounds,
        max_degree=degree,
        distance_band=band,
        max_multiplicity=mult,
        far_counts=far,
        lambda_cover_ok=lambda_ok,
        n_balls=cover.size,
        n_lambda=int(lam_set.sum()),
    )
