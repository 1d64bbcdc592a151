"""The Whitney extension operator and its local L^2 / energy bounds.

``Ext u = u`` on ``D`` and ``Ext u = sum_{i in Lambda} [u]_i psi_i`` outside,
where ``[u]_i`` is the ``f_i m``-weighted mean of ``u``.  The operator is
cached as a dense ``(N, |D|)`` matrix.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch, InvariantFailure, ZeroMass
from .kernel import JumpKernel, dirichlet_energy, phi_eval
from .partition import MassFunctions, PartitionOfUnity
from .whitney import WhitneyCover


@dataclass(frozen=True, eq=False)
class ExtensionOperator:
    cover: WhitneyCover
    partition: PartitionOfUnity
    mass_functions: MassFunctions
    means: np.ndarray  # (|Lambda|, |D|): row k gives [u]_{lam[k]} = means[k] @ u
    matrix: np.ndarray  # (N, |D|)
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def space(self):
        return self.cover.space

    @property
    def domain(self):
        return self.cover.domain

    def __call__(self, u):
        return extend(self, u)

    def pair_masks(self):
        """Boolean ``N x N`` masks of the near-diagonal, off-diagonal and cross pair sets."""
        if "pairs" not in self._cache:
            M4 = self.cover.membership(4.0).astype(np.float32)
            near = (M4 @ M4.T) > 0
            ext = ~self.domain.mask
            off = ext[:, None] & ext[None, :] & ~near
            cross = ext[:, None] & self.domain.mask[None, :]
            self._cache["pairs"] = (near, off, cross)
        return self._cache["pairs"]


def build_extension(cover: WhitneyCover, partition: PartitionOfUnity, mass_functions: MassFunctions) -> ExtensionOperator:
    space, domain = cover.space, cover.domain
    mf = mass_functions
    if (mf.integrals <= 0).any():
        raise ZeroMass("a mass function has zero integral")
    didx = domain.indices
    means = (mf.F[didx] * space.mass[didx, None]).T / mf.integrals[:, None]
    mat = np.zeros((space.n, didx.size))
    mat[didx, np.arange(didx.size)] = 1.0
    ext = np.flatnonzero(~domain.mask)
    mat[ext] = partition.psi[np.ix_(ext, mf.lam)] @ means
    means.flags.writeable = False
    mat.flags.writeable = False
    return ExtensionOperator(cover=cover, partition=partition, mass_functions=mf, means=means, matrix=mat)


def _on_domain(ext: ExtensionOperator, u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    nd = ext.domain.indices.size
    if u.shape == (nd,):
        return u
    if u.shape == (ext.space.n,):
        return u[ext.domain.indices]
    raise DimensionMismatch(f"expected {nd} values on D (or {ext.space.n} on the space), got {u.shape}")


def ball_mean(mass_functions: MassFunctions, u_full, i: int, mass) -> float:
    """``[u]_i = int f_i u dm / int f_i dm`` for cover index ``i``; ``u`` given on the whole space."""
    k = mass_functions.column(i)
    w = mass_functions.F[:, k] * mass
    tot = float(w.sum())
    if tot <= 0:
        raise ZeroMass(f"mass function {i} has zero integral")
    return float(w @ np.asarray(u_full, dtype=float)) / tot


def extend(ext: ExtensionOperator, u) -> np.ndarray:
    return ext.matrix @ _on_domain(ext, u)


# ---------------------------------------------------------------------------
# probe tables
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProbeTable:
    """Rows ``(center, radius, function, lhs, rhs)`` with the fitted constant ``max lhs / rhs``."""

    centers: np.ndarray
    radii: np.ndarray
    functions: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray

    @property
    def ratios(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            q = np.where(self.rhs > 0, self.lhs / np.where(self.rhs > 0, self.rhs, 1), np.where(self.lhs > 0, np.inf, 0.0))
        return q

    @property
    def vacuous(self) -> np.ndarray:
        return (self.lhs == 0) & (self.rhs == 0)

    @property
    def constant(self) -> float:
        q = self.ratios[~self.vacuous]
        return float(q.max()) if q.size else 0.0

    def constant_at(self, r: float) -> float:
        sel = (self.radii == r) & ~self.vacuous
        q = self.ratios[sel]
        return float(q.max()) if q.size else 0.0

    def sweep(self) -> dict:
        return {float(r): self.constant_at(r) for r in np.unique(self.radii)}

    def witness(self):
        q = np.where(self.vacuous, -np.inf, self.ratios)
        if q.size == 0:
            return None
        k = int(np.argmax(q))
        return (int(self.centers[k]), float(self.radii[k]), int(self.functions[k]))

    def holds(self, C: float | None = None) -> bool:
        C = self.constant if C is None else C
        return bool((self.lhs <= C * self.rhs * (1 + 1e-12) + 1e-300).all())


def _table(rows):
    if not rows:
        z = np.zeros(0)
        return ProbeTable(z.astype(int), z, z.astype(int), z, z)
    a = np.array(rows, dtype=float)
    return ProbeTable(a[:, 0].astype(int), a[:, 1], a[:, 2].astype(int), a[:, 3], a[:, 4])


def _functions_matrix(ext, us) -> np.ndarray:
    us = [_on_domain(ext, u) for u in us]
    return np.stack(us, axis=1)


def local_probes(space, domain, x0: int, r: float) -> np.ndarray:
    """Scale-adapted probes for the row ``(x0, r)``, as columns on ``D``.

    The indicator of ``B_D(x0, r)`` and the tent ``(1 - d(x0, .) / r)^+``.
    Global probes look nearly constant on small balls, so without these the
    per-radius suprema would be badly underestimated at fine scales.
    """
    d = space.dist[x0, domain.indices]
    return np.stack([(d < r).astype(float), np.maximum(1.0 - d / r, 0.0)], axis=1)


LOCAL_PROBE_NAMES = ("ball_indicator", "tent")
N_LOCAL_PROBES = len(LOCAL_PROBE_NAMES)


def _row_functions(ext, U, G, x0, r, local):
    if not local:
        return U, G
    L = local_probes(ext.space, ext.domain, x0, r)
    return np.hstack([U, L]), np.hstack([G, ext.matrix @ L])


def l2_locality_report(ext: ExtensionOperator, us, centers: Sequence[int], radii: Sequence[float], local: bool = True) -> ProbeTable:
    """``sum_{B(x0,r)} (Ext u)^2 m`` against ``sum_{B_D(x0,7r)} u^2 m`` for each probe.

    With ``local`` the functions of :func:`local_probes` are appended to
    ``us`` in every row (function indices ``len(us)`` and up).
    """
    if isinstance(us, np.ndarray) and us.ndim == 1:
        us = [us]
    U0 = _functions_matrix(ext, us)
    G0 = ext.matrix @ U0
    sp = ext.space
    mD = sp.mass[ext.domain.indices]
    rows = []
    for x0 in centers:
        for r in radii:
            U, G = _row_functions(ext, U0, G0, x0, r, local)
            b = sp.dist[x0] < r
            b7 = sp.dist[x0, ext.domain.indices] < 7 * r
            lhs = sp.mass[b] @ G[b] ** 2
            rhs = mD[b7] @ U[b7] ** 2
            for k in range(U.shape[1]):
                rows.append((x0, r, k, lhs[k], rhs[k]))
    return _table(rows)


def global_l2_ratio(ext: ExtensionOperator, u) -> float:
    u = _on_domain(ext, u)
    g = extend(ext, u)
    num = float(ext.space.mass @ g**2)
    den = float(ext.space.mass[ext.domain.indices] @ u**2)
    return num / den if den > 0 else 0.0


def _pair_energy(W, a, b, g):
    """``sum_{x in a, y in b} (g_x - g_y)^2 W_xy`` for boolean index masks, per column of ``g``.

    Evaluated on the sub-block with ``g`` shifted by a constant, which leaves
    the sum unchanged and keeps constant functions at exactly zero.
    """
    ia, ib = np.flatnonzero(a), np.flatnonzero(b)
    if ia.size == 0 or ib.size == 0:
        return np.zeros(g.shape[1])
    Wab = W[np.ix_(ia, ib)]
    return _block_energy(Wab, g[ia], g[ib])


def _block_energy(Wab, ga, gb):
    """Quadratic-form evaluation of the pair sum with a cancellation floor.

    Results below the rounding error are set to 0.  Two sources are
    accounted for: cancellation in the expansion (a small multiple of machine
    epsilon times the expanded terms) and the representation error of the
    values themselves (differences of order ``eps * max|g|``, which e.g. make
    the extension of a constant equal to that constant only up to rounding).
    """
    scale = np.maximum(np.abs(ga).max(axis=0), np.abs(gb).max(axis=0))
    c = ga[:1]
    ga, gb = ga - c, gb - c
    t1 = np.einsum("xk,x->k", ga**2, Wab.sum(axis=1))
    t2 = np.einsum("yk,y->k", gb**2, Wab.sum(axis=0))
    val = t1 + t2 - 2 * np.einsum("xk,xk->k", ga, Wab @ gb)
    noise = ENERGY_NOISE * (t1 + t2) + (VALUE_NOISE * scale) ** 2 * Wab.sum()
    return np.where(np.abs(val) <= noise, 0.0, val)


ENERGY_NOISE = 1e-13
VALUE_NOISE = 64 * np.finfo(float).eps


@dataclass(frozen=True)
class EnergySplitReport:
    near: ProbeTable  # O_d within B x B  vs  B_D(7r) x B_D(14r)
    off: ProbeTable  # O_f within B x B  vs  B_D(7r) x B_D(7r)
    cross: ProbeTable  # O_c within B x B  vs  B_D(7r) x B_D(r)
    combined: ProbeTable  # all of B x B  vs  B_D(7r) x B_D(14r)
    additivity_error: float  # max relative error of near + off + 2 cross = exterior-involved energy

    def constants(self) -> dict:
        return {k: getattr(self, k).constant for k in ("near", "off", "cross", "combined")}


def energy_split_report(ext: ExtensionOperator, kernel: JumpKernel, us, centers, radii, local: bool = True) -> EnergySplitReport:
    """Near/off/cross energies of ``Ext u`` in ``B(x0, r)`` against domain energies (see the fields)."""
    if isinstance(us, np.ndarray) and us.ndim == 1:
        us = [us]
    U0 = _functions_matrix(ext, us)
    G0 = ext.matrix @ U0
    sp, dmask = ext.space, ext.domain.mask
    W = kernel.weights
    near_m, off_m, _ = ext.pair_masks()
    rows = {k: [] for k in ("near", "off", "cross", "combined")}
    add_err = 0.0
    for x0 in centers:
        for r in radii:
            _, G = _row_functions(ext, U0, G0, x0, r, local)
            b = sp.dist[x0] < r
            ib = np.flatnonzero(b)
            Gb = G[ib]
            Wbb = W[np.ix_(ib, ib)]
            be = ~dmask[ib]
            bd = dmask[ib]
            nb = near_m[np.ix_(ib, ib)]
            # near / off within ext x ext of the ball
            iext = np.flatnonzero(be)
            if iext.size:
                Wee = Wbb[np.ix_(iext, iext)]
                ne = nb[np.ix_(iext, iext)]
                e_near = _block_energy(np.where(ne, Wee, 0.0), Gb[iext], Gb[iext])
                e_off = _block_energy(np.where(ne, 0.0, Wee), Gb[iext], Gb[iext])
            else:
                e_near = e_off = np.zeros(G.shape[1])
            idom = np.flatnonzero(bd)
            if iext.size and idom.size:
                e_cross = _block_energy(Wbb[np.ix_(iext, idom)], Gb[iext], Gb[idom])
            else:
                e_cross = np.zeros(G.shape[1])
            e_all = _block_energy(Wbb, Gb, Gb)
            e_dd = _block_energy(Wbb[np.ix_(idom, idom)], Gb[idom], Gb[idom]) if idom.size else 0.0 * e_all
            involved = e_all - e_dd
            split = e_near + e_off + 2 * e_cross
            # relative to the full ball energy, since e_all - e_dd cancels digits
            add_err = max(add_err, float((np.abs(split - involved) / np.maximum(np.abs(e_all), 1e-300)).max()))

            d7 = dmask & (sp.dist[x0] < 7 * r)
            d14 = dmask & (sp.dist[x0] < 14 * r)
            d1 = dmask & b
            r_near = _pair_energy(W, d7, d14, G)
            r_off = _pair_energy(W, d7, d7, G)
            r_cross = _pair_energy(W, d7, d1, G)
            for k in range(G.shape[1]):
                rows["near"].append((x0, r, k, e_near[k], r_near[k]))
                rows["off"].append((x0, r, k, e_off[k], r_off[k]))
                rows["cross"].append((x0, r, k, e_cross[k], r_cross[k]))
                rows["combined"].append((x0, r, k, e_all[k], r_near[k]))
    return EnergySplitReport(
        near=_table(_clean(rows["near"])),
        off=_table(_clean(rows["off"])),
        cross=_table(_clean(rows["cross"])),
        combined=_table(_clean(rows["combined"])),
        additivity_error=add_err,
    )


def _clean(rows, floor=0.0):
    # energies are sums of nonnegative terms; clamp the rounding noise of the
    # quadratic-form evaluation at zero
    return [(a, b, c, max(d, floor), max(e, floor)) for a, b, c, d, e in rows]


def extension_energy_bound(ext: ExtensionOperator, kernel: JumpKernel, u, reflected=None):
    """``(E_1(Ext u), bar E_1(u), ratio)`` with ``E_1 = E + ||.||^2``."""
    u = _on_domain(ext, u)
    g = extend(ext, u)
    amb = dirichlet_energy(kernel, g) + float(ext.space.mass @ g**2)
    idx = ext.domain.indices
    W = kernel.weights[np.ix_(idx, idx)]
    du = u[:, None] - u[None, :]
    refl = 0.5 * float(np.sum(W * du * du)) + float(ext.space.mass[idx] @ u**2)
    ratio = amb / refl if refl > 0 else 0.0
    return amb, refl, ratio


# ---------------------------------------------------------------------------
# exact index-set containments and pointwise geometry
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ContainmentReport:
    within_7r: bool  # {i : 3B_i meets B(x0,r)} inside {i : supp f_i in B(x0,7r)}, all x0 in D, all r > 0
    within_14r: bool  # same with 4B_i and 14r
    worst_7: float  # max over (x0, i) of sup_{supp f_i} d(x0, .) / (7 * dist(x0, 3B_i))
    worst_14: float
    witness_7: tuple
    witness_14: tuple


def check_containments(ext: ExtensionOperator) -> ContainmentReport:
    """Both support containments, for every centre in ``D`` and every radius at once.

    For fixed ``x0`` and ``i`` the containment holds for all ``r > 0`` exactly
    when ``max_{supp f_i} d(x0, .) < 7 r`` for every ``r > min_{3B_i} d(x0, .)``,
    i.e. ``max_supp <= 7 * min_3B``.
    """
    sp, cover, mf = ext.space, ext.cover, ext.mass_functions
    didx = ext.domain.indices
    out = {}
    for lam_, fac in ((3.0, 7.0), (4.0, 14.0)):
        M = cover.membership(lam_)
        worst, wit = 0.0, ()
        for k, i in enumerate(mf.lam):
            supp = np.flatnonzero(mf.F[:, k] > 0)
            ball = np.flatnonzero(M[:, i])
            far = sp.dist[np.ix_(didx, supp)].max(axis=1)
            near = sp.dist[np.ix_(didx, ball)].min(axis=1)
            q = far / (fac * near)
            j = int(np.argmax(q))
            if q[j] > worst:
                worst, wit = float(q[j]), (sp.points[didx[j]], int(i))
        out[fac] = (worst, wit)
    return ContainmentReport(
        within_7r=out[7.0][0] <= 1.0,
        within_14r=out[14.0][0] <= 1.0,
        worst_7=out[7.0][0],
        worst_14=out[14.0][0],
        witness_7=out[7.0][1],
        witness_14=out[14.0][1],
    )


@dataclass(frozen=True)
class PointwiseGeometryReport:
    separation_ok: bool  # d(x,y) >= max(r_i, r_j)/9 for x in 3B_i, y in 3B_j \ 4B_i
    separation_margin: float  # min of d(x,y) / (max(r_i,r_j)/9)
    domain_distance_ok: bool  # d(x,y) >= (2/5) d(x_i, y) for x in 3B_i, y in D
    domain_distance_margin: float
    support_distance_ok: bool  # d(x_i, y) >= (5/14) d(z, y) for z in supp f_i, y in D
    support_distance_margin: float


def check_pointwise_geometry(ext: ExtensionOperator) -> PointwiseGeometryReport:
    sp, cover, mf = ext.space, ext.cover, ext.mass_functions
    r, c = cover.radii, cover.centers
    M3, M4 = cover.membership(3.0), cover.membership(4.0)
    dmask = ext.domain.mask
    didx = ext.domain.indices
    # largest radius among the 3-dilates containing each point (worst j for the bound)
    big_r = np.where(M3, r[None, :], 0.0).max(axis=1)
    in_any3 = M3.any(axis=1)
    sep = np.inf
    dom = np.inf
    for i in range(cover.size):
        xs = np.flatnonzero(M3[:, i])
        ys = np.flatnonzero(in_any3 & ~M4[:, i])
        if ys.size:
            bound = np.maximum(r[i], big_r[ys]) / 9.0
            sep = min(sep, float((sp.dist[np.ix_(xs, ys)] / bound[None, :]).min()))
        q = sp.dist[np.ix_(xs, didx)] / (0.4 * sp.dist[c[i], didx][None, :])
        dom = min(dom, float(q.min()))
    sup = np.inf
    for k, i in enumerate(mf.lam):
        supp = np.flatnonzero(mf.F[:, k] > 0)
        dz = sp.dist[np.ix_(supp, didx)]
        with np.errstate(divide="ignore"):
            q = sp.dist[c[i], didx][None, :] / ((5.0 / 14.0) * dz)
        sup = min(sup, float(q.min()))
    return PointwiseGeometryReport(
        separation_ok=sep >= 1.0,
        separation_margin=sep,
        domain_distance_ok=dom >= 1.0,
        domain_distance_margin=dom,
        support_distance_ok=sup >= 1.0,
        support_distance_margin=sup,
    )


# ---------------------------------------------------------------------------
# probe sets and test functions
# ---------------------------------------------------------------------------


def probe_centers(space, domain, count: int = 64, seed: int = 0) -> np.ndarray:
    """Mass-weighted sample of ``D`` without replacement, sorted."""
    idx = domain.indices
    if idx.size <= count:
        return idx.copy()
    rng = np.random.default_rng(seed)
    p = space.mass[idx] / space.mass[idx].sum()
    return np.sort(rng.choice(idx, size=count, replace=False, p=p))


def probe_radii(space, domain, lo_mult: float = 2.0, hi_frac: float = 0.5) -> np.ndarray:
    """Dyadic radii ``mesh * 2**j`` in ``[lo_mult * mesh, hi_frac * diam(D)]``."""
    return space.dyadic_radii(lo_mult * space.mesh, hi_frac * domain.diam)


def probe_functions(space, domain, seed: int = 0) -> list:
    """Eight functions on the whole space used to probe every inequality.

    constant 1; normalised distances to the two ends of a diameter of ``D``;
    a cosine of the first; a random sign pattern; indicators of the two halves
    of ``D`` split by the first distance; and the product of both distances.
    """
    idx = domain.indices
    sub = space.dist[np.ix_(idx, idx)]
    a, b = np.unravel_index(int(np.argmax(sub)), sub.shape)
    a, b = idx[a], idx[b]
    diam = max(domain.diam, space.mesh)
    la = space.dist[a] / diam
    lb = space.dist[b] / diam
    rng = np.random.default_rng(seed)
    signs = rng.choice([-1.0, 1.0], size=space.n)
    half = (la < 0.5).astype(float)
    return [
        np.ones(space.n),
        la,
        lb,
        np.cos(np.pi * la),
        signs,
        half,
        1.0 - half,
        la * lb,
    ]


PROBE_FUNCTION_NAMES = ("one", "dist_a", "dist_b", "cos_a", "signs", "half_a", "half_b", "product")
