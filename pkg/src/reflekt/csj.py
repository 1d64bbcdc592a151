"""Cutoff Sobolev inequalities: ball form, annulus form and the reflected form.

Ball form, at scale ``r`` with cutoff ``phi`` for ``B(x0, r) in B(x0, 2r)``::

    sum_{x, y in B(x0, 3r)} f(x)^2 (phi(x) - phi(y))^2 w(x, y)
        <= C1 * sum_{x, y in B(x0, lam r)} (f(x) - f(y))^2 w(x, y)
         + C2 / phi(r) * sum_{B(x0, lam r)} f^2 m

Annulus form, with cutoff for ``B(x0, R) in B(x0, R + r)`` and ``C0 = 1``::

    sum_{x in B(x0, R + 2r), y} f(x)^2 (phi(x) - phi(y))^2 w(x, y)
        <= C1 * sum_{x in U, y in U*} (f(x) - f(y))^2 w(x, y)
         + C2 / phi(r) * sum_{B(x0, R + 2r)} f^2 m

with ``U = B(R + r) - B(R)`` and ``U* = B(R + 2r) - B(R - r)``.  All pair sums
run over ordered pairs.  Constants are fitted over rows (centre, radii, test
function) in two ways: Pareto pairs ``(C1, C2)`` on a fixed ``C1`` grid, and a
single joint constant ``K`` with ``lhs <= K (energy + mass / phi(r))``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionMismatch, InvalidCutoff
from .extension import ExtensionOperator, _block_energy
from .kernel import JumpKernel, ReflectedForm, phi_eval, tail_masses
from .partition import solve_equilibrium_potential
from .space import DomainSpec, MetricMeasureSpace, _greedy_net_idx

LAMBDA = 3.0
C1_GRID = (1.0, 4.0)
RADIUS_FRACTION = 0.25  # r < RADIUS_FRACTION * diam
CUTOFF_TOL = 0.0  # boundary conditions are exact


# ---------------------------------------------------------------------------
# carre du champ
# ---------------------------------------------------------------------------


def carre_du_champ(kernel: JumpKernel, u, v=None) -> np.ndarray:
    """Density of ``Gamma(u, v)`` against ``m``: ``sum_y (u(x)-u(y)) (v(x)-v(y)) J(x, y) m(y)``."""
    u = np.asarray(u, dtype=float)
    if u.shape != (kernel.n,):
        raise DimensionMismatch(f"expected {kernel.n} values, got {u.shape}")
    v = u if v is None else np.asarray(v, dtype=float)
    if v.shape != (kernel.n,):
        raise DimensionMismatch(f"expected {kernel.n} values, got {v.shape}")
    # pairwise differences: the expanded quadratic cancels badly and can go negative
    du = u[:, None] - u[None, :]
    dv = du if v is u else v[:, None] - v[None, :]
    gm = np.einsum("xy,xy->x", kernel.weights, du * dv)
    return gm / kernel.space.mass


def _gamma_mass(kernel: JumpKernel, phi: np.ndarray, rows: np.ndarray, cols: Optional[np.ndarray] = None) -> np.ndarray:
    """``a(x) = sum_{y in cols} (phi(x) - phi(y))^2 w(x, y)`` for ``x`` in ``rows``, computed pairwise."""
    cols = np.arange(kernel.n) if cols is None else cols
    d = phi[rows][:, None] - phi[cols][None, :]
    return np.einsum("xy,xy->x", kernel.weights[np.ix_(rows, cols)], d * d)


# ---------------------------------------------------------------------------
# cutoffs
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CutoffCandidate:
    values: np.ndarray
    x0: int
    inner: float  # radius of the set where the cutoff is 1
    outer: float  # radius outside which it is 0
    provenance: str  # "equilibrium" or "composite"
    C0: float = 1.0
    parts: dict = field(default_factory=dict, repr=False)

    def violations(self, space: MetricMeasureSpace) -> dict:
        d = space.dist[self.x0]
        v = self.values
        return {
            "range": int(((v < 0) | (v > 1)).sum()),
            "inner": int((d < self.inner)[v != 1.0].sum()),
            "outer": int((d >= self.outer)[v != 0.0].sum()),
        }

    def is_valid(self, space: MetricMeasureSpace) -> bool:
        return not any(self.violations(space).values())


def equilibrium_cutoff(kernel: JumpKernel, x0: int, r: float, outer_factor: float = 2.0) -> CutoffCandidate:
    """Equilibrium potential of ``B(x0, r)`` inside ``B(x0, outer_factor r)``."""
    d = kernel.space.dist[x0]
    pot = solve_equilibrium_potential(kernel, d < r, d < outer_factor * r)
    return CutoffCandidate(values=pot.values, x0=int(x0), inner=float(r), outer=float(outer_factor * r),
                           provenance="equilibrium", parts={"capacity": pot.capacity})


def csj_composite_cutoff(kernel: JumpKernel, x0: int, R: float, r: float, lam: float = LAMBDA) -> CutoffCandidate:
    """Annulus cutoff assembled from local ball cutoffs.

    With ``B_l = B(x0, R + l r / 4)`` and ``rho = r / (4 lam)``: a greedy
    ``rho``-net ``{x_j}`` of ``B_2 - B_1`` (so the ``B(x_j, rho / 2)`` are
    disjoint and the ``B(x_j, rho)`` cover), equilibrium cutoffs ``phi_j`` for
    ``B(x_j, rho) in B(x_j, 2 rho)`` and ``psi`` for ``B_1 in B_2``; the result
    ``max(max_j phi_j, psi)`` is 1 on ``B_2`` and vanishes off ``B_3``.
    """
    if not 0 < r <= R:
        raise ValueError("need 0 < r <= R")
    sp = kernel.space
    d0 = sp.dist[x0]
    B = [d0 < R + l * r / 4 for l in range(5)]
    rho = r / (4 * lam)
    annulus = np.flatnonzero(B[2] & ~B[1])
    centers = _greedy_net_idx(sp, annulus, rho)
    psi = solve_equilibrium_potential(kernel, B[1], B[2]).values
    local = np.zeros((centers.size, sp.n))
    for k, xj in enumerate(centers):
        dj = sp.dist[xj]
        local[k] = solve_equilibrium_potential(kernel, dj < rho, dj < 2 * rho).values
    values = np.maximum(local.max(axis=0), psi) if centers.size else psi.copy()
    return CutoffCandidate(
        values=values, x0=int(x0), inner=float(R), outer=float(R + r), provenance="composite",
        parts={"R": float(R), "r": float(r), "lam": float(lam), "rho": float(rho), "centers": centers,
               "local": local, "psi": psi, "plateau": float(R + r / 2), "support": float(R + 3 * r / 4)},
    )


# ---------------------------------------------------------------------------
# tables and fits
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CsjTable:
    """Rows ``(x0, R, r, k)`` with ``lhs``, ``energy`` and ``mass`` (already divided by ``phi(r)``)."""

    x0: np.ndarray
    R: np.ndarray
    r: np.ndarray
    function: np.ndarray
    lhs: np.ndarray
    energy: np.ndarray
    mass: np.ndarray

    def __len__(self):
        return len(self.lhs)

    @staticmethod
    def concat(tables: Sequence["CsjTable"]) -> "CsjTable":
        tables = [t for t in tables if len(t)]
        if not tables:
            return _empty_table()
        return CsjTable(*(np.concatenate([getattr(t, f) for t in tables]) for f in CsjTable.__dataclass_fields__))

    def joint_ratios(self) -> np.ndarray:
        den = self.energy + self.mass
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(den > 0, self.lhs / np.where(den > 0, den, 1.0), np.where(self.lhs > 0, np.inf, 0.0))

    @property
    def joint(self) -> float:
        q = self.joint_ratios()
        return float(q.max()) if q.size else 0.0

    def joint_at(self, r: float) -> float:
        q = self.joint_ratios()[self.r == r]
        return float(q.max()) if q.size else 0.0

    def sweep(self) -> dict:
        return {float(r): self.joint_at(r) for r in np.unique(self.r)}

    def witness(self) -> Optional[tuple]:
        if not len(self):
            return None
        k = int(np.argmax(self.joint_ratios()))
        return (int(self.x0[k]), float(self.R[k]), float(self.r[k]), int(self.function[k]))

    def c2_given(self, C1: float) -> float:
        """Smallest ``C2`` with ``lhs <= C1 energy + C2 mass`` on every row."""
        excess = np.maximum(self.lhs - C1 * self.energy, 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            q = np.where(self.mass > 0, excess / np.where(self.mass > 0, self.mass, 1.0), np.where(excess > 0, np.inf, 0.0))
        return float(q.max()) if q.size else 0.0

    def pareto(self, grid=C1_GRID) -> list:
        return [(float(c1), self.c2_given(c1)) for c1 in grid]

    def holds(self, C1: float, C2: float) -> np.ndarray:
        rhs = C1 * self.energy + C2 * self.mass
        return self.lhs <= rhs * (1 + 1e-12) + 1e-300


def _empty_table() -> CsjTable:
    z = np.zeros(0)
    return CsjTable(z.astype(int), z, z, z.astype(int), z, z, z)


def _rows(x0, R, r, lhs, energy, mass) -> CsjTable:
    k = len(lhs)
    return CsjTable(
        x0=np.full(k, int(x0)), R=np.full(k, float(R)), r=np.full(k, float(r)), function=np.arange(k),
        lhs=np.asarray(lhs, float), energy=np.clip(np.asarray(energy, float), 0.0, None), mass=np.asarray(mass, float),
    )


def _columns(n: int, f) -> np.ndarray:
    if isinstance(f, (list, tuple)):
        F = np.stack([np.asarray(v, dtype=float) for v in f], axis=1)
    else:
        F = np.asarray(f, dtype=float)
        if F.ndim == 1:
            F = F[:, None]
    if F.shape[0] != n:
        raise DimensionMismatch(f"test functions must have {n} values, got {F.shape[0]}")
    return F


def _ball_energy(kernel: JumpKernel, F: np.ndarray, a: np.ndarray, b: Optional[np.ndarray] = None) -> np.ndarray:
    """``sum_{x in a, y in b} (F(x) - F(y))^2 w`` per column, with rounding floors."""
    b = a if b is None else b
    if a.size == 0 or b.size == 0:
        return np.zeros(F.shape[1])
    return _block_energy(kernel.weights[np.ix_(a, b)], F[a], F[b])


# ---------------------------------------------------------------------------
# test functions
# ---------------------------------------------------------------------------


CSJ_FUNCTION_NAMES = ("one", "coord_a", "coord_b", "cos_a", "signs", "half_ball_a", "half_ball_b", "product")


def csj_test_functions(space: MetricMeasureSpace, x0: int, radius: float, seed: int = 0,
                       domain: Optional[DomainSpec] = None) -> np.ndarray:
    """Eight columns: constant, two distance coordinates, a low-frequency cosine,
    random signs, the two halves of ``B(x0, radius)`` split through ``x0`` and
    the product of the coordinates.  Coordinates are distances to the ends of
    a diameter of ``domain`` (or of the space)."""
    idx = np.arange(space.n) if domain is None else domain.indices
    sub = space.dist[np.ix_(idx, idx)]
    a, b = np.unravel_index(int(np.argmax(sub)), sub.shape)
    a, b = idx[a], idx[b]
    diam = max(float(sub.max()), space.mesh)
    ca, cb = space.dist[a] / diam, space.dist[b] / diam
    rng = np.random.default_rng(seed)
    signs = rng.choice([-1.0, 1.0], size=space.n)
    ball = space.dist[x0] < radius
    left = ca < ca[x0]
    return np.stack([
        np.ones(space.n), ca, cb, np.cos(np.pi * ca), signs,
        (ball & left).astype(float), (ball & ~left).astype(float), ca * cb,
    ], axis=1)


# ---------------------------------------------------------------------------
# ball form
# ---------------------------------------------------------------------------


def csjb_check(kernel: JumpKernel, x0: int, r: float, f, lam: float = LAMBDA,
               cutoff: Optional[CutoffCandidate] = None) -> CsjTable:
    """Rows of the ball-form inequality for the equilibrium cutoff of ``B(x0, r) in B(x0, 2r)``."""
    sp = kernel.space
    F = _columns(sp.n, f)
    cutoff = equilibrium_cutoff(kernel, x0, r) if cutoff is None else cutoff
    d = sp.dist[x0]
    b3 = np.flatnonzero(d < 3 * r)
    bl = np.flatnonzero(d < lam * r)
    a = _gamma_mass(kernel, cutoff.values, b3, b3)
    lhs = (F[b3] ** 2).T @ a
    energy = _ball_energy(kernel, F, bl)
    mass = (sp.mass[bl] @ F[bl] ** 2) / phi_eval(kernel.sf, r)
    return _rows(x0, r, r, lhs, energy, mass)


def csjb_sweep(kernel: JumpKernel, centers, radii, lam: float = LAMBDA, seed: int = 0) -> CsjTable:
    tabs = []
    for x0 in centers:
        for r in radii:
            F = csj_test_functions(kernel.space, x0, lam * r, seed)
            tabs.append(csjb_check(kernel, x0, r, F, lam))
    return CsjTable.concat(tabs)


# ---------------------------------------------------------------------------
# annulus form
# ---------------------------------------------------------------------------


def csj_check(kernel: JumpKernel, x0: int, R: float, r: float, f, cutoff: CutoffCandidate) -> CsjTable:
    """Rows of the annulus-form inequality with ``C0 = 1``; the cutoff must be valid for ``B(R) in B(R + r)``."""
    sp = kernel.space
    if cutoff.x0 != x0 or cutoff.inner < R or cutoff.outer > R + r:
        raise InvalidCutoff("cutoff is not for B(x0, R) inside B(x0, R + r)")
    check = CutoffCandidate(cutoff.values, int(x0), float(R), float(R + r), cutoff.provenance)
    bad = check.violations(sp)
    if any(bad.values()):
        raise InvalidCutoff(f"cutoff boundary conditions violated: {bad}")
    F = _columns(sp.n, f)
    d = sp.dist[x0]
    big = np.flatnonzero(d < R + 2 * r)
    U = np.flatnonzero((d < R + r) & (d >= R))
    Us = np.flatnonzero((d < R + 2 * r) & (d >= R - r))
    a = _gamma_mass(kernel, cutoff.values, big)
    lhs = (F[big] ** 2).T @ a
    energy = _ball_energy(kernel, F, U, Us)
    mass = (sp.mass[big] @ F[big] ** 2) / phi_eval(kernel.sf, r)
    return _rows(x0, R, r, lhs, energy, mass)


@dataclass(frozen=True)
class CompositeBounds:
    """The four-way split of the annulus-form left side and the bound on each piece (per test function)."""

    lhs: np.ndarray
    near: np.ndarray  # x, y in B4 - B1 with d(x, y) <= rho
    far: np.ndarray  # x, y in B4 - B1 with d(x, y) > rho
    leaving: np.ndarray  # x in B4 - B1, y outside it
    outside: np.ndarray  # x in B(R + 2r) outside B4 - B1
    local_lhs: np.ndarray  # sum_j of the ball-form left sides of the local cutoffs
    local_energy: np.ndarray  # sum_j energy over B(x_j, lam rho)^2
    local_mass: np.ndarray  # sum_j mass over B(x_j, lam rho) / phi(rho)
    annulus_energy: np.ndarray  # energy over U x U
    annulus_mass: np.ndarray  # mass over U / phi(rho)
    far_bound: np.ndarray  # sum_{B4-B1} f^2 tail(x, rho) m
    leaving_bound: np.ndarray  # sum_{B4-B1} f^2 tail(x, r/4) m
    outside_bound: np.ndarray  # sum_{K} f^2 tail(x, r/4) m
    overlap: int  # max number of balls B(x_j, lam rho) containing a point
    split_error: float  # relative error of near + far + leaving + outside = lhs

    def checks(self, local_constant: float) -> dict:
        """Each displayed inequality, given the joint constant of the local ball-form rows."""
        tol = 1 + 1e-10
        return {
            "near_by_local": bool((self.near <= self.local_lhs * tol + 1e-300).all()),
            "local_by_csjb": bool((self.local_lhs <= local_constant * (self.local_energy + self.local_mass) * tol + 1e-300).all()),
            "local_by_overlap": bool((self.local_energy + self.local_mass
                                      <= self.overlap * (self.annulus_energy + self.annulus_mass) * tol + 1e-300).all()),
            "far_by_tail": bool((self.far <= self.far_bound * tol + 1e-300).all()),
            "leaving_by_tail": bool((self.leaving <= self.leaving_bound * tol + 1e-300).all()),
            "outside_by_tail": bool((self.outside <= self.outside_bound * tol + 1e-300).all()),
            "split_exact": self.split_error <= 1e-10,
        }


def composite_bounds(kernel: JumpKernel, cutoff: CutoffCandidate, f) -> tuple:
    """Split the annulus-form left side and bound each piece; also returns the local ball-form rows."""
    if cutoff.provenance != "composite":
        raise InvalidCutoff("composite_bounds needs a composite cutoff")
    sp, W = kernel.space, kernel.weights
    F = _columns(sp.n, f)
    p = cutoff.parts
    R, r, lam, rho = p["R"], p["r"], p["lam"], p["rho"]
    x0 = cutoff.x0
    d0 = sp.dist[x0]
    phi = cutoff.values
    A = (d0 < R + r) & (d0 >= R + r / 4)  # B4 - B1
    ia = np.flatnonzero(A)
    big = d0 < R + 2 * r
    iK = np.flatnonzero(big & ~A)
    f2 = F**2

    dphi2 = (phi[:, None] - phi[None, :]) ** 2
    G = W * dphi2
    close = sp.dist <= rho
    GA = G[np.ix_(ia, ia)]
    CA = close[np.ix_(ia, ia)]
    near = f2[ia].T @ np.where(CA, GA, 0.0).sum(axis=1)
    far = f2[ia].T @ np.where(CA, 0.0, GA).sum(axis=1)
    io = np.flatnonzero(~A)
    leaving = f2[ia].T @ G[np.ix_(ia, io)].sum(axis=1)
    outside = f2[iK].T @ G[iK].sum(axis=1)
    lhs = f2[np.flatnonzero(big)].T @ G[np.flatnonzero(big)].sum(axis=1)

    m = sp.mass
    local_rows = []
    centers, local = p["centers"], p["local"]
    for k, xj in enumerate(centers):
        dj = sp.dist[xj]
        b3 = np.flatnonzero(dj < 3 * rho)
        bl = np.flatnonzero(dj < lam * rho)
        a = _gamma_mass(kernel, local[k], b3, b3)
        local_rows.append(_rows(xj, rho, rho, f2[b3].T @ a, _ball_energy(kernel, F, bl),
                                (m[bl] @ f2[bl]) / phi_eval(kernel.sf, rho)))
    local_tab = CsjTable.concat(local_rows)
    nf = F.shape[1]
    if len(local_tab):
        local_lhs = local_tab.lhs.reshape(-1, nf).sum(axis=0)
        local_energy = local_tab.energy.reshape(-1, nf).sum(axis=0)
        local_mass = local_tab.mass.reshape(-1, nf).sum(axis=0)
        overlap = int((sp.dist[:, centers] < lam * rho).sum(axis=1).max())
    else:
        local_lhs = local_energy = local_mass = np.zeros(nf)
        overlap = 0
    U = np.flatnonzero((d0 < R + r) & (d0 >= R))
    annulus_energy = _ball_energy(kernel, F, U)
    annulus_mass = (m[U] @ f2[U]) / phi_eval(kernel.sf, rho)
    t_rho = tail_masses(kernel, rho)
    t_quarter = tail_masses(kernel, r / 4)
    bounds = CompositeBounds(
        lhs=lhs, near=near, far=far, leaving=leaving, outside=outside,
        local_lhs=local_lhs, local_energy=local_energy, local_mass=local_mass,
        annulus_energy=annulus_energy, annulus_mass=annulus_mass,
        far_bound=f2[ia].T @ (t_rho[ia] * m[ia]),
        leaving_bound=f2[ia].T @ (t_quarter[ia] * m[ia]),
        outside_bound=f2[iK].T @ (t_quarter[iK] * m[iK]),
        overlap=overlap,
        split_error=float(np.max(np.abs(near + far + leaving + outside - lhs) / np.maximum(lhs, 1e-300), initial=0.0)),
    )
    return bounds, local_tab


def explicit_csj_constants(local_constant: float, overlap: int, tail_rho: float, tail_quarter: float,
                           sf, r: float, rho: float) -> tuple:
    """Annulus-form constants implied by the chain of bounds.

    ``local_constant`` is the joint ball-form constant of the local cutoffs,
    ``overlap`` the multiplicity of the balls ``B(x_j, lam rho)``, and
    ``tail_s = max_x tail(x, s) phi(s)``.
    """
    phr, php, phq = (float(phi_eval(sf, s)) for s in (r, rho, r / 4))
    C1 = local_constant * overlap
    C2 = local_constant * overlap * phr / php + tail_rho * phr / php + tail_quarter * phr / phq
    return C1, C2


@dataclass(frozen=True)
class CompositeSweep:
    table: CsjTable  # annulus-form rows of the composite cutoffs
    local: CsjTable  # ball-form rows of all local cutoffs
    explicit: np.ndarray  # per row: (C1, C2) implied by the chain with instance constants
    checks: dict  # name -> all rows pass
    cutoffs_valid: bool
    local_constant: float
    overlap: int

    @property
    def passes(self) -> np.ndarray:
        """Row-wise: the annulus inequality holds with the explicit constants."""
        rhs = self.explicit[:, 0] * self.table.energy + self.explicit[:, 1] * self.table.mass
        return self.table.lhs <= rhs * (1 + 1e-10) + 1e-300


def composite_sweep(kernel: JumpKernel, centers, radii, R_factors=(1.0, 2.0), lam: float = LAMBDA,
                    seed: int = 0) -> CompositeSweep:
    """Build composite cutoffs for ``R = factor * r`` and check every row.

    The explicit constants use the instance-wide joint constant of all local
    ball-form rows, the largest overlap, and tail constants at ``rho`` and ``r/4``.
    """
    sp = kernel.space
    pieces = []
    for x0 in centers:
        for r in radii:
            for fac in R_factors:
                R = fac * r
                cut = csj_composite_cutoff(kernel, x0, R, r, lam)
                F = csj_test_functions(sp, x0, R + 2 * r, seed)
                row = csj_check(kernel, x0, R, r, F, cut)
                bounds, local = composite_bounds(kernel, cut, F)
                pieces.append((cut, row, bounds, local))
    if not pieces:
        return CompositeSweep(_empty_table(), _empty_table(), np.zeros((0, 2)), {}, True, 0.0, 0)
    local_all = CsjTable.concat([p[3] for p in pieces])
    K = local_all.joint
    overlap = max(p[2].overlap for p in pieces)
    explicit, checks = [], {}
    for cut, row, bounds, _ in pieces:
        pr = cut.parts
        t_rho = float(tail_masses(kernel, pr["rho"]).max() * phi_eval(kernel.sf, pr["rho"]))
        t_q = float(tail_masses(kernel, pr["r"] / 4).max() * phi_eval(kernel.sf, pr["r"] / 4))
        c = explicit_csj_constants(K, overlap, t_rho, t_q, kernel.sf, pr["r"], pr["rho"])
        explicit.extend([c] * len(row))
        for name, ok in bounds.checks(K).items():
            checks[name] = checks.get(name, True) and ok
    valid = all(p[0].is_valid(sp) for p in pieces)
    return CompositeSweep(
        table=CsjTable.concat([p[1] for p in pieces]),
        local=local_all,
        explicit=np.asarray(explicit),
        checks=checks,
        cutoffs_valid=valid,
        local_constant=K,
        overlap=overlap,
    )


# ---------------------------------------------------------------------------
# reflected form via the extension operator
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReflectedCsjTable:
    """Per row: the reflected left side, the ambient chain and the domain right sides."""

    rows: CsjTable  # reflected lhs vs domain energy over B_D(14 lam r)^2 and mass over B_D(7 lam r)
    ambient: CsjTable  # ambient ball-form rows for g = Ext f
    amb_energy: np.ndarray  # energy of g over B(lam r)^2
    amb_mass: np.ndarray  # sum_{B(lam r)} g^2 m / phi(r)

    def extension_constants(self) -> tuple:
        """``(C3, C4)``: mass and energy transfer ratios of the extension, fitted over rows."""
        with np.errstate(divide="ignore", invalid="ignore"):
            c3 = np.where(self.rows.mass > 0, self.amb_mass / np.where(self.rows.mass > 0, self.rows.mass, 1.0),
                          np.where(self.amb_mass > 0, np.inf, 0.0))
            c4 = np.where(self.rows.energy > 0, self.amb_energy / np.where(self.rows.energy > 0, self.rows.energy, 1.0),
                          np.where(self.amb_energy > 0, np.inf, 0.0))
        return float(c3.max(initial=0.0)), float(c4.max(initial=0.0))

    def chain_holds(self) -> dict:
        tol = 1 + 1e-10
        K = self.ambient.joint
        C3, C4 = self.extension_constants()
        return {
            "reflected_below_ambient": bool((self.rows.lhs <= self.ambient.lhs * tol + 1e-300).all()),
            "ambient_ball_form": bool((self.ambient.lhs <= K * (self.amb_energy + self.amb_mass) * tol + 1e-300).all()),
            "domain_transfer": bool((self.rows.lhs
                                     <= K * (C4 * self.rows.energy + C3 * self.rows.mass) * tol + 1e-300).all()),
        }


def reflected_csj_via_extension(kernel: JumpKernel, form: ReflectedForm, ext: ExtensionOperator, x0: int, r: float,
                                f, lam: float = LAMBDA) -> ReflectedCsjTable:
    """Reflected ball-form rows for ``f`` on ``D`` through ``g = Ext f`` and the ambient equilibrium cutoff.

    ``x0`` is an index of the ambient space lying in ``D``; ``f`` has ``|D|``
    values per column (or ``N``, in which case it is restricted to ``D``).
    """
    sp = kernel.space
    dom = form.domain
    if not dom.mask[x0]:
        raise ValueError("the centre must lie in D")
    idx = dom.indices
    Fd = np.asarray(f, dtype=float)
    Fd = Fd[:, None] if Fd.ndim == 1 else Fd
    if Fd.shape[0] == sp.n:
        Fd = Fd[idx]
    if Fd.shape[0] != idx.size:
        raise DimensionMismatch(f"expected functions on D ({idx.size} values)")
    G = ext.matrix @ Fd
    cut = equilibrium_cutoff(kernel, x0, r)
    amb = csjb_check(kernel, x0, r, G, lam, cut)
    d = sp.dist[x0]
    bl = np.flatnonzero(d < lam * r)
    amb_energy = _ball_energy(kernel, G, bl)
    amb_mass = (sp.mass[bl] @ G[bl] ** 2) / phi_eval(kernel.sf, r)

    # reflected left side over B_D(3r)^2 with the restricted cutoff
    dd = d[idx]
    b3 = np.flatnonzero(dd < 3 * r)
    phi_d = cut.values[idx]
    a = _gamma_mass(form.kernel, phi_d, b3, b3)
    lhs = (Fd[b3] ** 2).T @ a
    e14 = np.flatnonzero(dd < 14 * lam * r)
    m7 = np.flatnonzero(dd < 7 * lam * r)
    energy = _ball_energy(form.kernel, Fd, e14)
    mass = (form.space.mass[m7] @ Fd[m7] ** 2) / phi_eval(kernel.sf, r)
    rows = _rows(x0, r, r, lhs, energy, mass)
    return ReflectedCsjTable(rows=rows, ambient=amb, amb_energy=np.clip(amb_energy, 0.0, None), amb_mass=amb_mass)


def reflected_sweep(kernel: JumpKernel, form: ReflectedForm, ext: ExtensionOperator, centers, radii,
                    lam: float = LAMBDA, seed: int = 0) -> ReflectedCsjTable:
    parts = []
    for x0 in centers:
        for r in radii:
            F = csj_test_functions(kernel.space, x0, lam * r, seed, domain=form.domain)
            parts.append(reflected_csj_via_extension(kernel, form, ext, x0, r, F, lam))
    if not parts:
        z = np.zeros(0)
        return ReflectedCsjTable(_empty_table(), _empty_table(), z, z)
    return ReflectedCsjTable(
        rows=CsjTable.concat([p.rows for p in parts]),
        ambient=CsjTable.concat([p.ambient for p in parts]),
        amb_energy=np.concatenate([p.amb_energy for p in parts]),
        amb_mass=np.concatenate([p.amb_mass for p in parts]),
    )


def csj_radii(space: MetricMeasureSpace, diam: float, lo_mult: float = 2.0, frac: float = RADIUS_FRACTION) -> np.ndarray:
    """Dyadic radii ``mesh * 2**j`` in ``[lo_mult * mesh, frac * diam)``."""
    r = space.dyadic_radii(lo_mult * space.mesh, frac * diam)
    return r[r < frac * diam]
