"""Capacity cutoffs, the exterior partition of unity and interior mass functions."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import LinearOperator, cg

from .errors import EmptyInner, FeasibilityFailure, InvariantFailure, ZeroDenominator
from .kernel import JumpKernel, local_energy, phi_eval
from .whitney import WhitneyCover, lambda_index_set

DIRECT_SOLVE_MAX = 2000
CG_RTOL = 1e-10
# tolerance for identities that are exact in real arithmetic but are sums of
# floating point quotients (sum_i eta_i / S = 1, sum_i f_i <= 1)
ROUNDOFF = 1e-12


# ---------------------------------------------------------------------------
# equilibrium potentials
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class EquilibriumPotential:
    values: np.ndarray
    capacity: float
    inner: np.ndarray  # index array of A
    outer: np.ndarray  # index array of B
    free: np.ndarray  # index array of B \ A
    isolated: np.ndarray  # free points pinned to 0 (no weight to the complement of B \ A)


def _mask(n, s):
    s = np.asarray(s)
    if s.dtype == bool:
        return s.copy()
    m = np.zeros(n, dtype=bool)
    m[s.astype(int)] = True
    return m


def solve_equilibrium_potential(kernel: JumpKernel, inner, outer) -> EquilibriumPotential:
    """Minimise the energy over ``f`` with ``f = 1`` on ``A`` and ``f = 0`` off ``B``.

    The minimiser is harmonic on the free set ``F = B \\ A``:
    ``(deg_F - W_FF) f_F = W_FA 1``.  Free components carrying no weight to
    the complement of ``F`` have no boundary data; they are set to 0.
    """
    n = kernel.n
    A, B = _mask(n, inner), _mask(n, outer)
    if not A.any():
        raise EmptyInner("the inner set is empty")
    if (A & ~B).any():
        raise ValueError("the inner set must be contained in the outer set")
    F = B & ~A
    f = A.astype(float)
    free = np.flatnonzero(F)
    isolated = np.zeros(0, dtype=int)
    if free.size:
        W = kernel.weights
        W_FF = W[np.ix_(free, free)]
        touches = (W[np.ix_(free, np.flatnonzero(~F))] > 0).any(axis=1)
        if not touches.all():
            ncomp, lab = connected_components(W_FF > 0, directed=False)
            dead = np.ones(ncomp, dtype=bool)
            dead[np.unique(lab[touches])] = False
            keep = ~dead[lab]
            isolated = free[~keep]
            free = free[keep]
            W_FF = W_FF[np.ix_(keep, keep)]
        if free.size:
            L = np.diag(kernel.degree[free]) - W_FF
            b = W[np.ix_(free, np.flatnonzero(A))].sum(axis=1)
            if free.size <= DIRECT_SOLVE_MAX:
                try:
                    sol = scipy.linalg.solve(L, b, assume_a="pos")
                except np.linalg.LinAlgError:
                    sol = scipy.linalg.solve(L, b)
            else:
                dinv = 1.0 / np.diag(L)
                pre = LinearOperator(L.shape, matvec=lambda v: dinv * v)
                sol, info = cg(L, b, rtol=CG_RTOL, maxiter=10 * free.size, M=pre)
                if info != 0:
                    raise InvariantFailure("partition", "solve_equilibrium_potential", "CG did not converge")
            lo, hi = float(sol.min()), float(sol.max())
            if lo < -1e-9 or hi > 1 + 1e-9:
                raise InvariantFailure(
                    "partition", "solve_equilibrium_potential", f"maximum principle violated: range [{lo}, {hi}]"
                )
            f[free] = np.clip(sol, 0.0, 1.0)
    support = np.flatnonzero(B)
    cap = local_energy(kernel, f, support)
    return EquilibriumPotential(
        values=f,
        capacity=cap,
        inner=np.flatnonzero(A),
        outer=support,
        free=np.flatnonzero(F),
        isolated=isolated,
    )


# ---------------------------------------------------------------------------
# cutoffs eta_i and partition psi_i
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CutoffFamily:
    """``eta[:, i]`` is the equilibrium potential of ``(5/2)B_i`` inside ``3B_i``."""

    eta: np.ndarray  # (N, |I|)
    energies: np.ndarray
    ratios: np.ndarray  # E(eta_i) phi(r_i) / m(B_i)
    constant: float  # max ratio: the capacity-upper-bound certificate
    witness: int

    def __len__(self):
        return self.eta.shape[1]


def build_eta(kernel: JumpKernel, cover: WhitneyCover) -> CutoffFamily:
    n, k = cover.space.n, cover.size
    eta = np.zeros((n, k))
    energies = np.zeros(k)
    inner_t = cover.membership(2.5)
    outer_t = cover.membership(3.0)
    for i in range(k):
        pot = solve_equilibrium_potential(kernel, inner_t[:, i], outer_t[:, i])
        eta[:, i] = pot.values
        energies[i] = pot.capacity
    ratios = energies * phi_eval(kernel.sf, cover.radii) / cover.ball_mass(1.0)
    w = int(np.argmax(ratios))
    if not np.isfinite(ratios).all():
        raise InvariantFailure("partition", "build_eta", "non-finite capacity ratio", (w,))
    eta.flags.writeable = False
    return CutoffFamily(eta=eta, energies=energies, ratios=ratios, constant=float(ratios[w]), witness=w)


@dataclass(frozen=True, eq=False)
class PartitionOfUnity:
    psi: np.ndarray  # (N, |I|), zero on D
    total: np.ndarray  # sum_j eta_j
    sum_error: float  # max |sum_i psi_i - 1| on the exterior
    lambda_sum_error: float  # same for the Lambda-sum where d(x, D) < diam(D)
    energies: np.ndarray  # E(psi_i)
    ratios: np.ndarray  # E(psi_i) phi(r_i) / m(B_i)
    constant: float
    chain: dict  # per-i terms of the psi energy bound


def build_psi(etas: CutoffFamily, cover: WhitneyCover, domain=None, kernel: JumpKernel = None) -> PartitionOfUnity:
    """``psi_i = eta_i / sum_j eta_j`` off ``D`` and 0 on ``D``.

    With a kernel, also evaluates ``E(psi_i)`` and the chain
    ``E(psi_i) <= 2 E(eta_i) + 2 E(1 v g_i)``, ``E(1 v g_i) <= E(g_i) <= n_i sum_j E(eta_j)``
    with ``g_i`` the sum of the ``eta_j`` whose ``3B_j`` meets ``3B_i``.
    """
    domain = cover.domain if domain is None else domain
    eta = etas.eta
    ext = ~domain.mask
    total = eta.sum(axis=1)
    if (total[ext] <= 0).any():
        x = int(np.flatnonzero(ext & (total <= 0))[0])
        raise ZeroDenominator(f"no cutoff is positive at exterior point {cover.space.points[x]!r}")
    psi = np.zeros_like(eta)
    psi[ext] = eta[ext] / total[ext, None]

    # exact structural facts
    if (psi < 0).any() or (psi > 1).any():
        raise InvariantFailure("partition", "build_psi", "psi outside [0, 1]")
    if (psi[~cover.membership(3.0)] != 0).any():
        raise InvariantFailure("partition", "build_psi", "psi_i nonzero off 3B_i")
    s = psi.sum(axis=1)
    err = float(np.abs(s[ext] - 1).max()) if ext.any() else 0.0
    lam = lambda_index_set(cover, domain)
    near = ext & (cover.dist_to_domain < domain.diam)
    s_lam = psi[:, lam].sum(axis=1)
    lam_err = float(np.abs(s_lam[near] - 1).max()) if near.any() else 0.0
    if err > ROUNDOFF or lam_err > ROUNDOFF:
        raise InvariantFailure("partition", "build_psi", f"partition of unity off by {max(err, lam_err)}")

    energies = ratios = np.full(cover.size, np.nan)
    chain = {}
    constant = float("nan")
    if kernel is not None:
        energies, chain = _psi_energy_chain(kernel, cover, etas, psi)
        ratios = energies * phi_eval(kernel.sf, cover.radii) / cover.ball_mass(1.0)
        constant = float(ratios.max())
    psi.flags.writeable = False
    return PartitionOfUnity(
        psi=psi,
        total=total,
        sum_error=err,
        lambda_sum_error=lam_err,
        energies=energies,
        ratios=ratios,
        constant=constant,
        chain=chain,
    )


def _psi_energy_chain(kernel, cover, etas, psi):
    k = cover.size
    M3 = cover.membership(3.0)
    nb = cover.neighbors(3.0)
    e_psi = np.zeros(k)
    e_gmax = np.zeros(k)
    e_g = np.zeros(k)
    sum_bound = np.zeros(k)
    counts = nb.sum(axis=1)
    for i in range(k):
        supp = np.flatnonzero(M3[:, i])
        e_psi[i] = local_energy(kernel, psi[:, i], supp)
        js = np.flatnonzero(nb[i])
        g = etas.eta[:, js].sum(axis=1)
        gsupp = np.flatnonzero(M3[:, js].any(axis=1))
        e_g[i] = local_energy(kernel, g, gsupp)
        over = np.maximum(g - 1.0, 0.0)  # (1 v g) - 1 has the same energy as 1 v g
        e_gmax[i] = local_energy(kernel, over, gsupp)
        sum_bound[i] = counts[i] * etas.energies[js].sum()
    slack = 1e-10
    ok = (
        (e_psi <= (2 * etas.energies + 2 * e_gmax) * (1 + slack) + 1e-300)
        & (e_gmax <= e_g * (1 + slack) + 1e-300)
        & (e_g <= sum_bound * (1 + slack) + 1e-300)
    )
    if not ok.all():
        i = int(np.flatnonzero(~ok)[0])
        raise InvariantFailure("partition", "build_psi", "psi energy chain fails", (i,))
    chain = {
        "energy_eta": etas.energies,
        "energy_one_or_g": e_gmax,
        "energy_g": e_g,
        "count_times_sum": sum_bound,
        "neighbor_counts": counts,
    }
    return e_psi, chain


# ---------------------------------------------------------------------------
# interior mass functions
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MassFunctions:
    lam: np.ndarray  # cover indices in Lambda (column k of F belongs to lam[k])
    order: np.ndarray  # construction order, as positions into lam
    anchors: np.ndarray  # point index y_i
    F: np.ndarray  # (N, |Lambda|)
    integrals: np.ndarray  # int f_i dm
    ball_mass: np.ndarray  # m(B_i)
    domain_ball_mass: np.ndarray  # m(B_D(y_i, r_i))
    C1: float
    C2: float
    C3: float
    alpha: float  # C2 / (2 C1 C3)
    C_literal: float  # 2 C1 C3 / C2
    C_certificate: float  # constant for which the two-sided mass bound provably holds
    margins: np.ndarray  # headroom mass minus half the domain-ball mass at each step

    def column(self, i: int) -> int:
        """Column of ``F`` holding the function of cover index ``i``."""
        pos = np.searchsorted(self.lam, i)
        if pos >= len(self.lam) or self.lam[pos] != i:
            raise KeyError(i)
        return int(pos)

    def mass_bounds_hold(self, C: float) -> bool:
        # the certificate is attained with equality on some instances
        lo = self.ball_mass / C * (1 - ROUNDOFF)
        hi = self.ball_mass * C * (1 + ROUNDOFF)
        return bool(((self.integrals >= lo) & (self.integrals <= hi)).all())


def _level_fill(head: np.ndarray, mass: np.ndarray, alpha: float, ball_mass: float) -> np.ndarray:
    """``min(t, head)`` with ``sum(min(t, head) * mass) == alpha * ball_mass``."""
    target = alpha * ball_mass
    if (head >= 1.0).all():
        msum = float(mass.sum())
        # the ratio is exactly 1 when msum reproduces ball_mass, giving f = alpha
        return np.full(head.size, alpha * (ball_mass / msum))
    order = np.argsort(head, kind="stable")
    h, m = head[order], mass[order]
    below = np.concatenate([[0.0], np.cumsum(h * m)])  # mass of the first k points, saturated
    above = np.concatenate([np.cumsum(m[::-1])[::-1], [0.0]])  # mass of points k..end
    for k in range(h.size):
        t = (target - below[k]) / above[k]
        if t <= h[k]:
            return np.minimum(max(t, 0.0), head)
    return head.copy()


def nearest_domain_points(space, domain, centers) -> np.ndarray:
    """Closest point of ``D`` to each centre; ties go to the smaller index."""
    idx = domain.indices
    return idx[np.argmin(space.dist[np.ix_(centers, idx)], axis=1)]


def build_mass_functions(space, domain, cover: WhitneyCover) -> MassFunctions:
    """Fixed-level water-filling construction of the interior mass functions.

    Indices of ``Lambda`` are processed by ``(floor(log2 r_i), centre index)``.
    Each ``f_i`` is a water level on ``B_D(y_i, r_i)``: ``f_i = min(t, headroom)``
    with headroom ``1 - sum(previous f)`` and ``t`` chosen so that the mass is
    ``C2 / (2 C1 C3) * m(B_D(y_i, r_i))``.  Without overlap this is the scaled
    indicator ``C2 / (2 C1 C3) * 1_{B_D(y_i, r_i)}``.
    """
    lam = lambda_index_set(cover, domain)
    n = space.n
    if lam.size == 0:
        empty = np.zeros(0)
        return MassFunctions(
            lam=lam, order=lam, anchors=lam, F=np.zeros((n, 0)), integrals=empty, ball_mass=empty,
            domain_ball_mass=empty, C1=1.0, C2=1.0, C3=1.0, alpha=0.5, C_literal=2.0, C_certificate=2.0,
            margins=empty,
        )
    centers, radii = cover.centers[lam], cover.radii[lam]
    y = nearest_domain_points(space, domain, centers)
    if (space.dist[centers, y] > 6 * radii * (1 + 1e-12)).any():
        raise InvariantFailure("partition", "build_mass_functions", "anchor farther than 6 r_i")
    mB = (space.dist[centers] < radii[:, None]) @ space.mass
    m23 = (space.dist[centers] < 23 * radii[:, None]) @ space.mass
    BD = (space.dist[y] < radii[:, None]) & domain.mask[None, :]  # (|Lambda|, N)
    mBD = BD @ space.mass
    C1 = float(max(1.0, (m23 / mB).max()))
    q = mBD / mB
    C2, C3 = float(q.min()), float(q.max())
    alpha = C2 / (2 * C1 * C3)

    level = np.floor(np.log2(radii))
    order = np.lexsort((centers, level))
    F = np.zeros((n, lam.size))
    used = np.zeros(n)  # running sum of previous f
    margins = np.zeros(lam.size)
    for pos in order:
        pts = np.flatnonzero(BD[pos])
        head = 1.0 - used[pts]
        avail = float(head @ space.mass[pts])
        margins[pos] = avail - 0.5 * mBD[pos]
        target = alpha * mBD[pos]
        if margins[pos] < -ROUNDOFF * mBD[pos] or avail < target:
            raise FeasibilityFailure(
                "not enough headroom for the next mass function",
                {"cover_index": int(lam[pos]), "available": avail, "target": target, "half_ball": 0.5 * mBD[pos],
                 "C1": C1, "C2": C2, "C3": C3},
            )
        F[pts, pos] = _level_fill(head, space.mass[pts], alpha, mBD[pos])
        used[pts] += F[pts, pos]
    integrals = space.mass @ F
    C_cert = max(2 * C1 * C3 / C2**2, C2 / (2 * C1), 1.0)
    F.flags.writeable = False
    return MassFunctions(
        lam=lam,
        order=order,
        anchors=y,
        F=F,
        integrals=integrals,
        ball_mass=mB,
        domain_ball_mass=mBD,
        C1=C1,
        C2=C2,
        C3=C3,
        alpha=alpha,
        C_literal=2 * C1 * C3 / C2,
        C_certificate=float(C_cert),
        margins=margins,
    )


@dataclass(frozen=True)
class MassReport:
    range_ok: bool  # 0 <= f_i <= 1
    sum_ok: bool  # sum f_i <= 1 on D, 0 off D
    sum_max: float
    diam_ok: bool  # diam supp f_i <= 2 r_i
    reach_ok: bool  # d(x_i, supp f_i) <= 7 r_i
    support_in_ball: bool  # supp f_i inside B_D(y_i, r_i)
    literal_ok: bool  # two-sided mass bound with 2 C1 C3 / C2
    certificate_ok: bool  # two-sided mass bound with the certificate constant
    integral_ratio: tuple  # (min, max) of int f_i / m(B_i)


def check_mass_functions(mf: MassFunctions, cover: WhitneyCover) -> MassReport:
    space, domain = cover.space, cover.domain
    F = mf.F
    range_ok = bool((F >= 0).all() and (F <= 1).all())
    s = F.sum(axis=1)
    sum_ok = bool((s[domain.mask] <= 1 + ROUNDOFF).all() and (s[~domain.mask] == 0).all())
    diam_ok = reach_ok = inside = True
    for k, i in enumerate(mf.lam):
        supp = np.flatnonzero(F[:, k] > 0)
        if supp.size == 0:
            diam_ok = False
            continue
        r = cover.radii[i]
        diam_ok &= bool(space.dist[np.ix_(supp, supp)].max() <= 2 * r)
        reach_ok &= bool(space.dist[cover.centers[i], supp].min() <= 7 * r)
        inside &= bool((space.dist[mf.anchors[k], supp] < r).all() and domain.mask[supp].all())
    q = mf.integrals / mf.ball_mass if len(mf.lam) else np.array([1.0])
    return MassReport(
        range_ok=range_ok,
        sum_ok=sum_ok,
        sum_max=float(s.max()) if s.size else 0.0,
        diam_ok=bool(diam_ok),
        reach_ok=bool(reach_ok),
        support_in_ball=bool(inside),
        literal_ok=mf.mass_bounds_hold(mf.C_literal),
        certificate_ok=mf.mass_bounds_hold(mf.C_certificate),
        integral_ratio=(float(q.min()), float(q.max())),
    )
