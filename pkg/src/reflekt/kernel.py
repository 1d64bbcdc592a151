"""Scale functions, mixed stable-like jump kernels and their Dirichlet forms.

Jump weights are ``w(x, y) = J(x, y) m(x) m(y)`` with

    J(x, y) = 2 * norm / ((V(x, d) + V(y, d)) * phi(d)),   d = d(x, y),

which is exactly symmetric and, under volume doubling, comparable to the
one-sided profile ``1 / (V(x, d) phi(d))``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import brentq

from .errors import DimensionMismatch, EmptyDomain, InvariantFailure, NegativeArgument
from .space import DomainSpec, MetricMeasureSpace, restrict_space


# ---------------------------------------------------------------------------
# scale functions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScaleFunction:
    """``power(beta)``: ``phi(r) = r**beta``.

    ``two_regime(beta_low, beta_high, crossover)``: exponent ``beta_low`` below
    the crossover and ``beta_high`` above it, rescaled so that ``phi(1) = 1``.
    Both satisfy ``c1 (R/r)**beta1 <= phi(R)/phi(r) <= c2 (R/r)**beta2`` with
    ``c1 = c2 = 1``.
    """

    kind: str = "power"
    beta: float = 1.0
    beta_low: float = 1.0
    beta_high: float = 1.0
    crossover: float = 1.0

    def __post_init__(self):
        if self.kind == "power":
            if not self.beta > 0:
                raise ValueError("power scale function needs beta > 0")
        elif self.kind == "two_regime":
            if not (self.beta_low > 0 and self.beta_high > 0 and self.crossover > 0):
                raise ValueError("two_regime needs positive exponents and crossover")
        else:
            raise ValueError(f"unknown scale function kind {self.kind!r}")

    @classmethod
    def power(cls, beta: float) -> "ScaleFunction":
        return cls(kind="power", beta=float(beta))

    @classmethod
    def two_regime(cls, beta_low: float, beta_high: float, crossover: float) -> "ScaleFunction":
        return cls(kind="two_regime", beta_low=float(beta_low), beta_high=float(beta_high), crossover=float(crossover))

    @classmethod
    def from_dict(cls, spec: dict) -> "ScaleFunction":
        spec = dict(spec)
        kind = spec.pop("kind", "power")
        return cls(kind=kind, **{k: float(v) for k, v in spec.items()})

    def to_dict(self) -> dict:
        if self.kind == "power":
            return {"kind": "power", "beta": self.beta}
        return {"kind": "two_regime", "beta_low": self.beta_low, "beta_high": self.beta_high, "crossover": self.crossover}

    @property
    def beta1(self) -> float:
        return self.beta if self.kind == "power" else min(self.beta_low, self.beta_high)

    @property
    def beta2(self) -> float:
        return self.beta if self.kind == "power" else max(self.beta_low, self.beta_high)

    c1 = 1.0
    c2 = 1.0

    def _raw(self, r):
        c = self.crossover
        lo = np.power(r, self.beta_low)
        hi = c**self.beta_low * np.power(r / c, self.beta_high)
        return np.where(r <= c, lo, hi)

    def __call__(self, r):
        return phi_eval(self, r)


def phi_eval(sf: ScaleFunction, r):
    r_arr = np.asarray(r, dtype=float)
    if (r_arr < 0).any():
        raise NegativeArgument("phi is defined for r >= 0")
    if sf.kind == "power":
        out = np.power(r_arr, sf.beta)
    else:
        out = sf._raw(r_arr) / float(sf._raw(np.asarray(1.0)))
    return float(out) if np.ndim(out) == 0 else out


def phi_inverse(sf: ScaleFunction, t: float) -> float:
    """Inverse of ``phi``: closed form for powers, Brent bracketing otherwise."""
    t = float(t)
    if t < 0:
        raise NegativeArgument("phi^-1 is defined for t >= 0")
    if t == 0:
        return 0.0
    if sf.kind == "power":
        return t ** (1.0 / sf.beta)
    # bracket: phi(r) >= r**beta2 for r <= 1 and >= r**beta1 for r >= 1
    lo = min(t ** (1.0 / sf.beta1), t ** (1.0 / sf.beta2))
    hi = max(t ** (1.0 / sf.beta1), t ** (1.0 / sf.beta2))
    if lo == hi:
        return lo
    # the root may sit on an end of the bracket; widen it so rounding cannot hide the sign change
    lo, hi = 0.5 * lo, 2.0 * hi
    return brentq(lambda r: phi_eval(sf, r) - t, lo, hi, xtol=1e-300, rtol=1e-12, maxiter=500)


def check_scale_bounds(sf: ScaleFunction, radii: Sequence[float]) -> bool:
    """Two-sided power comparison on all ordered pairs of a radius grid."""
    radii = np.asarray(radii, dtype=float)
    p = phi_eval(sf, radii)
    ok = True
    for a in range(len(radii)):
        for b in range(a, len(radii)):
            q = radii[b] / radii[a]
            ratio = p[b] / p[a]
            ok &= sf.c1 * q**sf.beta1 <= ratio * (1 + 1e-12) and ratio <= sf.c2 * q**sf.beta2 * (1 + 1e-12)
    return bool(ok)


# ---------------------------------------------------------------------------
# jump kernel
# ---------------------------------------------------------------------------


def volume_at_distance(space: MetricMeasureSpace) -> np.ndarray:
    """``V[x, y] = m(B(x, d(x, y)))`` (open ball, so ``y`` itself is excluded)."""
    n = space.n
    out = np.empty((n, n))
    for i in range(n):
        row = space.dist[i]
        order = np.argsort(row, kind="stable")
        srt = row[order]
        cm = np.concatenate([[0.0], np.cumsum(space.mass[order])])
        out[i] = cm[np.searchsorted(srt, row, side="left")]
    return out


@dataclass(frozen=True, eq=False)
class JumpKernel:
    space: MetricMeasureSpace
    sf: ScaleFunction
    normalization: float
    J: np.ndarray
    weights: np.ndarray
    degree: np.ndarray  # sum_y w(x, y)
    vol: np.ndarray  # V(x, d(x, y)) in this space
    C1: float
    C2: float
    C1_witness: tuple
    C2_witness: tuple

    @property
    def n(self) -> int:
        return self.space.n

    def profile_ratio(self) -> np.ndarray:
        """``J(x, y) V(x, d) phi(d)`` off the diagonal (NaN on it)."""
        d = self.space.dist
        with np.errstate(invalid="ignore", divide="ignore"):
            r = self.J * self.vol * phi_eval(self.sf, d)
        np.fill_diagonal(r, np.nan)
        return r


def _readonly(a):
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


def _assemble(space, sf, normalization, J, vol) -> JumpKernel:
    w = J * space.mass[:, None] * space.mass[None, :]
    w = 0.5 * (w + w.T)  # exact symmetry regardless of rounding in the product
    np.fill_diagonal(w, 0.0)
    d = space.dist
    with np.errstate(invalid="ignore", divide="ignore"):
        prof = J * vol * phi_eval(sf, d)
    np.fill_diagonal(prof, np.nan)
    kmin = np.unravel_index(np.nanargmin(prof), prof.shape)
    kmax = np.unravel_index(np.nanargmax(prof), prof.shape)
    pts = space.points
    return JumpKernel(
        space=space,
        sf=sf,
        normalization=float(normalization),
        J=_readonly(J),
        weights=_readonly(w),
        degree=_readonly(w.sum(axis=1)),
        vol=_readonly(vol),
        C1=float(prof[kmin]),
        C2=float(prof[kmax]),
        C1_witness=(pts[kmin[0]], pts[kmin[1]]),
        C2_witness=(pts[kmax[0]], pts[kmax[1]]),
    )


def build_jump_kernel(space: MetricMeasureSpace, sf: ScaleFunction, normalization: float = 1.0) -> JumpKernel:
    """Symmetrised mixed stable-like kernel on ``space``; fits the two-sided profile constants."""
    vol = volume_at_distance(space)
    d = space.dist
    with np.errstate(divide="ignore", invalid="ignore"):
        J = 2.0 * normalization / ((vol + vol.T) * phi_eval(sf, d))
    np.fill_diagonal(J, 0.0)
    J = 0.5 * (J + J.T)
    return _assemble(space, sf, normalization, J, vol)


# ---------------------------------------------------------------------------
# energies
# ---------------------------------------------------------------------------


def _vec(kernel, f) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    if f.shape != (kernel.n,):
        raise DimensionMismatch(f"expected a function with {kernel.n} values, got shape {f.shape}")
    return f


def dirichlet_energy(kernel: JumpKernel, f, g=None) -> float:
    """``1/2 sum_{x,y} (f(x)-f(y)) (g(x)-g(y)) w(x, y)``."""
    f = _vec(kernel, f)
    g = f if g is None else _vec(kernel, g)
    df = f[:, None] - f[None, :]
    dg = df if g is f else g[:, None] - g[None, :]
    return 0.5 * float(np.sum(kernel.weights * df * dg))


def energy_columns(kernel: JumpKernel, F: np.ndarray) -> np.ndarray:
    """``E(F[:, k], F[:, k])`` for every column, via ``diag(F^T (Deg - W) F)``."""
    F = np.asarray(F, dtype=float)
    if F.ndim != 2 or F.shape[0] != kernel.n:
        raise DimensionMismatch("columns must be functions on the space")
    WF = kernel.weights @ F
    return np.einsum("xk,xk->k", F, kernel.degree[:, None] * F - WF)


def local_energy(kernel: JumpKernel, f: np.ndarray, support: np.ndarray) -> float:
    """Energy of ``f`` known to vanish off ``support`` (index array); O(|support|^2)."""
    fs = f[support]
    W = kernel.weights[np.ix_(support, support)]
    return float(kernel.degree[support] @ fs**2 - fs @ W @ fs)


def _as_index(kernel, s):
    s = np.asarray(s)
    if s.dtype == bool:
        if s.shape != (kernel.n,):
            raise DimensionMismatch("mask has the wrong length")
        return np.flatnonzero(s)
    return s.astype(int)


def restricted_energy(kernel: JumpKernel, f, O) -> float:
    """``sum_{(x,y) in O} (f(x) - f(y))**2 w(x, y)`` over ordered pairs (no factor 1/2).

    ``O`` is either an ``(A, B)`` pair of index arrays / masks meaning ``A x B``,
    or a boolean ``(N, N)`` pair mask.
    """
    f = _vec(kernel, f)
    if isinstance(O, tuple):
        A, B = (_as_index(kernel, s) for s in O)
        if A.size == 0 or B.size == 0:
            return 0.0
        df = f[A][:, None] - f[B][None, :]
        return float(np.sum(kernel.weights[np.ix_(A, B)] * df * df))
    O = np.asarray(O, dtype=bool)
    if O.shape != (kernel.n, kernel.n):
        raise DimensionMismatch("pair mask must be N x N")
    df = f[:, None] - f[None, :]
    return float(np.sum(np.where(O, kernel.weights * df * df, 0.0)))


def weighted_pair_sum(kernel: JumpKernel, a, b, f, A, B) -> float:
    """``sum_{x in A, y in B} a(x) (f(x) - f(y))**2 b(y) w(x, y)`` (helper for cutoff inequalities)."""
    A, B = _as_index(kernel, A), _as_index(kernel, B)
    if A.size == 0 or B.size == 0:
        return 0.0
    df = f[A][:, None] - f[B][None, :]
    return float(np.sum(a[A][:, None] * kernel.weights[np.ix_(A, B)] * df * df * b[B][None, :]))


# ---------------------------------------------------------------------------
# reflected form
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ReflectedForm:
    """Restriction of the jump measure to ``D x D`` with reference measure ``m0``.

    ``kernel`` is a :class:`JumpKernel` on the restricted space ``(D, d, m0)``
    whose ``J`` and weights are sliced from the ambient tables, never rebuilt.
    """

    domain: DomainSpec
    ambient: JumpKernel
    kernel: JumpKernel

    @property
    def indices(self) -> np.ndarray:
        return self.domain.indices

    @property
    def space(self) -> MetricMeasureSpace:
        return self.kernel.space

    @property
    def weights(self) -> np.ndarray:
        return self.kernel.weights

    def energy(self, u) -> float:
        """``1/2 sum_{x != y in D} (u(x) - u(y))**2 w(x, y)``; ``u`` on ``D`` or on the whole space."""
        u = np.asarray(u, dtype=float)
        if u.shape == (self.ambient.n,):
            u = u[self.indices]
        return dirichlet_energy(self.kernel, u)


def reflected_form(kernel: JumpKernel, domain: DomainSpec) -> ReflectedForm:
    if domain is None or not np.asarray(domain.mask).any():
        raise EmptyDomain("reflected form needs a nonempty domain")
    idx = domain.indices
    sub = restrict_space(kernel.space, domain)
    J = np.array(kernel.J[np.ix_(idx, idx)])
    vol = volume_at_distance(sub)
    inner = _assemble(sub, kernel.sf, kernel.normalization, J, vol)
    # keep the ambient weights bit for bit
    w = np.array(kernel.weights[np.ix_(idx, idx)])
    inner = JumpKernel(
        **{**inner.__dict__, "weights": _readonly(w), "degree": _readonly(w.sum(axis=1))}
    )
    return ReflectedForm(domain=domain, ambient=kernel, kernel=inner)


# ---------------------------------------------------------------------------
# tails
# ---------------------------------------------------------------------------


def tail_mass(kernel: JumpKernel, x, r: float) -> float:
    """``sum_{y : d(x,y) >= r} J(x, y) m(y)``."""
    if not r > 0:
        raise ValueError("radius must be positive")
    i = kernel.space.index(x)
    far = kernel.space.dist[i] >= r
    return float(kernel.J[i, far] @ kernel.space.mass[far])


def tail_masses(kernel: JumpKernel, r: float) -> np.ndarray:
    far = kernel.space.dist >= r
    return np.where(far, kernel.J, 0.0) @ kernel.space.mass


@dataclass(frozen=True)
class TailReport:
    c: float
    witness: Optional[tuple]  # (x, r)
    radii: tuple
    per_radius: tuple  # max_x tail(x, r) phi(r) for each radius


def tail_bound_check(kernel: JumpKernel) -> TailReport:
    """Smallest ``c`` with ``tail_mass(x, r) <= c / phi(r)`` over all ``x`` and dyadic ``r``."""
    radii = kernel.space.dyadic_radii()
    best, wit, per = 0.0, None, []
    for r in radii:
        vals = tail_masses(kernel, r) * phi_eval(kernel.sf, r)
        k = int(np.argmax(vals))
        per.append(float(vals[k]))
        if vals[k] > best or wit is None:
            best, wit = float(vals[k]), (kernel.space.points[k], float(r))
    if not np.isfinite(best):
        raise InvariantFailure("kernel", "tail_bound_check", "tail constant is not finite", wit or ())
    return TailReport(c=best, witness=wit, radii=tuple(map(float, radii)), per_radius=tuple(per))


def long_range_energy_bound(kernel: JumpKernel, f, r: float, tail: Optional[TailReport] = None):
    """Energy over pairs at distance ``>= r`` against ``4 c / phi(r) * ||f||^2``.

    ``c`` is the fitted tail constant, enlarged if needed to also cover the
    radius ``r`` itself (the dyadic fit need not contain it).
    """
    f = _vec(kernel, f)
    if not r > 0:
        raise ValueError("radius must be positive")
    tail = tail if tail is not None else tail_bound_check(kernel)
    phir = phi_eval(kernel.sf, r)
    c = max(tail.c, float(tail_masses(kernel, r).max() * phir))
    lhs = restricted_energy(kernel, f, kernel.space.dist >= r)
    rhs = 4.0 * c / phir * float(f**2 @ kernel.space.mass)
    if lhs > rhs * (1 + 1e-12) + 1e-300:
        raise InvariantFailure("kernel", "long_range_energy_bound", f"lhs {lhs} exceeds rhs {rhs}", (r,))
    ratio = lhs / rhs if rhs > 0 else 0.0
    return lhs, rhs, ratio
