import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from helpers import line_space, plane_space
from reflekt.errors import EmptyInner
from reflekt.generators import generate_example
from reflekt.kernel import ScaleFunction, build_jump_kernel, dirichlet_energy
from reflekt.partition import (
    build_eta,
    build_mass_functions,
    build_psi,
    check_mass_functions,
    solve_equilibrium_potential,
)
from reflekt.space import make_domain
from reflekt.whitney import build_cover

SF = ScaleFunction.power(1.5)


# ---------------------------------------------------------------------------
# equilibrium potentials
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("name", ["path21", "grid9"])
def test_capacity_matches_dense_minimisation(oracle, name):
    o = oracle["capacities"][name]
    if name == "path21":
        s = line_space(range(21))
    else:
        s = plane_space([(i, j) for i in range(9) for j in range(9)])
    k = build_jump_kernel(s, SF)
    pot = solve_equilibrium_potential(k, o["inner"], o["outer"])
    assert len(o["free"]) <= 12
    assert pot.capacity == pytest.approx(o["capacity"], rel=1e-9)
    assert pot.values[o["free"]] == pytest.approx(o["values"], abs=1e-9)
    assert pot.capacity == pytest.approx(dirichlet_energy(k, pot.values), rel=1e-12)


def test_no_free_points_gives_indicator():
    k = build_jump_kernel(line_space(range(6)), SF)
    pot = solve_equilibrium_potential(k, [1, 2], [1, 2])
    ind = np.zeros(6)
    ind[[1, 2]] = 1
    assert np.array_equal(pot.values, ind)
    assert pot.capacity == pytest.approx(dirichlet_energy(k, ind), rel=1e-12)


def test_symmetric_free_points_are_one_half():
    s = plane_space([(0, 0), (1, 0), (0, 1), (1, 1)])
    k = build_jump_kernel(s, SF)
    pot = solve_equilibrium_potential(k, [0], [0, 1, 2])
    assert pot.values[1] == pytest.approx(0.5, abs=1e-14)
    assert pot.values[2] == pytest.approx(0.5, abs=1e-14)


def test_empty_inner_rejected():
    k = build_jump_kernel(line_space(range(4)), SF)
    with pytest.raises(EmptyInner):
        solve_equilibrium_potential(k, [], [0, 1])


@given(st.integers(8, 40), st.integers(0, 2**31 - 1))
def test_potential_is_minimal_and_in_range(n, seed):
    rng = np.random.default_rng(seed)
    k = build_jump_kernel(line_space(np.cumsum(rng.uniform(0.5, 2, n))), SF)
    a = int(rng.integers(1, n - 1))
    inner = [a]
    outer = list(range(max(0, a - 3), min(n, a + 4)))
    pot = solve_equilibrium_potential(k, inner, outer)
    v = pot.values
    assert (v >= 0).all() and (v <= 1).all()
    assert v[a] == 1 and (v[[x for x in range(n) if x not in outer]] == 0).all()
    free = [x for x in outer if x != a]
    for _ in range(3):
        w = v.copy()
        w[free] += 1e-3 * rng.normal(size=len(free))
        assert dirichlet_energy(k, w) >= pot.capacity * (1 - 1e-12)


# ---------------------------------------------------------------------------
# cutoffs and partition of unity
# ---------------------------------------------------------------------------


def test_isolated_ball_cutoff_is_indicator_and_single_ball_psi():
    s = line_space([0, 5])
    D = make_domain(s, [0])
    k = build_jump_kernel(s, SF)
    cover = build_cover(s, D)
    etas = build_eta(k, cover)
    assert etas.eta[:, 0].tolist() == [0.0, 1.0]
    pou = build_psi(etas, cover, D, k)
    assert pou.psi[:, 0].tolist() == [0.0, 1.0]


def test_symmetric_overlap_splits_evenly():
    pts = [(x, 0) for x in range(-4, 5)] + [(-1.5, 5), (1.5, 5), (0, 4.9)]
    s = plane_space(pts)
    D = make_domain(s, range(9))
    cover = build_cover(s, D)
    assert cover.size == 2
    pou = build_psi(build_eta(build_jump_kernel(s, SF), cover), cover, D)
    z = 11
    assert pou.psi[z].tolist() == pytest.approx([0.5, 0.5], abs=1e-14)


def test_eta_boundary_conditions_exact():
    s, D = generate_example("grid_with_slits", {"n": 17})
    cover = build_cover(s, D)
    etas = build_eta(build_jump_kernel(s, SF), cover)
    assert (etas.eta[cover.membership(2.5)] == 1.0).all()
    assert (etas.eta[~cover.membership(3.0)] == 0.0).all()
    assert np.isfinite(etas.ratios).all() and etas.constant == etas.ratios.max()


def test_psi_sums_to_one_on_path_exterior():
    s, D = generate_example("path_interval", {"N": 101})
    cover = build_cover(s, D)
    pou = build_psi(build_eta(build_jump_kernel(s, SF), cover), cover, D)
    ext = ~D.mask
    assert np.abs(pou.psi[ext].sum(axis=1) - 1).max() <= 1e-12
    assert (pou.psi[D.mask] == 0).all()
    assert pou.sum_error <= 1e-12 and pou.lambda_sum_error <= 1e-12


# ---------------------------------------------------------------------------
# mass functions
# ---------------------------------------------------------------------------


def test_single_index_is_scaled_indicator():
    s = line_space(range(7))
    D = make_domain(s, range(6))
    cover = build_cover(s, D)
    mf = build_mass_functions(s, D, cover)
    assert mf.lam.size == 1
    expected = np.zeros(7)
    expected[5] = mf.alpha
    assert np.array_equal(mf.F[:, 0], expected)
    assert mf.alpha == mf.C2 / (2 * mf.C1 * mf.C3)


def test_disjoint_indices_are_scaled_indicators():
    s = line_space([-10] + list(range(21)) + [30])
    D = make_domain(s, range(1, 22))
    cover = build_cover(s, D)
    mf = build_mass_functions(s, D, cover)
    assert mf.lam.size == 2
    for k, y in enumerate(mf.anchors):
        ball = (s.dist[y] < cover.radii[mf.lam[k]]) & D.mask
        assert np.array_equal(mf.F[:, k], mf.alpha * ball)
        assert mf.integrals[k] == pytest.approx(mf.alpha * s.mass[ball].sum(), rel=1e-15)


@pytest.mark.parametrize("name,params", [("path_interval", {"N": 101}), ("grid_with_slits", {"n": 17}),
                                         ("comb", {"n": 17})])
def test_mass_function_structure(name, params):
    s, D = generate_example(name, params)
    cover = build_cover(s, D)
    mf = build_mass_functions(s, D, cover)
    rep = check_mass_functions(mf, cover)
    assert rep.range_ok and rep.sum_ok and rep.diam_ok and rep.reach_ok and rep.support_in_ball
    assert rep.certificate_ok and mf.mass_bounds_hold(mf.C_certificate)
    assert mf.C_literal == pytest.approx(2 * mf.C1 * mf.C3 / mf.C2, rel=1e-15)
