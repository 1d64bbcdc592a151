import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from helpers import line_space
from reflekt.extension import (
    ball_mean,
    build_extension,
    check_containments,
    check_pointwise_geometry,
    energy_split_report,
    extend,
    extension_energy_bound,
    l2_locality_report,
    probe_centers,
    probe_functions,
    probe_radii,
)
from reflekt.generators import generate_example
from reflekt.kernel import ScaleFunction, build_jump_kernel
from reflekt.partition import build_eta, build_mass_functions, build_psi
from reflekt.space import make_domain
from reflekt.whitney import build_cover

SF = ScaleFunction.power(1.5)


def _pipeline(name, params):
    s, D = generate_example(name, params)
    k = build_jump_kernel(s, SF)
    cover = build_cover(s, D)
    pou = build_psi(build_eta(k, cover), cover, D, k)
    mf = build_mass_functions(s, D, cover)
    return k, build_extension(cover, pou, mf)


# shared by the hypothesis property below, which cannot take module fixtures
_PATH = _pipeline("path_interval", {"N": 51})


@pytest.fixture(scope="module")
def path():
    return _pipeline("path_interval", {"N": 101})


@pytest.fixture(scope="module")
def slits():
    return _pipeline("grid_with_slits", {"n": 17})


def test_ball_mean_examples(path):
    _, ext = path
    mf, s = ext.mass_functions, ext.space
    i = int(mf.lam[0])
    assert ball_mean(mf, np.full(s.n, 3.25), i, s.mass) == pytest.approx(3.25, rel=1e-15)
    x = s.coords[:, 0]
    col = mf.F[:, mf.column(i)]
    brute = sum(col[p] * x[p] * s.mass[p] for p in range(s.n)) / sum(col[p] * s.mass[p] for p in range(s.n))
    assert ball_mean(mf, x, i, s.mass) == pytest.approx(brute, rel=1e-13)


def test_half_mass_indicator_averages_to_half():
    s = line_space([-10] + list(range(21)) + [30])
    D = make_domain(s, range(1, 22))
    mf = build_mass_functions(s, D, build_cover(s, D))
    k = 0
    supp = np.flatnonzero(mf.F[:, k] > 0)
    assert supp.size == 2 and mf.F[supp[0], k] == mf.F[supp[1], k]
    u = np.zeros(s.n)
    u[supp[0]] = 1
    assert ball_mean(mf, u, int(mf.lam[k]), s.mass) == 0.5


@pytest.mark.parametrize("fx", ["path", "slits"])
def test_extend_constants(fx, request):
    _, ext = request.getfixturevalue(fx)
    s, D = ext.space, ext.domain
    one = extend(ext, np.ones(D.indices.size))
    near = ext.cover.dist_to_domain < D.diam
    assert np.abs(one[near] - 1).max() <= 1e-12
    assert (extend(ext, np.zeros(D.indices.size)) == 0).all()


def test_single_dilate_point_copies_ball_mean(slits):
    _, ext = slits
    s, D = ext.space, ext.domain
    M3 = ext.cover.membership(3.0)[:, ext.mass_functions.lam]
    u = np.sin(np.arange(s.n) * 0.37)
    g = extend(ext, u[D.indices])
    hits = 0
    for x in ext.domain.exterior:
        cols = np.flatnonzero(M3[x])
        if cols.size == 1:
            i = int(ext.mass_functions.lam[cols[0]])
            assert g[x] == pytest.approx(ball_mean(ext.mass_functions, u, i, s.mass), rel=1e-12)
            hits += 1
    assert hits > 0


@given(st.integers(0, 2**31 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_extension_is_linear_and_fixes_domain(path_seed, a, b):
    _, ext = _PATH
    rng = np.random.default_rng(path_seed)
    n = ext.domain.indices.size
    u, v = rng.normal(size=n), rng.normal(size=n)
    g = extend(ext, a * u + b * v)
    assert np.allclose(g, a * extend(ext, u) + b * extend(ext, v), atol=1e-12)
    assert np.array_equal(g[ext.domain.indices], a * u + b * v)


def test_l2_report_zero_function_vacuous(path):
    _, ext = path
    s, D = ext.space, ext.domain
    tab = l2_locality_report(ext, [np.zeros(s.n)], probe_centers(s, D, 8), probe_radii(s, D), local=False)
    assert tab.vacuous.all() and tab.constant == 0.0


def test_l2_constant_function_deep_inside(path):
    _, ext = path
    s, D = ext.space, ext.domain
    x0 = int(D.indices[D.indices.size // 2])
    r = 2 * s.mesh
    tab = l2_locality_report(ext, [np.ones(s.n)], [x0], [r], local=False)
    ball = s.dist[x0] < r
    assert tab.lhs[0] == pytest.approx(s.mass[ball].sum(), rel=1e-12)
    assert tab.ratios[0] <= 1.0 + 1e-12


def test_energy_split_examples(path):
    k, ext = path
    s, D = ext.space, ext.domain
    cen = probe_centers(s, D, 16)
    rad = probe_radii(s, D)
    rep = energy_split_report(ext, k, [np.ones(s.n)], cen, rad, local=False)
    for t in (rep.near, rep.off, rep.cross):
        assert (t.lhs == 0).all()
    # support deep inside D: the extension vanishes off D
    u = np.zeros(s.n)
    mid = D.indices[D.indices.size // 2]
    u[s.dist[mid] < 4 * s.mesh] = 1
    x0 = int(mid)
    rep = energy_split_report(ext, k, [u], [x0], [2 * s.mesh], local=False)
    assert rep.near.lhs[0] == 0 and rep.off.lhs[0] == 0
    rng = np.random.default_rng(3)
    rep = energy_split_report(ext, k, [rng.normal(size=s.n) for _ in range(3)], cen, rad)
    assert rep.additivity_error <= 1e-12


def test_global_energy_bound(path):
    k, ext = path
    n = ext.domain.indices.size
    assert extension_energy_bound(ext, k, np.zeros(n)) == (0.0, 0.0, 0.0)
    amb, refl, ratio = extension_energy_bound(ext, k, np.ones(n))
    assert amb > 0 and refl > 0 and np.isfinite(ratio)


def test_global_energy_ratio_refinement_on_carpet():
    ratios = []
    for level in (2, 3):
        k, ext = _pipeline("carpet_prefractal", {"level": level})
        n = ext.domain.indices.size
        ratios.append(extension_energy_bound(ext, k, np.ones(n))[2])
    assert max(ratios) / min(ratios) <= 2.0


@pytest.mark.parametrize("fx", ["path", "slits"])
def test_containments_and_pointwise_geometry(fx, request):
    _, ext = request.getfixturevalue(fx)
    c = check_containments(ext)
    assert c.within_7r and c.within_14r and c.worst_7 <= 1 and c.worst_14 <= 1
    p = check_pointwise_geometry(ext)
    assert p.separation_ok and p.domain_distance_ok and p.support_distance_ok


def test_probe_family_is_seeded():
    s, D = generate_example("comb", {"n": 17})
    a, b = probe_functions(s, D, seed=5), probe_functions(s, D, seed=5)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert np.array_equal(probe_centers(s, D, 10, 5), probe_centers(s, D, 10, 5))
