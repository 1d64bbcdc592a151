import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from helpers import line_space, plane_space
from reflekt.errors import EmptyDomain, MetricAxiomViolation, NonPositiveMass, UnknownGenerator, UnknownPoint
from reflekt.generators import generate_example
from reflekt.space import (
    ball_query,
    build_space,
    check_ahlfors,
    check_doubling,
    domain_from_mask,
    greedy_net,
    make_domain,
    net_overlap,
    restrict_space,
)

point_sets = st.lists(st.tuples(st.integers(0, 30), st.integers(0, 30)), min_size=2, max_size=25, unique=True)


def test_three_collinear_points():
    s = line_space([0, 1, 2])
    assert s.diam == 2 and s.mesh == 1


def test_duplicate_point_rejected():
    with pytest.raises(MetricAxiomViolation):
        build_space(["a", "b"], np.array([[0.0, 0.0], [0.0, 0.0]]), [1, 1])


def test_asymmetric_and_triangle_violations_rejected():
    with pytest.raises(MetricAxiomViolation):
        build_space([0, 1], np.array([[0.0, 1.0], [2.0, 0.0]]), [1, 1])
    d = np.array([[0, 1, 5], [1, 0, 1], [5, 1, 0]], dtype=float)
    with pytest.raises(MetricAxiomViolation):
        build_space([0, 1, 2], d, [1, 1, 1])


def test_nonpositive_mass_rejected():
    with pytest.raises(NonPositiveMass):
        line_space([0, 1], mass=np.array([1.0, 0.0]))


def test_callable_metric_matches_table():
    pts = [(0, 0), (3, 4), (1, 1)]
    s = build_space(pts, lambda a, b: float(np.hypot(a[0] - b[0], a[1] - b[1])), [1, 2, 3])
    assert s.dist[0, 1] == 5.0 and s.index((1, 1)) == 2


def test_path_101_spacing_tenth(oracle):
    s = line_space([k * 0.1 for k in range(101)])
    o = oracle["path101_spacing_0.1"]
    assert s.diam == pytest.approx(o["diam"], rel=1e-12)
    assert s.mesh == pytest.approx(o["mesh"], rel=1e-12)


def test_ball_query_is_open():
    s = line_space(range(11))
    assert ball_query(s, 5, 1) == [5]
    assert ball_query(s, 5, 1.5) == [4, 5, 6]
    with pytest.raises(UnknownPoint):
        ball_query(s, 99, 1)


def test_grid_ball_count(oracle):
    pts = [(i, j) for i in range(21) for j in range(21)]
    s = plane_space(pts)
    assert len(ball_query(s, pts.index((10, 10)), 2.0)) == oracle["grid21_ball_count_r2"]


def test_greedy_net_path(oracle):
    s = line_space(range(11))
    assert greedy_net(s, range(11), 3) == oracle["greedy_net_path10_r3"]


def test_greedy_net_single_point_and_huge_radius():
    s = line_space(range(11))
    assert greedy_net(s, [7], 0.5) == [7]
    g = plane_space([(i, j) for i in range(11) for j in range(11)])
    assert len(greedy_net(g, range(g.n), 20)) == 1


@given(point_sets, st.floats(0.5, 12))
def test_greedy_net_separated_and_covering(pts, r):
    s = plane_space(pts)
    centers = greedy_net(s, range(s.n), r)
    c = [s.index(x) for x in centers]
    sub = s.dist[np.ix_(c, c)]
    assert (sub[~np.eye(len(c), dtype=bool)] >= r).all()
    assert (s.dist[:, c].min(axis=1) < r).all()
    assert net_overlap(s, centers, r / 2) == 1


def test_doubling_path_dimension():
    s, _ = generate_example("path_interval", {"N": 101})
    rep = check_doubling(s)
    assert rep.d1 <= 1.1
    assert np.isfinite(rep.c1)
    for k, v in rep.reevaluate(s).items():
        assert v == pytest.approx(getattr(rep, k), rel=1e-12)


def test_doubling_two_point_space():
    rep = check_doubling(line_space([0, 1]))
    assert np.isfinite(rep.c1) and np.isfinite(rep.doubling_constant)


def test_doubling_grid_dimension():
    g = plane_space([(i, j) for i in range(33) for j in range(33)])
    rep = check_doubling(g)
    assert 1.8 <= rep.d1 <= 2.4


def test_ahlfors_half_path():
    s = line_space(range(101))
    D = make_domain(s, range(51))
    rep = check_ahlfors(s, D)
    assert rep.c_D >= 0.5
    assert rep.boundary_mass_ok


def test_ahlfors_full_space_is_one():
    s = line_space(range(20))
    assert check_ahlfors(s, domain_from_mask(s, np.ones(s.n, bool))).c_D == 1.0


def test_ahlfors_l_shape_witness_at_corner():
    n = 17
    pts = [(i, j) for i in range(n) for j in range(n)]
    s = plane_space(pts)
    keep = [k for k, (i, j) in enumerate(pts) if not (i > 8 and j > 8)]
    rep = check_ahlfors(s, make_domain(s, keep))
    assert 0 < rep.c_D < 1
    x, r = rep.witness
    removed = np.array([(i > 8 and j > 8) for i, j in pts])
    # the witness ball reaches into the removed quadrant ...
    assert (s.dist[x] < r)[removed].any()
    # ... and is no better than the ball at the reentrant corner: flat edges of
    # the quadrant keep about half the mass, the corner about three quarters
    corner = pts.index((8, 8))
    ball = s.dist[corner] < r
    assert rep.c_D <= s.mass[ball & ~removed].sum() / s.mass[ball].sum()


def test_empty_domain_rejected():
    s = line_space(range(5))
    with pytest.raises(EmptyDomain):
        check_ahlfors(s, domain_from_mask(s, np.zeros(5, bool)))


def test_restrict_space_keeps_metric():
    s = line_space(range(10))
    D = make_domain(s, [2, 3, 7])
    sub = restrict_space(s, D)
    assert sub.n == 3 and sub.dist[0, 2] == 5.0


def test_generators():
    s, D = generate_example("path_interval", {"N": 101, "D": [0.25, 0.75]})
    assert s.n == 101 and D.indices.size == 51
    assert generate_example("grid_square", {"n": 17})[0].n == 289
    with pytest.raises(UnknownGenerator):
        generate_example("nope")


def test_carpet_level_two(oracle):
    s, D = generate_example("carpet_prefractal", {"level": 2})
    assert s.n == oracle["carpet_level2_points"]
