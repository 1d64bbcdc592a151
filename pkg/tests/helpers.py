"""Small constructors shared by the tests."""
import numpy as np

from reflekt.space import build_space

ACCEPTANCE_LINES = []


def line_space(xs, mass=None):
    xs = [float(x) for x in xs]
    mass = np.ones(len(xs)) if mass is None else mass
    return build_space(list(range(len(xs))), np.abs(np.subtract.outer(xs, xs)), mass, coords=np.array(xs)[:, None])


def plane_space(pts, mass=None):
    pts = np.asarray(pts, dtype=float)
    d = np.sqrt(((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1))
    mass = np.ones(len(pts)) if mass is None else mass
    return build_space(list(range(len(pts))), d, mass, coords=pts)
