"""Shared random generators for the test suite."""

import numpy as np

from manifoldmix.distributions import random_spd
from manifoldmix.manifolds import ManifoldId, Point, exp, from_coords, tangent_basis


def sphere_point(d, rng):
    v = rng.standard_normal(d + 1)
    return Point(ManifoldId.sphere(d), v / np.linalg.norm(v))


def spd_point(d, rng, lo=0.2, hi=3.0):
    return Point(ManifoldId.spd(d), random_spd(d, lo, hi, rng))


def tangent_of_length(base, rng, length):
    """Tangent at ``base`` with metric norm ``length`` in a uniformly random direction."""
    c = rng.standard_normal(base.manifold.intrinsic_dim)
    c *= length / np.linalg.norm(c)
    return from_coords(tangent_basis(base), c)


def rotation(n, rng):
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def sphere_ball(d, n, radius, rng, center=None):
    """``n`` points uniformly spread (in the tangent disc) within ``radius`` of ``center``."""
    m = ManifoldId.sphere(d)
    center = Point(m, np.eye(d + 1)[0]) if center is None else center
    basis = tangent_basis(center)
    out = []
    for _ in range(n):
        c = rng.standard_normal(d)
        c *= radius * rng.uniform() ** (1.0 / d) / np.linalg.norm(c)
        out.append(exp(center, from_coords(basis, c)))
    return out
