"""Weighted Fréchet (Karcher) means and tangent-space covariances."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConvergenceError
from .manifolds import (
    Kind,
    ManifoldId,
    Point,
    basis_arrays,
    coords_of,
    geometry,
    stack_points,
)


@dataclass(frozen=True)
class MeanConfig:
    """Karcher-flow settings; ``tol`` bounds the metric norm of the last update."""

    max_iters: int = 200
    tol: float = 1e-9
    step: float = 1.0

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if not 0 < self.step <= 1:
            raise ValueError("step must lie in (0, 1]")


def _normalized_weights(w, n: int) -> np.ndarray:
    if w is None:
        return np.full(n, 1.0 / n)
    w = np.asarray(w, dtype=float)
    if w.shape != (n,):
        raise ValueError(f"expected {n} weights, got shape {w.shape}")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and nonnegative")
    total = w.sum()
    if total <= 0:
        raise ValueError("weights have zero total mass")
    return w / total


def embedding_average(m: ManifoldId, x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Project the weighted ambient average back onto the manifold."""
    avg = np.tensordot(w, x, axes=1)
    g = geometry(m)
    if m.kind is Kind.SPHERE and np.linalg.norm(avg) < 1e-12:
        # perfectly balanced data: fall back to the heaviest point
        return x[int(np.argmax(w))].copy()
    return g.project(avg)


def karcher_mean(m: ManifoldId, x: np.ndarray, w: np.ndarray, cfg: MeanConfig = MeanConfig(),
                 init: np.ndarray | None = None) -> tuple[np.ndarray, int]:
    """Fixed-point Karcher flow on stacked points.

    Returns ``(mean, iterations)``.  ``w`` must already be normalised.  The
    weighted reduction is a fixed-order ``tensordot`` so results are
    reproducible bit for bit.
    """
    g = geometry(m)
    mu = embedding_average(m, x, w) if init is None else np.array(init, dtype=float)
    for it in range(1, cfg.max_iters + 1):
        v = np.tensordot(w, g.log(mu, x), axes=1)
        if cfg.step != 1.0:
            v = cfg.step * v
        step_norm = float(g.norm(mu, v))
        mu = g.exp(mu, v)
        if step_norm <= cfg.tol:
            return mu, it
    raise ConvergenceError(
        f"Karcher flow did not reach tol={cfg.tol:g} in {cfg.max_iters} iterations "
        f"(last update norm {step_norm:.3g})",
        last=mu,
        iterations=cfg.max_iters,
    )


def karcher_objective(m: ManifoldId, x: np.ndarray, w: np.ndarray, mu: np.ndarray) -> float:
    d = geometry(m).dist(mu, x)
    return float(np.dot(w, d * d))


def _check_sphere_ball(m: ManifoldId, x: np.ndarray, w: np.ndarray):
    center = embedding_average(m, x, w)
    if np.max(geometry(m).dist(center, x)) >= np.pi / 2:
        warnings.warn(
            "sphere data is not contained in an open geodesic ball of radius pi/2 around its "
            "projected chordal mean; the Karcher mean may not be unique",
            RuntimeWarning,
            stacklevel=3,
        )


def frechet_mean(points: Sequence[Point], weights=None, cfg: MeanConfig = MeanConfig()) -> Point:
    """Weighted Fréchet mean, argmin of ``sum_n w_n d(mu, x_n)^2``.

    Parameters
    ----------
    points : sequence of Point
        Nonempty data set on one manifold.
    weights : array_like, optional
        Nonnegative weights summing to one (uniform when omitted).
    cfg : MeanConfig
        Iteration cap, tolerance and step size.

    Raises
    ------
    ConvergenceError
        If the update norm is still above ``cfg.tol`` after ``cfg.max_iters``
        iterations; the last iterate is attached as ``exc.last``.
    """
    m, x = stack_points(points)
    if weights is not None:
        total = float(np.sum(weights))
        if total <= 0:
            raise ValueError("weights have zero total mass")
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"weights must sum to 1 (got {total!r})")
    w = _normalized_weights(weights, len(x))
    if m.kind is Kind.SPHERE:
        _check_sphere_ball(m, x, w)
    try:
        mu, _ = karcher_mean(m, x, w, cfg)
    except ConvergenceError as exc:
        exc.last = Point.trusted(m, exc.last)
        raise
    return Point.trusted(m, mu)


def covariance_coords(c: np.ndarray, w: np.ndarray | None = None, unbiased: bool = True) -> np.ndarray:
    """Second moment of tangent coordinates (the mean is the basepoint, not re-centred)."""
    n = len(c)
    if w is None:
        if unbiased:
            if n < 2:
                raise ValueError("unbiased covariance needs at least two points")
            cov = c.T @ c / (n - 1)
        else:
            cov = c.T @ c / n
    else:
        total = w.sum()
        if total <= 0:
            raise ValueError("weights have zero total mass")
        cov = (c * w[:, None]).T @ c / total
    return 0.5 * (cov + cov.T)


def tangent_coords(m: ManifoldId, mean: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Coordinates of ``log(mean, x_n)`` in the deterministic basis at ``mean``."""
    _, duals = basis_arrays(m, mean)
    return coords_of(duals, geometry(m).log(mean, x), m)


def tangent_covariance(points: Sequence[Point], mean: Point, weights=None, unbiased: bool = True) -> np.ndarray:
    """Covariance of the data in the tangent space at ``mean``.

    Without weights and with ``unbiased=True`` this is
    ``1/(N-1) sum_n c_n c_n^T`` where ``c_n`` are the coordinates of
    ``log(mean, x_n)`` in ``tangent_basis(mean)``.  With weights the EM
    convention ``sum_n w_n c_n c_n^T / sum_n w_n`` is used and ``unbiased`` is
    ignored.  No regularisation is added here.
    """
    m, x = stack_points(points)
    if mean.manifold != m:
        raise ValueError("mean lives on a different manifold")
    c = tangent_coords(m, mean.coords, x)
    w = None if weights is None else np.asarray(weights, dtype=float)
    if w is not None and (w.shape != (len(x),) or np.any(w < 0)):
        raise ValueError("weights must be nonnegative with one entry per point")
    return covariance_coords(c, w, unbiased)
