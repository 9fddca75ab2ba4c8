"""Target densities and samplers on the sphere and on SPD matrices.

Covers Riemannian Gaussians (RGD), wrapped Gaussians (WGD), von Mises-Fisher
(vMF) and inverse-Wishart (iWD) distributions, plus mixtures of one family.
Every sampler takes an explicit ``numpy.random.Generator`` and is a
deterministic function of its parameters and the generator state.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import PathologicalCovarianceError, UnsupportedError
from .manifolds import (
    Kind,
    ManifoldId,
    Point,
    basis_arrays,
    coords_of,
    geometry,
    sym,
    unvech_orthonormal,
    vectors_of,
    wrap_points,
)

LOG_2PI = math.log(2.0 * math.pi)
#: tangent norms of sphere samples stay below pi minus this margin
SAMPLE_NORM_MARGIN = 1e-6
MH_BURN_IN = 200
MH_THIN = 5


class Family(str, enum.Enum):
    RGD = "rgd"
    WGD = "wgd"
    VMF = "vmf"
    IWD = "iwd"


def _check_cov(cov, dim: int) -> np.ndarray:
    cov = np.asarray(cov, dtype=float)
    if cov.shape != (dim, dim):
        raise ValueError(f"covariance must be {dim}x{dim}, got {cov.shape}")
    if np.max(np.abs(cov - cov.T)) > 1e-12 * max(1.0, np.max(np.abs(cov))):
        raise ValueError("covariance must be symmetric")
    if np.linalg.eigvalsh(cov)[0] <= 0:
        raise ValueError("covariance must be positive definite")
    return cov


@dataclass(frozen=True, eq=False)
class RgdParams:
    """Mean on the manifold, covariance in the deterministic basis at the mean."""

    mean: Point
    cov: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "cov", _check_cov(self.cov, self.mean.manifold.intrinsic_dim))

    @property
    def manifold(self) -> ManifoldId:
        return self.mean.manifold


@dataclass(frozen=True, eq=False)
class VmfParams:
    mean_direction: Point
    concentration: float

    def __post_init__(self):
        if not self.concentration > 0:
            raise ValueError("vMF concentration must be positive")

    @property
    def manifold(self) -> ManifoldId:
        return self.mean_direction.manifold


@dataclass(frozen=True, eq=False)
class InverseWishartParams:
    scale: Point
    dof: float

    def __post_init__(self):
        m = self.scale.manifold
        if m.kind is not Kind.SPD:
            raise UnsupportedError("inverse-Wishart scale must be an SPD point")
        if not self.dof > m.size - 1:
            raise ValueError(f"inverse-Wishart dof must exceed d - 1 = {m.size - 1}")

    @property
    def manifold(self) -> ManifoldId:
        return self.scale.manifold


@dataclass(frozen=True, eq=False)
class TargetSpec:
    """A mixture of components from a single family."""

    manifold: ManifoldId
    family: Family
    weights: np.ndarray
    components: tuple

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or len(w) != len(self.components) or len(w) == 0:
            raise ValueError("need one weight per component")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("target weights must form a simplex")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "components", tuple(self.components))
        for comp in self.components:
            if comp.manifold != self.manifold:
                raise ValueError("component lives on a different manifold")


# ---------------------------------------------------------------------------
# densities


def gaussian_logpdf(c: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    """Log density of N(mean, cov) at the rows of ``c`` (Cholesky based)."""
    chol = np.linalg.cholesky(cov)
    diff = np.atleast_2d(c) - mean
    sol = np.linalg.solve(chol, diff.T)
    maha = np.sum(sol * sol, axis=0)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    return -0.5 * (len(mean) * LOG_2PI + logdet + maha)


def rgd_logpdf_array(m: ManifoldId, mean: np.ndarray, cov: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Approximate RGD log density at stacked points ``x``.

    The Gaussian normaliser is used as is (valid for low-variance data).
    """
    _, duals = basis_arrays(m, mean)
    c = coords_of(duals, geometry(m).log(mean, x), m)
    return gaussian_logpdf(c, np.zeros(m.intrinsic_dim), cov)


def rgd_logpdf(p: RgdParams, x: Point) -> float:
    """Log density of a Riemannian Gaussian at ``x``.

    ``-1/2 (D log 2pi + log det S + c^T S^-1 c)`` with ``c`` the coordinates of
    ``log(mean, x)``.  Raises ``CutLocusError`` at the antipode of the mean.
    """
    if x.manifold != p.manifold:
        raise ValueError("point lives on a different manifold")
    return float(rgd_logpdf_array(p.manifold, p.mean.coords, p.cov, x.coords[None])[0])


# ---------------------------------------------------------------------------
# samplers


def _tangent_gaussian(rng: np.random.Generator, cov: np.ndarray, n: int) -> np.ndarray:
    chol = np.linalg.cholesky(cov)
    return rng.standard_normal((n, cov.shape[0])) @ chol.T


def _push_forward(m: ManifoldId, mean: np.ndarray, c: np.ndarray) -> list[Point]:
    vectors, _ = basis_arrays(m, mean)
    u = vectors_of(vectors, c, m)
    if m.kind is Kind.SPD:
        u = sym(u)
    return wrap_points(m, geometry(m).exp(mean, u))


def _batch_size(n: int) -> int:
    return max(64, 2 * n)


def sample_wgd(p: RgdParams, n: int, rng: np.random.Generator) -> list[Point]:
    """Wrapped Gaussian: push a tangent Gaussian at the mean through Exp.

    On the sphere draws with norm at or beyond ``pi - 1e-6`` are discarded and
    redrawn, so the map stays injective.
    """
    m = p.manifold
    if n == 0:
        return []
    if m.kind is Kind.SPD:
        return _push_forward(m, p.mean.coords, _tangent_gaussian(rng, p.cov, n))
    limit = math.pi - SAMPLE_NORM_MARGIN
    kept, have = [], 0
    while have < n:
        c = _tangent_gaussian(rng, p.cov, _batch_size(n - have))
        c = c[np.linalg.norm(c, axis=1) < limit]
        kept.append(c)
        have += len(c)
    return _push_forward(m, p.mean.coords, np.concatenate(kept)[:n])


def _rgd_sphere_coords(p: RgdParams, n: int, rng: np.random.Generator) -> np.ndarray:
    g = geometry(p.manifold)
    limit = math.pi - SAMPLE_NORM_MARGIN
    kept, have, proposed = [], 0, 0
    while have < n:
        size = _batch_size(n - have)
        c = _tangent_gaussian(rng, p.cov, size)
        u = rng.random(size)
        r = np.linalg.norm(c, axis=1)
        ok = r < limit
        ok[ok] = np.log(u[ok]) < g.log_exp_volume(r[ok])
        proposed += size
        kept.append(c[ok])
        have += int(ok.sum())
        if proposed >= 100_000 and have / proposed < 1e-4:
            raise PathologicalCovarianceError(
                f"RGD rejection sampler acceptance rate {have / proposed:.2e} is below 1e-4"
            )
    return np.concatenate(kept)[:n]


def _rgd_spd_coords(p: RgdParams, n: int, rng: np.random.Generator) -> np.ndarray:
    """Independence Metropolis with the wrapped Gaussian as proposal.

    In basis coordinates the whitened tangent is just ``unvech(c)``, so the
    acceptance ratio only needs the exp-map volume factor of the proposals.
    """
    m = p.manifold
    g = geometry(m)
    steps = MH_BURN_IN + MH_THIN * n
    props = _tangent_gaussian(rng, p.cov, steps + 1)
    logu = np.log(rng.random(steps))
    logvol = g.log_exp_volume(unvech_orthonormal(props, m.size))
    cur = 0
    out = np.empty((n, m.intrinsic_dim))
    j = 0
    for t in range(steps):
        if logu[t] < logvol[t + 1] - logvol[cur]:
            cur = t + 1
        if t >= MH_BURN_IN and (t - MH_BURN_IN) % MH_THIN == MH_THIN - 1:
            out[j] = props[cur]
            j += 1
    return out


def sample_rgd(p: RgdParams, n: int, rng: np.random.Generator) -> list[Point]:
    """Draw from the Riemannian Gaussian whose density is ``rgd_logpdf``.

    Sphere: exact rejection from the tangent Gaussian with acceptance
    ``(sin r / r)^(d-1)``.  SPD: independence Metropolis (200 burn-in steps,
    thinning 5) correcting for the exp-map volume factor.
    """
    if n == 0:
        return []
    m = p.manifold
    if m.kind is Kind.SPHERE:
        c = _rgd_sphere_coords(p, n, rng)
    else:
        c = _rgd_spd_coords(p, n, rng)
    return _push_forward(m, p.mean.coords, c)


def _wood_cosines(kappa: float, dim: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """Cosine of the angle to the mode, for a vMF on the unit sphere in R^dim."""
    k = dim - 1
    b = k / (2.0 * kappa + math.sqrt(4.0 * kappa * kappa + k * k))
    x0 = (1.0 - b) / (1.0 + b)
    c = kappa * x0 + k * math.log(1.0 - x0 * x0)
    kept, have = [], 0
    while have < n:
        size = _batch_size(n - have)
        z = rng.beta(k / 2.0, k / 2.0, size)
        w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z)
        u = rng.random(size)
        ok = kappa * w + k * np.log(1.0 - x0 * w) - c >= np.log(u)
        kept.append(w[ok])
        have += int(ok.sum())
    return np.concatenate(kept)[:n]


def sample_vmf(p: VmfParams, n: int, rng: np.random.Generator) -> list[Point]:
    """von Mises-Fisher draws via Wood's rejection scheme for the cosine."""
    m = p.manifold
    if m.kind is not Kind.SPHERE:
        raise UnsupportedError("von Mises-Fisher sampling is only defined on spheres")
    if n == 0:
        return []
    mu = p.mean_direction.coords
    w = _wood_cosines(float(p.concentration), m.size + 1, n, rng)
    dirs = rng.standard_normal((n, m.size))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    vectors, _ = basis_arrays(m, mu)
    v = dirs @ vectors
    x = w[:, None] * mu + np.sqrt(np.maximum(1.0 - w * w, 0.0))[:, None] * v
    return wrap_points(m, geometry(m).normalize(x))


def sample_inverse_wishart(p: InverseWishartParams, n: int, rng: np.random.Generator) -> list[Point]:
    """Inverse-Wishart draws: Bartlett-factor a Wishart on ``scale^-1``, then invert.

    Draws with condition number above 1e12 are redrawn (at most 100 times per
    sample).
    """
    m = p.manifold
    d = m.size
    chol = np.linalg.cholesky(np.linalg.inv(p.scale.coords))
    il = np.tril_indices(d, -1)
    out = []
    for _ in range(n):
        for _attempt in range(100):
            a = np.zeros((d, d))
            a[np.diag_indices(d)] = np.sqrt(rng.chisquare(p.dof - np.arange(d)))
            a[il] = rng.standard_normal(len(il[0]))
            la = chol @ a
            inv_la = np.linalg.inv(la)
            x = sym(inv_la.T @ inv_la)
            w = np.linalg.eigvalsh(x)
            if w[0] > 0 and w[-1] / w[0] <= 1e12:
                out.append(x)
                break
        else:
            raise PathologicalCovarianceError("inverse-Wishart draw stayed singular after 100 attempts")
    return wrap_points(m, np.asarray(out))


def random_spd(dim: int, eig_low: float, eig_high: float, rng: np.random.Generator) -> np.ndarray:
    """``Q diag(l) Q^T`` with Haar-random ``Q`` and eigenvalues uniform in ``[eig_low, eig_high]``."""
    if not 0 < eig_low <= eig_high:
        raise ValueError("need 0 < eig_low <= eig_high")
    q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    q = q * np.where(np.diag(r) < 0, -1.0, 1.0)
    lam = rng.uniform(eig_low, eig_high, dim)
    if eig_low == eig_high:
        return eig_low * np.eye(dim)
    return sym((q * lam) @ q.T)


_SAMPLERS = {
    Family.RGD: sample_rgd,
    Family.WGD: sample_wgd,
    Family.VMF: sample_vmf,
    Family.IWD: sample_inverse_wishart,
}


def sample_component(family: Family, params, n: int, rng: np.random.Generator) -> list[Point]:
    return _SAMPLERS[Family(family)](params, n, rng)


def sample_target(spec: TargetSpec, n: int, rng: np.random.Generator) -> list[Point]:
    """Draw ``n`` points from a target mixture, in draw order.

    Component labels are drawn first; each component then samples its share
    in one call.  A single-component spec draws no labels, so it consumes the
    generator exactly like the family sampler.
    """
    return sample_target_labels(spec, n, rng)[0]


def sample_target_labels(spec: TargetSpec, n: int, rng: np.random.Generator) -> tuple[list[Point], np.ndarray]:
    """``sample_target`` plus the component label of every draw."""
    k = len(spec.components)
    if k == 1:
        return sample_component(spec.family, spec.components[0], n, rng), np.zeros(n, dtype=int)
    labels = rng.choice(k, size=n, p=spec.weights)
    out: list[Point | None] = [None] * n
    for j, comp in enumerate(spec.components):
        idx = np.flatnonzero(labels == j)
        if len(idx):
            for i, pt in zip(idx, sample_component(spec.family, comp, len(idx), rng)):
                out[i] = pt
    return out, labels
