"""Three Gaussian mixture estimators for manifold-valued data.

* Euclidean: plain EM on embedding coordinates (sphere points as vectors in
  R^{d+1}, SPD matrices in the orthonormal symmetric basis).
* Tangent: every point is sent to one tangent space with ``log`` and a
  Euclidean GMM is fitted there.  Densities are read back through the same
  projection with no volume correction.
* Riemannian: EM with Riemannian Gaussian components, each with its own mean
  on the manifold and its covariance in the tangent space at that mean.

All three start from the same hard assignments produced by ``init_shared``.
"""

from __future__ import annotations

import enum
import json
import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .distributions import gaussian_logpdf
from .errors import ConvergenceError, CutLocusError, ManifoldError, UnsupportedError
from .frechet import MeanConfig, covariance_coords, karcher_mean
from .manifolds import (
    CUT_LOCUS_MARGIN,
    Kind,
    ManifoldId,
    Point,
    basis_arrays,
    coords_of,
    geometry,
    stack_points,
)

log = logging.getLogger(__name__)

#: log-density assigned to a test point the tangent model cannot see
LOG_FLOOR = -745.0

_EM_MEAN_CFG = MeanConfig(max_iters=200, tol=1e-10)


class Variant(str, enum.Enum):
    EUCLIDEAN = "euclidean"
    TANGENT = "tangent"
    RIEMANNIAN = "riemannian"


@dataclass(frozen=True)
class EmConfig:
    """EM stopping rule and safeguards.

    ``reseed_threshold`` is the minimum responsibility mass a component may
    keep before it is reseeded; ``None`` means ``1e-3 * N``.
    """

    max_iters: int = 100
    ll_tol: float = 1e-6
    cov_reg: float = 1e-8
    reseed_threshold: float | None = None

    def __post_init__(self):
        if self.max_iters < 1 or not self.ll_tol > 0 or not self.cov_reg > 0:
            raise ValueError("EM settings must be positive")
        if self.reseed_threshold is not None and not self.reseed_threshold > 0:
            raise ValueError("reseed_threshold must be positive")

    def threshold(self, n: int) -> float:
        return 1e-3 * n if self.reseed_threshold is None else self.reseed_threshold


@dataclass(frozen=True, eq=False)
class Component:
    """One mixture component.

    ``mean`` is an embedding vector (Euclidean), a tangent-coordinate vector
    (Tangent) or a ``Point`` (Riemannian); ``cov`` lives in the matching
    coordinates.
    """

    prior: float
    mean: np.ndarray | Point
    cov: np.ndarray


@dataclass(frozen=True, eq=False)
class Mixture:
    variant: Variant
    manifold: ManifoldId
    components: tuple[Component, ...]
    train_log: tuple[float, ...] = ()
    base: Point | None = None
    n_iter: int = 0
    reseeds: int = 0

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if not self.components:
            raise ValueError("a mixture needs at least one component")
        total = sum(c.prior for c in self.components)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"priors must sum to 1 (got {total!r})")
        if (self.variant is Variant.TANGENT) != (self.base is not None):
            raise ValueError("exactly the tangent variant carries a basepoint")

    @property
    def k(self) -> int:
        return len(self.components)

    @property
    def priors(self) -> np.ndarray:
        return np.array([c.prior for c in self.components])


@dataclass(frozen=True)
class LoglikReport:
    total: float
    per_point: np.ndarray
    incidents: int


# ---------------------------------------------------------------------------
# coordinates


def embed(m: ManifoldId, x: np.ndarray) -> np.ndarray:
    """Embedding coordinates used by the Euclidean variant."""
    return geometry(m).embed(x)


def _cut_mask(m: ManifoldId, base: np.ndarray, x: np.ndarray) -> np.ndarray:
    if m.kind is not Kind.SPHERE:
        return np.zeros(len(x), dtype=bool)
    return geometry(m).dist(base, x) > np.pi - CUT_LOCUS_MARGIN


def _coords_at(m: ManifoldId, base: np.ndarray, x: np.ndarray) -> np.ndarray:
    _, duals = basis_arrays(m, base)
    return coords_of(duals, geometry(m).log(base, x, check=False), m)


def tangent_projection(m: ManifoldId, base: np.ndarray, x: np.ndarray) -> np.ndarray:
    """``to_coords(log(base, x_n))`` for every row, refusing cut-locus points."""
    bad = _cut_mask(m, base, x)
    if np.any(bad):
        raise CutLocusError(
            f"{int(bad.sum())} point(s) lie on the cut locus of the tangent basepoint, where "
            "log is undefined; a single tangent space cannot cover the whole manifold"
        )
    return _coords_at(m, base, x)


def _regularized(cov: np.ndarray, reg: float) -> np.ndarray:
    cov = 0.5 * (cov + cov.T)
    return cov + reg * np.eye(len(cov))


# ---------------------------------------------------------------------------
# initialisation


def init_shared(data: Sequence[Point], k: int, rng: np.random.Generator, max_iters: int = 50) -> np.ndarray:
    """Geodesic k-means++ seeding followed by Fréchet-mean k-means.

    Returns one integer label in ``0..k-1`` per point.
    """
    m, x = stack_points(data)
    n = len(x)
    if k < 1 or n < k:
        raise ValueError(f"need at least k={k} points, got {n}")
    distinct = len(np.unique(np.round(x.reshape(n, -1), 14), axis=0))
    if distinct < k:
        raise ValueError(f"only {distinct} distinct points for k={k} clusters")
    g = geometry(m)
    if k == 1:
        return np.zeros(n, dtype=int)

    centers = [x[int(rng.integers(n))]]
    d2 = g.dist(centers[0], x) ** 2
    for _ in range(1, k):
        p = d2 / d2.sum()
        c = x[int(rng.choice(n, p=p))]
        centers.append(c)
        d2 = np.minimum(d2, g.dist(c, x) ** 2)
    centers = np.array(centers)

    labels = None
    for _ in range(max_iters):
        dist = np.stack([g.dist(c, x) for c in centers])
        new = np.argmin(dist, axis=0)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for j in range(k):
            members = x[labels == j]
            if len(members) == 0:
                far = int(np.argmax(dist[labels, np.arange(n)]))
                centers[j] = x[far]
                continue
            w = np.full(len(members), 1.0 / len(members))
            try:
                centers[j], _ = karcher_mean(m, members, w, init=centers[j])
            except ConvergenceError as exc:
                centers[j] = exc.last
    return labels.astype(int)


def _check_labels(labels, n: int) -> tuple[np.ndarray, int]:
    labels = np.asarray(labels, dtype=int)
    if labels.shape != (n,) or labels.min() < 0:
        raise ValueError("need one nonnegative label per point")
    k = int(labels.max()) + 1
    if len(np.unique(labels)) != k:
        raise ValueError("every cluster label 0..k-1 must be used")
    return labels, k


# ---------------------------------------------------------------------------
# EM on flat coordinates


def _isotropic_like(covs, dim):
    var = np.mean([np.trace(c) / dim for c in covs])
    return var * np.eye(dim)


def _flat_em(z: np.ndarray, labels: np.ndarray, k: int, cfg: EmConfig):
    n, dim = z.shape
    pis = np.empty(k)
    mus = np.empty((k, dim))
    covs = np.empty((k, dim, dim))
    for j in range(k):
        zj = z[labels == j]
        pis[j] = len(zj) / n
        mus[j] = zj.mean(axis=0)
        diff = zj - mus[j]
        covs[j] = _regularized(diff.T @ diff / len(zj), cfg.cov_reg)

    def estep():
        logp = np.stack([np.log(pis[j]) + gaussian_logpdf(z, mus[j], covs[j]) for j in range(k)], axis=1)
        lse = logsumexp(logp, axis=1)
        return float(np.sum(lse)), np.exp(logp - lse[:, None]), lse

    trace, reseeds, iters = [], 0, 0
    thr = cfg.threshold(n)
    while True:
        ll, r, lse = estep()
        trace.append(ll)
        if len(trace) > 1 and abs(trace[-1] - trace[-2]) < cfg.ll_tol:
            break
        if iters == cfg.max_iters:
            break
        nk = r.sum(axis=0)
        for j in range(k):
            if nk[j] < thr:
                reseeds += 1
                worst = int(np.argmin(lse))
                mus[j] = z[worst]
                covs[j] = _isotropic_like([covs[i] for i in range(k) if i != j] or [covs[j]], dim)
                pis[j] = 1.0 / n
                continue
            pis[j] = nk[j] / n
            mus[j] = r[:, j] @ z / nk[j]
            diff = z - mus[j]
            covs[j] = _regularized((diff * r[:, j, None]).T @ diff / nk[j], cfg.cov_reg)
        pis /= pis.sum()
        iters += 1
    return pis, mus, covs, tuple(trace), iters, reseeds


def fit_euclidean(data: Sequence[Point], assignments, cfg: EmConfig = EmConfig()) -> Mixture:
    """EM in the embedding space; component means are not kept on the manifold."""
    m, x = stack_points(data)
    labels, k = _check_labels(assignments, len(x))
    pis, mus, covs, trace, iters, reseeds = _flat_em(embed(m, x), labels, k, cfg)
    comps = tuple(Component(float(p), mu, c) for p, mu, c in zip(pis, mus, covs))
    return Mixture(Variant.EUCLIDEAN, m, comps, trace, None, iters, reseeds)


def fit_tangent(data: Sequence[Point], base: Point, assignments, cfg: EmConfig = EmConfig()) -> Mixture:
    """Euclidean EM on ``log``-coordinates in the single tangent space at ``base``.

    Raises ``CutLocusError`` if a training point sits at the antipode of
    ``base`` on the sphere.
    """
    m, x = stack_points(data)
    if base.manifold != m:
        raise ValueError("basepoint lives on a different manifold")
    labels, k = _check_labels(assignments, len(x))
    z = tangent_projection(m, base.coords, x)
    pis, mus, covs, trace, iters, reseeds = _flat_em(z, labels, k, cfg)
    comps = tuple(Component(float(p), mu, c) for p, mu, c in zip(pis, mus, covs))
    return Mixture(Variant.TANGENT, m, comps, trace, base, iters, reseeds)


# ---------------------------------------------------------------------------
# Riemannian EM


def _rgd_component_logpdf(m: ManifoldId, mean: np.ndarray, cov: np.ndarray, x: np.ndarray) -> np.ndarray:
    out = np.full(len(x), -np.inf)
    ok = ~_cut_mask(m, mean, x)
    if np.any(ok):
        out[ok] = gaussian_logpdf(_coords_at(m, mean, x[ok]), np.zeros(len(cov)), cov)
    return out


def _weighted_second_moment(m, mean, x, w):
    keep = w > 0
    c = _coords_at(m, mean, x[keep])
    return covariance_coords(c, w[keep])


def _component_objective(cov_emp: np.ndarray, reg: float) -> float:
    """Per-unit-mass EM objective of a component whose covariance is set from ``cov_emp``."""
    s = _regularized(cov_emp, reg)
    _, logdet = np.linalg.slogdet(s)
    return -0.5 * (logdet + np.trace(np.linalg.solve(s, cov_emp)))


def _riemannian_mean_step(m, x, w, mu_old, reg):
    """Weighted Karcher mean, kept only if it does not lower the component objective.

    The Fréchet mean minimises the trace of the tangent covariance, while
    the EM objective depends on its determinant.  Falling back to the previous
    mean when the determinant grows makes every M-step a generalised EM step.
    """
    keep = w > 0
    xs, ws = x[keep], w[keep] / w[keep].sum()
    try:
        mu_new, _ = karcher_mean(m, xs, ws, _EM_MEAN_CFG, init=mu_old)
    except ConvergenceError as exc:
        mu_new = exc.last
    cov_new = covariance_coords(_coords_at(m, mu_new, xs), ws)
    cov_old = covariance_coords(_coords_at(m, mu_old, xs), ws)
    if _component_objective(cov_new, reg) >= _component_objective(cov_old, reg):
        return mu_new, cov_new
    return mu_old, cov_old


def fit_riemannian(data: Sequence[Point], assignments, cfg: EmConfig = EmConfig()) -> Mixture:
    """EM for a mixture of Riemannian Gaussians.

    E-step: responsibilities from the component log densities.  M-step:
    weighted Fréchet mean, weighted tangent covariance at that mean, and the
    mean responsibility as prior.  Stops when the training log-likelihood
    changes by less than ``cfg.ll_tol`` or after ``cfg.max_iters`` M-steps.
    """
    m, x = stack_points(data)
    n = len(x)
    labels, k = _check_labels(assignments, n)
    dim = m.intrinsic_dim
    pis = np.empty(k)
    mus = []
    covs = np.empty((k, dim, dim))
    for j in range(k):
        xj = x[labels == j]
        pis[j] = len(xj) / n
        w = np.full(len(xj), 1.0 / len(xj))
        try:
            mu, _ = karcher_mean(m, xj, w, _EM_MEAN_CFG)
        except ConvergenceError as exc:
            mu = exc.last
        mus.append(mu)
        covs[j] = _regularized(covariance_coords(_coords_at(m, mu, xj), w), cfg.cov_reg)
    mus = np.array(mus)

    def estep():
        logp = np.stack(
            [np.log(pis[j]) + _rgd_component_logpdf(m, mus[j], covs[j], x) for j in range(k)], axis=1
        )
        lse = logsumexp(logp, axis=1)
        if not np.all(np.isfinite(lse)):
            raise ManifoldError("a training point has zero density under every component")
        return float(np.sum(lse)), np.exp(logp - lse[:, None]), lse

    trace, reseeds, iters = [], 0, 0
    thr = cfg.threshold(n)
    while True:
        ll, r, lse = estep()
        trace.append(ll)
        if len(trace) > 1 and abs(trace[-1] - trace[-2]) < cfg.ll_tol:
            break
        if iters == cfg.max_iters:
            break
        nk = r.sum(axis=0)
        for j in range(k):
            if nk[j] < thr:
                reseeds += 1
                mus[j] = x[int(np.argmin(lse))]
                covs[j] = _isotropic_like([covs[i] for i in range(k) if i != j] or [covs[j]], dim)
                pis[j] = 1.0 / n
                continue
            pis[j] = nk[j] / n
            mu, cov = _riemannian_mean_step(m, x, r[:, j] / nk[j], mus[j], cfg.cov_reg)
            mus[j] = mu
            covs[j] = _regularized(cov, cfg.cov_reg)
        pis /= pis.sum()
        iters += 1
    comps = tuple(Component(float(p), Point.trusted(m, mu), c) for p, mu, c in zip(pis, mus, covs))
    return Mixture(Variant.RIEMANNIAN, m, comps, tuple(trace), None, iters, reseeds)


# ---------------------------------------------------------------------------
# evaluation


def _component_logpdfs(mix: Mixture, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``(log pi_k + log N_k(x_n))`` as an ``(N, K)`` array, plus the cut-locus mask."""
    m = mix.manifold
    bad = np.zeros(len(x), dtype=bool)
    if mix.variant is Variant.RIEMANNIAN:
        cols = [np.log(c.prior) + _rgd_component_logpdf(m, c.mean.coords, c.cov, x) for c in mix.components]
        return np.stack(cols, axis=1), bad
    if mix.variant is Variant.EUCLIDEAN:
        z = embed(m, x)
    else:
        bad = _cut_mask(m, mix.base.coords, x)
        z = np.zeros((len(x), m.intrinsic_dim))
        if np.any(~bad):
            z[~bad] = _coords_at(m, mix.base.coords, x[~bad])
    cols = [np.log(c.prior) + gaussian_logpdf(z, c.mean, c.cov) for c in mix.components]
    return np.stack(cols, axis=1), bad


def _check_data(mix: Mixture, data) -> np.ndarray:
    m, x = stack_points(data)
    if m != mix.manifold:
        raise ValueError(f"data live on {m}, model on {mix.manifold}")
    return x


def loglik_details(mix: Mixture, data: Sequence[Point]) -> LoglikReport:
    """Per-point log densities and the number of cut-locus incidents.

    For the tangent variant a test point at the antipode of the basepoint
    cannot be mapped to the tangent space; it contributes ``LOG_FLOOR`` and
    is counted as an incident.
    """
    x = _check_data(mix, data)
    logp, bad = _component_logpdfs(mix, x)
    per_point = logsumexp(logp, axis=1)
    per_point[bad] = LOG_FLOOR
    per_point = np.maximum(per_point, LOG_FLOOR)
    incidents = int(bad.sum())
    if incidents:
        log.warning("%d test point(s) on the cut locus of the tangent basepoint; floored at %g",
                    incidents, LOG_FLOOR)
    return LoglikReport(float(np.sum(per_point)), per_point, incidents)


def loglik(mix: Mixture, data: Sequence[Point]) -> float:
    """Summed log density of the data under the mixture."""
    return loglik_details(mix, data).total


def responsibilities(mix: Mixture, data: Sequence[Point]) -> np.ndarray:
    """Posterior component probabilities, one row per point."""
    x = _check_data(mix, data)
    logp, bad = _component_logpdfs(mix, x)
    if np.any(bad):
        raise CutLocusError("responsibilities are undefined on the cut locus of the tangent basepoint")
    return np.exp(logp - logsumexp(logp, axis=1, keepdims=True))


def hard_assignments(mix: Mixture, data: Sequence[Point]) -> np.ndarray:
    return np.argmax(responsibilities(mix, data), axis=1)


@dataclass(frozen=True)
class GridCell:
    lat: float
    lon: float
    point: Point
    density: float
    solid_angle: float


def density_grid(mix: Mixture, resolution: float = 2.0) -> list[GridCell]:
    """Mixture density on a latitude-longitude grid of S^2.

    ``resolution`` is the cell size in degrees; each cell is sampled at its
    centre and carries its solid angle so densities can be integrated.
    """
    m = mix.manifold
    if m != ManifoldId.sphere(2):
        raise UnsupportedError("density grids are only available on S^2")
    if not 0 < resolution <= 90:
        raise ValueError("resolution must be in (0, 90] degrees")
    n_lat = int(round(180.0 / resolution))
    n_lon = int(round(360.0 / resolution))
    lat_edges = np.radians(np.linspace(-90.0, 90.0, n_lat + 1))
    lon_edges = np.radians(np.linspace(-180.0, 180.0, n_lon + 1))
    lat = 0.5 * (lat_edges[:-1] + lat_edges[1:])
    lon = 0.5 * (lon_edges[:-1] + lon_edges[1:])
    band = np.diff(np.sin(lat_edges)) * (lon_edges[1] - lon_edges[0])
    la, lo = np.meshgrid(lat, lon, indexing="ij")
    pts = np.stack([np.cos(la) * np.cos(lo), np.cos(la) * np.sin(lo), np.sin(la)], axis=-1).reshape(-1, 3)
    pts = pts / np.linalg.norm(pts, axis=1, keepdims=True)
    logp, bad = _component_logpdfs(mix, pts)
    dens = np.exp(logsumexp(logp, axis=1))
    dens[bad] = 0.0
    solid = np.repeat(band, n_lon)
    return [
        GridCell(float(np.degrees(a)), float(np.degrees(b)), Point.trusted(m, p), float(f), float(s))
        for a, b, p, f, s in zip(la.ravel(), lo.ravel(), pts, dens, solid)
    ]


# ---------------------------------------------------------------------------
# serialisation

_BASIS_NOTE = {
    Kind.SPHERE: "householder: e1 reflected onto the point, images of e2..e_{d+1}",
    Kind.SPD: "P^(1/2) E P^(1/2) over the orthonormal symmetric basis, upper triangle row-major",
}
_EMBED_NOTE = {
    Kind.SPHERE: "ambient R^(d+1) coordinates",
    Kind.SPD: "upper triangle row-major, off-diagonals scaled by sqrt(2)",
}


def mixture_to_dict(mix: Mixture) -> dict:
    m = mix.manifold
    comps = []
    for c in mix.components:
        mean = c.mean.coords if isinstance(c.mean, Point) else c.mean
        comps.append({"prior": c.prior, "mean": np.asarray(mean).tolist(), "cov": np.asarray(c.cov).tolist()})
    doc = {
        "format": "manifoldmix.mixture/1",
        "variant": mix.variant.value,
        "manifold": str(m),
        "components": comps,
        "train_log": list(mix.train_log),
        "n_iter": mix.n_iter,
        "reseeds": mix.reseeds,
        "coordinates": {
            Variant.EUCLIDEAN: {"means": _EMBED_NOTE[m.kind], "covariances": _EMBED_NOTE[m.kind]},
            Variant.TANGENT: {"means": "tangent coordinates at base", "covariances": _BASIS_NOTE[m.kind]},
            Variant.RIEMANNIAN: {"means": "manifold points", "covariances": _BASIS_NOTE[m.kind] + ", at each mean"},
        }[mix.variant],
    }
    if mix.base is not None:
        doc["base"] = mix.base.coords.tolist()
    return doc


def mixture_from_dict(doc: dict) -> Mixture:
    if doc.get("format") != "manifoldmix.mixture/1":
        raise ValueError("not a manifoldmix mixture document")
    m = ManifoldId.parse(doc["manifold"])
    variant = Variant(doc["variant"])
    comps = []
    for c in doc["components"]:
        mean = np.asarray(c["mean"], dtype=float)
        if variant is Variant.RIEMANNIAN:
            mean = Point(m, mean)
        comps.append(Component(float(c["prior"]), mean, np.asarray(c["cov"], dtype=float)))
    base = Point(m, np.asarray(doc["base"], dtype=float)) if "base" in doc else None
    return Mixture(variant, m, tuple(comps), tuple(doc.get("train_log", ())), base,
                   int(doc.get("n_iter", 0)), int(doc.get("reseeds", 0)))


def dumps(mix: Mixture) -> str:
    return json.dumps(mixture_to_dict(mix), indent=2)


def loads(text: str) -> Mixture:
    return mixture_from_dict(json.loads(text))
