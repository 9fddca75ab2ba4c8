"""Closed-form geometry of the hypersphere and of the SPD-matrix manifold.

Two layers live here:

* ``SphereGeometry`` / ``SpdGeometry`` operate on raw numpy arrays and are
  batched over leading axes of the *second* argument.  Every other module
  uses them directly in its hot loops.
* ``Point``, ``Tangent`` and ``TangentBasis`` are small validated value
  types, together with module-level functions (``exp``, ``log``, ...) that
  check their inputs before delegating to the array kernels.

Sphere points are unit vectors of length ``d + 1``.  SPD points are full
``(d, d)`` symmetric matrices and the metric is the affine-invariant one,
``<U, V>_P = tr(P^-1 U P^-1 V)``.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    BasepointMismatchError,
    CutLocusError,
    InvalidPointError,
    InvalidTangentError,
    ManifoldError,
)

#: logs on the sphere are refused beyond this distance
CUT_LOCUS_MARGIN = 1e-9
EIG_FLOOR = 1e-12
PROJECT_EIG_FLOOR = 1e-8


class PointFileError(ManifoldError, ValueError):
    pass


class Kind(str, enum.Enum):
    SPHERE = "sphere"
    SPD = "spd"


@dataclass(frozen=True)
class ManifoldId:
    """Which manifold, and how big.

    ``size`` is the intrinsic dimension ``d`` for ``S^d`` and the matrix side
    length for ``SPD(d)``.
    """

    kind: Kind
    size: int

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if int(self.size) != self.size or self.size < 1:
            raise ValueError(f"manifold size must be a positive integer, got {self.size!r}")
        object.__setattr__(self, "size", int(self.size))

    @classmethod
    def sphere(cls, d: int) -> "ManifoldId":
        return cls(Kind.SPHERE, d)

    @classmethod
    def spd(cls, d: int) -> "ManifoldId":
        return cls(Kind.SPD, d)

    @classmethod
    def parse(cls, text: str) -> "ManifoldId":
        """Parse ``"sphere:3"`` or ``"spd:2"``."""
        try:
            kind, size = text.strip().split(":")
            return cls(Kind(kind.strip().lower()), int(size))
        except (ValueError, TypeError) as exc:
            raise ValueError(f"cannot parse manifold {text!r}; expected 'sphere:d' or 'spd:d'") from exc

    @property
    def intrinsic_dim(self) -> int:
        if self.kind is Kind.SPHERE:
            return self.size
        return self.size * (self.size + 1) // 2

    @property
    def ambient_dim(self) -> int:
        if self.kind is Kind.SPHERE:
            return self.size + 1
        return self.size * self.size

    @property
    def shape(self) -> tuple[int, ...]:
        """Array shape of a single point or tangent vector."""
        if self.kind is Kind.SPHERE:
            return (self.size + 1,)
        return (self.size, self.size)

    def __str__(self):
        return f"{self.kind.value}:{self.size}"


# ---------------------------------------------------------------------------
# symmetric matrix functions


def sym(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def sym_apply(a: np.ndarray, fn) -> np.ndarray:
    """Apply a scalar function to the eigenvalues of (a stack of) symmetric matrices."""
    w, v = np.linalg.eigh(a)
    return sym((v * fn(w)[..., None, :]) @ np.swapaxes(v, -1, -2))


def sym_exp(a):
    return sym_apply(a, np.exp)


def sym_log(a):
    return sym_apply(a, lambda w: np.log(np.maximum(w, EIG_FLOOR)))


def sym_sqrt(a):
    return sym_apply(a, lambda w: np.sqrt(np.maximum(w, EIG_FLOOR)))


def sqrt_pair(p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(P^{1/2}, P^{-1/2})`` from one eigendecomposition."""
    w, v = np.linalg.eigh(p)
    w = np.maximum(w, EIG_FLOOR)
    s = np.sqrt(w)
    vt = np.swapaxes(v, -1, -2)
    return sym((v * s[..., None, :]) @ vt), sym((v / s[..., None, :]) @ vt)


def upper_indices(d: int) -> tuple[np.ndarray, np.ndarray]:
    """Row-major upper-triangle indices ``(i <= j)``."""
    return np.triu_indices(d)


def vech_orthonormal(a: np.ndarray) -> np.ndarray:
    """Coordinates of symmetric matrices in the orthonormal symmetric basis.

    Diagonal entries are kept, off-diagonal entries are scaled by sqrt(2), so
    the Euclidean norm of the result equals the Frobenius norm of ``a``.
    """
    d = a.shape[-1]
    iu, ju = upper_indices(d)
    scale = np.where(iu == ju, 1.0, math.sqrt(2.0))
    return a[..., iu, ju] * scale


def unvech_orthonormal(c: np.ndarray, d: int) -> np.ndarray:
    iu, ju = upper_indices(d)
    scale = np.where(iu == ju, 1.0, 1.0 / math.sqrt(2.0))
    c = np.asarray(c, dtype=float)
    out = np.zeros(c.shape[:-1] + (d, d))
    out[..., iu, ju] = c * scale
    out[..., ju, iu] = c * scale
    return out


def standard_symmetric_basis(d: int) -> np.ndarray:
    """Frobenius-orthonormal basis of Sym(d), shape ``(d(d+1)/2, d, d)``."""
    return unvech_orthonormal(np.eye(d * (d + 1) // 2), d)


# ---------------------------------------------------------------------------
# array kernels


class SphereGeometry:
    """Kernels for S^d embedded in R^{d+1}.

    ``x`` is always a single point of shape ``(d+1,)``; the second argument
    may carry any number of leading batch axes.
    """

    def __init__(self, manifold: ManifoldId):
        self.manifold = manifold
        self.n = manifold.size + 1

    injectivity_radius = math.pi

    def normalize(self, y):
        return y / np.linalg.norm(y, axis=-1, keepdims=True)

    def exp(self, x, u):
        nrm = np.linalg.norm(u, axis=-1, keepdims=True)
        y = np.cos(nrm) * x + np.sinc(nrm / np.pi) * u
        return self.normalize(y)

    def dist(self, x, y):
        a = np.linalg.norm(x - y, axis=-1)
        b = np.linalg.norm(x + y, axis=-1)
        return 2.0 * np.arctan2(a, b)

    def log(self, x, y, check=True):
        theta = self.dist(x, y)
        if check and np.any(theta > np.pi - CUT_LOCUS_MARGIN):
            raise CutLocusError(
                "logarithm requested at (or within 1e-9 of) the antipode of the basepoint; "
                "the exponential map is only a diffeomorphism inside the injectivity radius pi"
            )
        c = y @ x
        w = y - c[..., None] * x
        nw = np.linalg.norm(w, axis=-1)
        safe = np.where(nw > 0, nw, 1.0)
        u = w * np.where(nw > 0, theta / safe, 0.0)[..., None]
        # remove the rounding component along x
        return u - (u @ x)[..., None] * x

    def inner(self, x, u, v):
        return np.sum(u * v, axis=-1)

    def norm(self, x, u):
        return np.linalg.norm(u, axis=-1)

    def transport(self, x, y, v):
        if self.dist(x, y) > np.pi - CUT_LOCUS_MARGIN:
            raise CutLocusError("parallel transport between antipodal points is not unique")
        r = v - ((v @ y) / (1.0 + x @ y))[..., None] * (x + y)
        return r - (r @ y)[..., None] * y

    def basis(self, x) -> np.ndarray:
        """Householder-reflected standard basis, shape ``(d, d+1)``."""
        e1 = np.zeros(self.n)
        e1[0] = 1.0
        w = e1 - x
        nw = np.linalg.norm(w)
        if nw == 0.0:
            h = np.eye(self.n)
        else:
            w = w / nw
            h = np.eye(self.n) - 2.0 * np.outer(w, w)
        return h[1:].copy()

    def duals(self, x, vectors):
        return vectors

    def is_tangent(self, x, u, tol=1e-10):
        return np.abs(u @ x) <= tol * max(1.0, float(np.linalg.norm(u)))

    def check_points(self, y):
        y = np.asarray(y, dtype=float)
        dev = np.abs(np.linalg.norm(y, axis=-1) - 1.0)
        if np.any(~np.isfinite(dev)) or np.any(dev > 1e-12):
            raise InvalidPointError(f"sphere points must have unit norm (max deviation {np.max(dev):.3g})")

    def project(self, raw):
        raw = np.asarray(raw, dtype=float)
        nrm = np.linalg.norm(raw, axis=-1, keepdims=True)
        if np.any(nrm == 0) or not np.all(np.isfinite(nrm)):
            raise InvalidPointError("cannot project the zero vector onto the sphere")
        return raw / nrm

    def embed(self, y):
        """Euclidean coordinates used by the embedding-space GMM."""
        return np.asarray(y, dtype=float)

    def log_exp_volume(self, c_norm):
        """Log volume density of the exponential map at tangent norm ``c_norm``."""
        d = self.manifold.size
        with np.errstate(divide="ignore"):
            return (d - 1) * np.log(np.sinc(c_norm / np.pi))


class SpdGeometry:
    """Kernels for SPD(d) with the affine-invariant metric.

    ``p`` is a single ``(d, d)`` matrix; the second argument may be a stack
    ``(..., d, d)``.
    """

    injectivity_radius = math.inf

    def __init__(self, manifold: ManifoldId):
        self.manifold = manifold
        self.d = manifold.size

    def exp(self, p, u):
        ph, pih = sqrt_pair(p)
        return sym(ph @ sym_exp(sym(pih @ u @ pih)) @ ph)

    def log(self, p, q, check=True):
        ph, pih = sqrt_pair(p)
        return sym(ph @ sym_log(sym(pih @ q @ pih)) @ ph)

    def dist(self, p, q):
        _, pih = sqrt_pair(p)
        w = np.linalg.eigvalsh(sym(pih @ q @ pih))
        return np.sqrt(np.sum(np.log(np.maximum(w, EIG_FLOOR)) ** 2, axis=-1))

    def inner(self, p, u, v):
        pinv = np.linalg.inv(p)
        a = pinv @ u
        b = pinv @ v
        return np.einsum("...ij,...ji->...", a, b)

    def norm(self, p, u):
        _, pih = sqrt_pair(p)
        return np.linalg.norm(pih @ u @ pih, axis=(-2, -1))

    def transport(self, p, q, v):
        ph, pih = sqrt_pair(p)
        e = ph @ sym_sqrt(sym(pih @ q @ pih)) @ pih
        return sym(e @ v @ e.T)

    def basis(self, p) -> np.ndarray:
        ph, _ = sqrt_pair(p)
        return sym(ph @ standard_symmetric_basis(self.d) @ ph)

    def duals(self, p, vectors):
        pinv = np.linalg.inv(p)
        return sym(pinv @ vectors @ pinv)

    def is_tangent(self, p, u, tol=1e-12):
        return np.max(np.abs(u - u.T)) <= tol * max(1.0, float(np.max(np.abs(u))))

    def check_points(self, q):
        q = np.asarray(q, dtype=float)
        if not np.all(np.isfinite(q)):
            raise InvalidPointError("SPD points must be finite")
        scale = np.maximum(1.0, np.max(np.abs(q), axis=(-2, -1)))
        asym = np.max(np.abs(q - np.swapaxes(q, -1, -2)), axis=(-2, -1))
        if np.any(asym > 1e-12 * scale):
            raise InvalidPointError("SPD points must be symmetric")
        if np.any(np.linalg.eigvalsh(sym(q))[..., 0] <= 0):
            raise InvalidPointError("SPD points must be positive definite")

    def project(self, raw):
        s = sym(np.asarray(raw, dtype=float).reshape(self.d, self.d))
        w, v = np.linalg.eigh(s)
        if w[0] >= PROJECT_EIG_FLOOR:
            return s
        w = np.maximum(w, PROJECT_EIG_FLOOR)
        return sym((v * w) @ v.T)

    def embed(self, q):
        return vech_orthonormal(np.asarray(q, dtype=float))

    def log_exp_volume(self, m):
        """Log volume density of Exp for whitened tangents ``m = P^-1/2 U P^-1/2``.

        With eigenvalues ``l_i`` of ``m`` the factor is
        ``prod_{i<j} sinh(|l_i - l_j| / 2) / (|l_i - l_j| / 2)``.
        """
        lam = np.linalg.eigvalsh(m)
        gap = 0.5 * np.abs(lam[..., :, None] - lam[..., None, :])
        iu = np.triu_indices(self.d, 1)
        g = gap[..., iu[0], iu[1]]
        # sinh(g)/g, log-domain for large gaps
        logf = np.where(g > 1e-8, np.log(np.sinh(np.maximum(g, 1e-8)) / np.maximum(g, 1e-8)), g * g / 6.0)
        return np.sum(logf, axis=-1)


_GEOMETRY_CACHE: dict[ManifoldId, SphereGeometry | SpdGeometry] = {}


def geometry(m: ManifoldId) -> SphereGeometry | SpdGeometry:
    g = _GEOMETRY_CACHE.get(m)
    if g is None:
        g = SphereGeometry(m) if m.kind is Kind.SPHERE else SpdGeometry(m)
        _GEOMETRY_CACHE[m] = g
    return g


# ---------------------------------------------------------------------------
# value types


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Point:
    """A validated manifold element.

    ``coords`` has shape ``manifold.shape``: ``(d+1,)`` on the sphere and
    ``(d, d)`` on SPD.  A flat array of ``ambient_dim`` entries (row-major
    for SPD) is accepted and reshaped.
    """

    manifold: ManifoldId
    coords: np.ndarray
    _checked: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        arr = np.asarray(self.coords, dtype=float)
        if arr.size != self.manifold.ambient_dim:
            raise InvalidPointError(
                f"{self.manifold} points need {self.manifold.ambient_dim} entries, got {arr.size}"
            )
        arr = _frozen(arr.reshape(self.manifold.shape))
        if self._checked:
            geometry(self.manifold).check_points(arr)
        object.__setattr__(self, "coords", arr)

    @classmethod
    def trusted(cls, manifold: ManifoldId, coords) -> "Point":
        """Wrap an array already known to satisfy the point invariants."""
        return cls(manifold, coords, _checked=False)

    def __eq__(self, other):
        return (
            isinstance(other, Point)
            and self.manifold == other.manifold
            and np.array_equal(self.coords, other.coords)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class Tangent:
    """A tangent vector together with the point it is attached to."""

    base: Point
    coords: np.ndarray

    def __post_init__(self):
        m = self.base.manifold
        arr = np.asarray(self.coords, dtype=float)
        if arr.size != m.ambient_dim:
            raise InvalidTangentError(f"{m} tangents need {m.ambient_dim} entries, got {arr.size}")
        arr = _frozen(arr.reshape(m.shape))
        if not np.all(np.isfinite(arr)) or not geometry(m).is_tangent(self.base.coords, arr):
            raise InvalidTangentError(f"vector is not tangent to {m} at the given basepoint")
        object.__setattr__(self, "coords", arr)

    @property
    def manifold(self) -> ManifoldId:
        return self.base.manifold


@dataclass(frozen=True, eq=False)
class TangentBasis:
    """Metric-orthonormal basis of the tangent space at ``base``.

    ``vectors`` has shape ``(intrinsic_dim, *manifold.shape)``; ``duals``
    holds the metric duals so that ``c_k = <duals_k, u>_Frobenius``.
    """

    base: Point
    vectors: np.ndarray
    duals: np.ndarray


def stack_points(points: Sequence[Point]) -> tuple[ManifoldId, np.ndarray]:
    """Stack a nonempty list of points into one ``(N, *shape)`` array."""
    if len(points) == 0:
        raise ValueError("need at least one point")
    m = points[0].manifold
    for p in points:
        if p.manifold != m:
            raise ValueError("points live on different manifolds")
    return m, np.stack([p.coords for p in points])


def wrap_points(m: ManifoldId, arr: np.ndarray, check: bool = True) -> list[Point]:
    arr = np.asarray(arr, dtype=float)
    if check:
        geometry(m).check_points(arr)
    return [Point.trusted(m, a) for a in arr]


def _same_base(a: Point, b: Point):
    if a is b:
        return
    if a.manifold != b.manifold or not np.array_equal(a.coords, b.coords):
        raise BasepointMismatchError("tangent vector is attached to a different basepoint")


# ---------------------------------------------------------------------------
# public operations


def exp(base: Point, u: Tangent) -> Point:
    """Exponential map: follow the geodesic from ``base`` with velocity ``u`` for unit time."""
    _same_base(base, u.base)
    g = geometry(base.manifold)
    return Point(base.manifold, g.exp(base.coords, u.coords))


def log(base: Point, y: Point) -> Tangent:
    """Logarithmic map; raises ``CutLocusError`` for antipodal sphere points."""
    if base.manifold != y.manifold:
        raise ValueError("points live on different manifolds")
    g = geometry(base.manifold)
    return Tangent(base, g.log(base.coords, y.coords))


def distance(x: Point, y: Point) -> float:
    if x.manifold != y.manifold:
        raise ValueError("points live on different manifolds")
    return float(geometry(x.manifold).dist(x.coords, y.coords))


def parallel_transport(start: Point, end: Point, v: Tangent) -> Tangent:
    """Transport ``v`` from ``start`` to ``end`` along the minimizing geodesic."""
    _same_base(start, v.base)
    if start.manifold != end.manifold:
        raise ValueError("points live on different manifolds")
    g = geometry(start.manifold)
    return Tangent(end, g.transport(start.coords, end.coords, v.coords))


def inner(base: Point, u: Tangent, v: Tangent) -> float:
    _same_base(base, u.base)
    _same_base(base, v.base)
    return float(geometry(base.manifold).inner(base.coords, u.coords, v.coords))


def norm(base: Point, u: Tangent) -> float:
    _same_base(base, u.base)
    return float(geometry(base.manifold).norm(base.coords, u.coords))


def injectivity_radius(m: ManifoldId) -> float:
    """pi on every sphere, infinity on SPD."""
    return geometry(m).injectivity_radius


def tangent_basis(base: Point) -> TangentBasis:
    g = geometry(base.manifold)
    vectors = g.basis(base.coords)
    return TangentBasis(base, _frozen(vectors), _frozen(g.duals(base.coords, vectors)))


def basis_arrays(m: ManifoldId, base: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Flattened ``(vectors, duals)`` of the deterministic basis at an array point."""
    g = geometry(m)
    vectors = g.basis(base)
    duals = g.duals(base, vectors)
    dim = m.intrinsic_dim
    return vectors.reshape(dim, -1), duals.reshape(dim, -1)


def coords_of(duals_flat: np.ndarray, u: np.ndarray, m: ManifoldId) -> np.ndarray:
    """Tangent coordinates of a (stack of) tangent arrays."""
    u = np.asarray(u)
    flat = u.reshape(u.shape[: u.ndim - len(m.shape)] + (-1,))
    return flat @ duals_flat.T


def vectors_of(vectors_flat: np.ndarray, c: np.ndarray, m: ManifoldId) -> np.ndarray:
    c = np.asarray(c, dtype=float)
    return (c @ vectors_flat).reshape(c.shape[:-1] + m.shape)


def to_coords(basis: TangentBasis, u: Tangent) -> np.ndarray:
    _same_base(basis.base, u.base)
    m = basis.base.manifold
    return coords_of(basis.duals.reshape(m.intrinsic_dim, -1), u.coords, m)


def from_coords(basis: TangentBasis, c) -> Tangent:
    m = basis.base.manifold
    c = np.asarray(c, dtype=float)
    if c.shape != (m.intrinsic_dim,):
        raise ValueError(f"expected {m.intrinsic_dim} coordinates, got shape {c.shape}")
    u = vectors_of(basis.vectors.reshape(m.intrinsic_dim, -1), c, m)
    if m.kind is Kind.SPD:
        u = sym(u)
    return Tangent(basis.base, u)


def project_to_manifold(m: ManifoldId, raw) -> Point:
    """Nearest-point style projection used for ingestion.

    Sphere: normalise.  SPD: symmetrise and lift eigenvalues below 1e-8.
    """
    raw = np.asarray(raw, dtype=float)
    if raw.size != m.ambient_dim:
        raise InvalidPointError(f"{m} needs {m.ambient_dim} entries, got {raw.size}")
    g = geometry(m)
    return Point(m, g.project(raw.reshape(m.shape)))


# ---------------------------------------------------------------------------
# point files


def _row_values(m: ManifoldId, coords: np.ndarray) -> list[float]:
    if m.kind is Kind.SPHERE:
        return list(coords)
    iu, ju = upper_indices(m.size)
    return list(coords[iu, ju])


def _row_to_array(m: ManifoldId, values: Sequence[float]) -> np.ndarray:
    if m.kind is Kind.SPHERE:
        return np.asarray(values, dtype=float)
    iu, ju = upper_indices(m.size)
    a = np.zeros((m.size, m.size))
    a[iu, ju] = values
    a[ju, iu] = values
    return a


def row_width(m: ManifoldId) -> int:
    return m.size + 1 if m.kind is Kind.SPHERE else m.size * (m.size + 1) // 2


def write_points(path, points: Sequence[Point]) -> None:
    """Write points in the CSV ingestion format (``# manifold=...`` header)."""
    m, _ = stack_points(points)
    with open(path, "w", newline="") as fh:
        fh.write(f"# manifold={m}\n")
        w = csv.writer(fh, lineterminator="\n")
        for p in points:
            w.writerow([repr(float(v)) for v in _row_values(m, p.coords)])


def read_points(path) -> tuple[ManifoldId, list[Point]]:
    """Read a point CSV; rows are projected onto the manifold on ingestion."""
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("#"):
        raise PointFileError(f"{path}: missing '# manifold=...' header")
    header = lines[0].lstrip("#").strip()
    key, _, value = header.partition("=")
    if key.strip() != "manifold":
        raise PointFileError(f"{path}: header must read '# manifold=sphere:d' or '# manifold=spd:d'")
    try:
        m = ManifoldId.parse(value)
    except ValueError as exc:
        raise PointFileError(f"{path}: {exc}") from exc
    width = row_width(m)
    points = []
    for lineno, row in enumerate(csv.reader(lines[1:]), start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != width:
            raise PointFileError(f"{path}: row {lineno} has {len(row)} columns, expected {width}")
        try:
            values = [float(v) for v in row]
        except ValueError as exc:
            raise PointFileError(f"{path}: row {lineno} is not numeric") from exc
        try:
            points.append(project_to_manifold(m, _row_to_array(m, values)))
        except InvalidPointError as exc:
            raise PointFileError(f"{path}: row {lineno}: {exc}") from exc
    if not points:
        raise PointFileError(f"{path}: no points")
    return m, points

