"""Density-estimation benchmark: target generation, repeated fits, aggregation.

One experiment draws ``n_targets`` random target mixtures, samples train and
test sets from each, fits the Euclidean, Tangent (at the training Fréchet
mean) and Riemannian GMMs from identical initial assignments, and reports
the mean and standard deviation of the summed test log-likelihood.
"""

from __future__ import annotations

import concurrent.futures
import csv
import dataclasses
import io
import math
import os
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .distributions import (
    Family,
    InverseWishartParams,
    RgdParams,
    TargetSpec,
    VmfParams,
    random_spd,
    sample_target,
)
from .errors import ConvergenceError, ExperimentError, ManifoldError
from .frechet import karcher_mean
from .gmm import (
    EmConfig,
    Variant,
    fit_euclidean,
    fit_riemannian,
    fit_tangent,
    init_shared,
    loglik_details,
)
from .manifolds import (
    Kind,
    ManifoldId,
    Point,
    basis_arrays,
    geometry,
    project_to_manifold,
    stack_points,
    wrap_points,
)

SPHERE_COV_EIGS = (0.01, 0.25)
SPHERE_KAPPA = (20.0, 70.0)
SPD_MEAN_EIGS = (0.1, 2.0)
SPD_COV_EIGS = (0.1, 0.5)
METHODS = (Variant.EUCLIDEAN, Variant.TANGENT, Variant.RIEMANNIAN)
MAX_FAILURE_FRACTION = 0.2


# ---------------------------------------------------------------------------
# targets


def sphere_component_means(d: int) -> list[Point]:
    """The three component means, normalised onto S^d."""
    m = ManifoldId.sphere(d)
    ones = np.ones(d)
    raw = [
        np.ones(d + 1) / (d + 1),
        np.concatenate([[1.0], -ones]) / (d + 1),
        np.concatenate([[-1.0], ones]) / (d + 1),
    ]
    return [project_to_manifold(m, r) for r in raw]


def make_sphere_targets(d: int, family: Family | str, rng: np.random.Generator) -> TargetSpec:
    """Three-component RGD, WGD or vMF mixture on S^d with uniform weights."""
    family = Family(family)
    if d < 2:
        raise ValueError("sphere targets need d >= 2")
    if family not in (Family.RGD, Family.WGD, Family.VMF):
        raise ValueError(f"{family.value} targets are not defined on spheres")
    m = ManifoldId.sphere(d)
    means = sphere_component_means(d)
    if family is Family.VMF:
        comps = [VmfParams(mu, float(rng.uniform(*SPHERE_KAPPA))) for mu in means]
    else:
        comps = [RgdParams(mu, random_spd(d, *SPHERE_COV_EIGS, rng)) for mu in means]
    return TargetSpec(m, family, np.full(3, 1.0 / 3.0), tuple(comps))


def make_spd_targets(d: int, family: Family | str, rng: np.random.Generator) -> TargetSpec:
    """Five-component RGD or inverse-Wishart mixture on SPD(d) with uniform weights.

    RGD means have eigenvalues in [0.1, 2] and covariances eigenvalues in
    [0.1, 0.5].  Inverse-Wishart scales are the RGD means, with degrees of
    freedom uniform in [d+1, d+3].
    """
    family = Family(family)
    if d not in (2, 3):
        raise ValueError("SPD targets are defined for d in {2, 3}")
    if family not in (Family.RGD, Family.IWD):
        raise ValueError(f"{family.value} targets are not defined on SPD manifolds")
    m = ManifoldId.spd(d)
    dim = m.intrinsic_dim
    comps = []
    for _ in range(5):
        mean = Point(m, random_spd(d, *SPD_MEAN_EIGS, rng))
        cov = random_spd(dim, *SPD_COV_EIGS, rng)
        if family is Family.RGD:
            comps.append(RgdParams(mean, cov))
        else:
            comps.append(InverseWishartParams(mean, float(rng.uniform(d + 1, d + 3))))
    return TargetSpec(m, family, np.full(5, 1.0 / 5.0), tuple(comps))


def check_target_family(m: ManifoldId, family: Family | str) -> Family:
    """Raise ``ValueError`` unless targets of ``family`` exist on ``m``."""
    family = Family(family)
    if m.kind is Kind.SPHERE:
        if m.size < 2:
            raise ValueError("sphere targets need d >= 2")
        if family not in (Family.RGD, Family.WGD, Family.VMF):
            raise ValueError(f"{family.value} targets are not defined on spheres")
    else:
        if m.size not in (2, 3):
            raise ValueError("SPD targets are defined for d in {2, 3}")
        if family not in (Family.RGD, Family.IWD):
            raise ValueError(f"{family.value} targets are not defined on SPD manifolds")
    return family


def make_targets(m: ManifoldId, family: Family | str, rng: np.random.Generator) -> TargetSpec:
    if m.kind is Kind.SPHERE:
        return make_sphere_targets(m.size, family, rng)
    return make_spd_targets(m.size, family, rng)


# ---------------------------------------------------------------------------
# motivational data and distortion diagnostics


C_SHAPE_RADIUS = 0.6
C_SHAPE_CENTER = np.array([0.0, 0.0, 1.0])


def make_c_shape(n: int, noise_sigma: float = 0.05, rng: np.random.Generator | None = None) -> list[Point]:
    """C-shaped data on S^2.

    Points lie on a 270 degree arc of the circle of geodesic radius 0.6
    around the north pole, opening towards ``e1``, and are perturbed by an
    isotropic wrapped Gaussian of scale ``noise_sigma`` in the tangent space
    of each arc point.
    """
    if n < 10:
        raise ValueError("the C-shape needs at least 10 points")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be nonnegative")
    rng = np.random.default_rng() if rng is None else rng
    m = ManifoldId.sphere(2)
    g = geometry(m)
    phi = rng.uniform(np.radians(45.0), np.radians(315.0), n)
    u = C_SHAPE_RADIUS * np.stack([np.cos(phi), np.sin(phi), np.zeros(n)], axis=1)
    arc = g.exp(C_SHAPE_CENTER, u)
    noise = rng.standard_normal((n, 2)) * noise_sigma
    out = np.empty_like(arc)
    for i, (p, z) in enumerate(zip(arc, noise)):
        vectors, _ = basis_arrays(m, p)
        out[i] = g.exp(p, z @ vectors)
    return wrap_points(m, out)


@dataclass(frozen=True)
class DistortionReport:
    """Pairwise comparison of geodesic distances with tangent-space distances.

    ``signed_*`` statistics use ``d_M(y1, y2) - |log_b y2 - log_b y1|``, so a
    negative value means the tangent space stretches the pair apart.
    """

    n_points: int
    n_pairs: int
    mean_abs: float
    max_abs: float
    quantiles: dict
    signed_mean: float
    signed_max: float
    base_distance_error: float
    frac_beyond_half_pi: float

    def to_dict(self) -> dict:
        return {
            "n_points": self.n_points,
            "n_pairs": self.n_pairs,
            "mean_abs": self.mean_abs,
            "max_abs": self.max_abs,
            "quantiles": {str(k): v for k, v in self.quantiles.items()},
            "signed_mean": self.signed_mean,
            "signed_max": self.signed_max,
            "base_distance_error": self.base_distance_error,
            "frac_beyond_half_pi": self.frac_beyond_half_pi,
        }


def _pairwise_signed_distortion(m: ManifoldId, x: np.ndarray, c: np.ndarray) -> np.ndarray:
    g = geometry(m)
    n = len(x)
    if n <= 2000:
        rows = []
        for i in range(n - 1):
            geo = g.dist(x[i], x[i + 1:])
            flat = np.linalg.norm(c[i + 1:] - c[i], axis=1)
            rows.append(geo - flat)
        return np.concatenate(rows) if rows else np.zeros(0)
    pick = np.random.default_rng(0)
    i = pick.integers(n, size=2_000_000)
    j = pick.integers(n, size=2_000_000)
    keep = i != j
    i, j = i[keep], j[keep]
    if m.kind is Kind.SPHERE:
        geo = g.dist(x[i], x[j])
    else:
        geo = np.array([g.dist(x[a], x[b]) for a, b in zip(i, j)])
    return geo - np.linalg.norm(c[i] - c[j], axis=1)


def distortion_report(data: Sequence[Point], base: Point) -> DistortionReport:
    """How much the single tangent space at ``base`` distorts pairwise distances.

    Exact over all pairs for up to 2000 points, otherwise over 2e6 random
    pairs.  Raises ``CutLocusError`` when a point is antipodal to ``base``.
    """
    from .gmm import tangent_projection

    m, x = stack_points(data)
    if base.manifold != m:
        raise ValueError("basepoint lives on a different manifold")
    c = tangent_projection(m, base.coords, x)
    g = geometry(m)
    base_d = g.dist(base.coords, x)
    base_err = float(np.max(np.abs(np.linalg.norm(c, axis=1) - base_d)))
    s = _pairwise_signed_distortion(m, x, c)
    a = np.abs(s)
    qs = (0.5, 0.9, 0.99)
    if len(s):
        quant = {q: float(np.quantile(a, q)) for q in qs}
        stats = float(a.mean()), float(a.max()), float(s.mean()), float(s.max())
    else:
        quant = {q: 0.0 for q in qs}
        stats = 0.0, 0.0, 0.0, 0.0
    frac = float(np.mean(base_d > np.pi / 2)) if m.kind is Kind.SPHERE else 0.0
    return DistortionReport(len(x), len(s), stats[0], stats[1], quant, stats[2], stats[3], base_err, frac)


# ---------------------------------------------------------------------------
# experiments


@dataclass(frozen=True)
class ExperimentSpec:
    manifold: ManifoldId
    family: Family
    n_targets: int = 100
    n_train: int = 100
    n_test: int = 100
    k_target: int | None = None
    k_model: int | None = None
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "family", check_target_family(self.manifold, self.family))
        default_k = 3 if self.manifold.kind is Kind.SPHERE else 5
        if self.k_target is None:
            object.__setattr__(self, "k_target", default_k)
        if self.k_model is None:
            object.__setattr__(self, "k_model", self.k_target)
        if self.k_target != default_k:
            raise ValueError(f"targets on {self.manifold.kind.value} manifolds have {default_k} components")
        if min(self.n_targets, self.n_train, self.n_test) < 1 or self.k_model < 1:
            raise ValueError("counts must be positive")
        if self.n_train < self.k_model:
            raise ValueError("need at least k_model training points")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


@dataclass(frozen=True)
class TargetRow:
    target_index: int
    method: Variant
    train_ll: float
    test_ll: float
    em_iters: int
    incidents: int
    status: str


@dataclass(frozen=True)
class MethodSummary:
    method: Variant
    mean_ll: float
    std_ll: float
    failures: int
    incidents: int


@dataclass(frozen=True)
class ExperimentResult:
    spec: ExperimentSpec
    methods: dict
    rows: tuple
    n_completed: int
    n_failed: int
    seconds: float = field(compare=False, default=0.0)

    def summary(self, method: Variant | str) -> MethodSummary:
        return self.methods[Variant(method)]


def target_rng(seed: int, index: int) -> np.random.Generator:
    """Independent generator for target ``index``.

    Uses numpy's ``SeedSequence`` hashing of ``(seed, spawn_key=(index,))``,
    i.e. the same stream as ``SeedSequence(seed).spawn(...)[index]``.
    """
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


def _training_mean(m: ManifoldId, x: np.ndarray) -> Point:
    w = np.full(len(x), 1.0 / len(x))
    try:
        mu, _ = karcher_mean(m, x, w)
    except ConvergenceError as exc:
        mu = exc.last
    return Point.trusted(m, mu)


_FIT_ERRORS = (ManifoldError, np.linalg.LinAlgError, FloatingPointError, ValueError)


def run_target(spec: ExperimentSpec, index: int, cfg: EmConfig = EmConfig()) -> list[TargetRow]:
    """Generate one target, fit all three models on shared data, evaluate on the test split."""
    rng = target_rng(spec.seed, index)
    target = make_targets(spec.manifold, spec.family, rng)
    pts = sample_target(target, spec.n_train + spec.n_test, rng)
    train, test = pts[: spec.n_train], pts[spec.n_train:]
    labels = init_shared(train, spec.k_model, rng)
    m, xtr = stack_points(train)
    base = _training_mean(m, xtr)
    fitters = {
        Variant.EUCLIDEAN: lambda: fit_euclidean(train, labels, cfg),
        Variant.TANGENT: lambda: fit_tangent(train, base, labels, cfg),
        Variant.RIEMANNIAN: lambda: fit_riemannian(train, labels, cfg),
    }
    rows = []
    for method in METHODS:
        try:
            mix = fitters[method]()
            rep = loglik_details(mix, test)
            rows.append(TargetRow(index, method, mix.train_log[-1], rep.total, mix.n_iter, rep.incidents, "ok"))
        except _FIT_ERRORS:
            rows.append(TargetRow(index, method, math.nan, math.nan, 0, 0, "failed"))
    if any(r.status == "failed" for r in rows):
        rows = [r if r.status == "failed" else dataclasses.replace(r, status="skipped") for r in rows]
    return rows


def _run_target_job(args):
    spec, index, cfg = args
    return run_target(spec, index, cfg)


def worker_count() -> int:
    env = os.environ.get("MANIFOLDMIX_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def run_experiment(spec: ExperimentSpec, cfg: EmConfig = EmConfig(), workers: int | None = None) -> ExperimentResult:
    """Run every target of ``spec`` and aggregate test log-likelihoods per method.

    Targets may run in parallel worker processes; results are merged in
    target-index order so the output does not depend on scheduling.

    Raises
    ------
    ExperimentError
        If more than 20% of the targets fail.
    """
    t0 = time.perf_counter()
    workers = worker_count() if workers is None else max(1, workers)
    jobs = [(spec, i, cfg) for i in range(spec.n_targets)]
    if workers > 1 and spec.n_targets > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=min(workers, spec.n_targets)) as pool:
            per_target = list(pool.map(_run_target_job, jobs))
    else:
        per_target = [_run_target_job(j) for j in jobs]
    rows = tuple(r for target_rows in per_target for r in target_rows)
    failed_targets = sum(any(r.status != "ok" for r in tr) for tr in per_target)
    if failed_targets > MAX_FAILURE_FRACTION * spec.n_targets:
        raise ExperimentError(
            f"{failed_targets} of {spec.n_targets} targets failed (limit {MAX_FAILURE_FRACTION:.0%})"
        )
    methods = {}
    for method in METHODS:
        mine = [r for r in rows if r.method is method]
        ok = np.array([r.test_ll for r in mine if r.status == "ok"])
        methods[method] = MethodSummary(
            method,
            float(np.mean(ok)) if len(ok) else math.nan,
            float(np.std(ok, ddof=1)) if len(ok) > 1 else 0.0,
            sum(r.status == "failed" for r in mine),
            sum(r.incidents for r in mine),
        )
    return ExperimentResult(spec, methods, rows, spec.n_targets - failed_targets, failed_targets,
                            time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# CSV output

PER_TARGET_COLUMNS = ("target_index", "method", "train_ll", "test_ll", "em_iters", "incidents", "status")
SUMMARY_COLUMNS = ("manifold", "dim", "family", "method", "mean_ll", "std_ll", "failures")


def _fmt(v: float) -> str:
    return repr(float(v))


def per_target_csv(result: ExperimentResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(PER_TARGET_COLUMNS)
    for r in result.rows:
        w.writerow([r.target_index, r.method.value, _fmt(r.train_ll), _fmt(r.test_ll), r.em_iters, r.incidents, r.status])
    return buf.getvalue()


def summary_csv(result: ExperimentResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    m = result.spec.manifold
    for method in METHODS:
        s = result.methods[method]
        w.writerow([m.kind.value, m.size, result.spec.family.value, method.value,
                    _fmt(s.mean_ll), _fmt(s.std_ll), s.failures])
    return buf.getvalue()


def read_per_target_csv(text: str) -> list[dict]:
    return list(csv.DictReader(io.StringIO(text)))
