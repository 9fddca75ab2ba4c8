"""Acceptance checks, one test per criterion.

Each test records a one-line PASS/FAIL verdict with the measured numbers;
``conftest.py`` prints the collected verdicts at the end of the run.  Run
just this module with ``pytest tests/test_acceptance.py -v``.
"""

import math
import time
import warnings

import numpy as np

from manifoldmix.bench import ExperimentSpec, distortion_report, make_c_shape, run_experiment
from manifoldmix.cli import main as cli_main
from manifoldmix.cli import per_target_path
from manifoldmix.distributions import RgdParams, random_spd, sample_wgd
from manifoldmix.frechet import MeanConfig, frechet_mean, karcher_mean, karcher_objective
from manifoldmix.errors import ConvergenceError
from manifoldmix.gmm import fit_euclidean, fit_riemannian, fit_tangent, init_shared, loglik
from manifoldmix.manifolds import (
    ManifoldId,
    Point,
    distance,
    exp,
    inner,
    log,
    parallel_transport,
    tangent_basis,
    to_coords,
)

from helpers import spd_point, sphere_ball, sphere_point, tangent_of_length

VERDICTS: dict[int, str] = {}


def verdict(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    VERDICTS[n] = line
    print(line)
    assert ok, line


def ordered(e, t, r):
    return r > t > e


def fmt(res):
    s = {m.value: res.methods[m] for m in res.methods}
    return " ".join(f"{k[0].upper()}={v.mean_ll:.1f}+-{v.std_ll:.1f}" for k, v in s.items())


# ---------------------------------------------------------------------------


def test_criterion_1_geometry_suite():
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    worst = {"sphere": 0.0, "spd": 0.0, "transport": 0.0}
    for m in [ManifoldId.sphere(d) for d in range(2, 11)] + [ManifoldId.spd(2), ManifoldId.spd(3)]:
        sphere = m.kind.value == "sphere"
        for _ in range(1000):
            x = sphere_point(m.size, rng) if sphere else spd_point(m.size, rng)
            r = rng.uniform(0, math.pi - 0.01) if sphere else rng.uniform(0, 5)
            u = tangent_of_length(x, rng, r)
            b = tangent_basis(x)
            err = np.linalg.norm(to_coords(b, log(x, exp(x, u))) - to_coords(b, u))
            worst[m.kind.value] = max(worst[m.kind.value], err)
        for _ in range(1000):
            x = sphere_point(m.size, rng) if sphere else spd_point(m.size, rng)
            y = sphere_point(m.size, rng) if sphere else spd_point(m.size, rng)
            u = tangent_of_length(x, rng, rng.uniform(0.1, 2))
            v = tangent_of_length(x, rng, rng.uniform(0.1, 2))
            tu, tv = parallel_transport(x, y, u), parallel_transport(x, y, v)
            worst["transport"] = max(worst["transport"], abs(inner(y, tu, tv) - inner(x, u, v)))
    secs = time.perf_counter() - t0
    ok = worst["sphere"] <= 1e-9 and worst["spd"] <= 1e-7 and worst["transport"] <= 1e-9 and secs < 30
    verdict(1, ok, f"round trip sphere {worst['sphere']:.1e} (<=1e-9), spd {worst['spd']:.1e} (<=1e-7), "
                   f"transport {worst['transport']:.1e} (<=1e-9), {secs:.1f}s (<30s)")


def _grid_minimizer(x, step_deg=0.5):
    lat = np.radians(np.arange(-90.0, 90.0 + 1e-9, step_deg))
    lon = np.radians(np.arange(-180.0, 180.0, step_deg))
    la, lo = np.meshgrid(lat, lon, indexing="ij")
    grid = np.stack([np.cos(la) * np.cos(lo), np.cos(la) * np.sin(lo), np.sin(la)], axis=-1).reshape(-1, 3)
    obj = np.mean(np.arccos(np.clip(grid @ x.T, -1.0, 1.0)) ** 2, axis=1)
    return grid[int(np.argmin(obj))]


def test_criterion_2_frechet_oracle():
    rng = np.random.default_rng(202)
    m = ManifoldId.sphere(2)
    worst, monotone = 0.0, True
    for _ in range(20):
        pts = sphere_ball(2, 10, 1.0, rng, center=sphere_point(2, rng))
        x = np.stack([p.coords for p in pts])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            mu = frechet_mean(pts)
        oracle = Point(m, _grid_minimizer(x))
        worst = max(worst, distance(mu, oracle))
        w = np.full(10, 0.1)
        prev = math.inf
        for it in range(1, 30):
            try:
                cur, _ = karcher_mean(m, x, w, MeanConfig(max_iters=it, tol=1e-300))
            except ConvergenceError as exc:
                cur = exc.last
            obj = karcher_objective(m, x, w, cur)
            monotone &= obj <= prev + 1e-10
            prev = obj
    verdict(2, worst < 0.02 and monotone,
            f"max |frechet - grid argmin| = {worst:.4f} rad (<0.02) over 20 datasets; objective monotone={monotone}")


def _monotone_dataset(kind, rng):
    if kind == "sphere":
        pts = []
        for _ in range(3):
            pts += sample_wgd(RgdParams(sphere_point(3, rng), random_spd(3, 0.01, 0.25, rng)), 30, rng)
        return pts
    m = ManifoldId.spd(2)
    pts = []
    for _ in range(3):
        pts += sample_wgd(RgdParams(Point(m, random_spd(2, 0.1, 2.0, rng)), random_spd(3, 0.1, 0.5, rng)), 30, rng)
    return pts


def test_criterion_3_em_monotonicity():
    rng = np.random.default_rng(303)
    worst_step = math.inf
    fits = 0
    for kind in ("sphere", "spd"):
        for _ in range(50):
            data = _monotone_dataset(kind, rng)
            labels = init_shared(data, 3, rng)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                base = frechet_mean(data)
            for mix in (fit_euclidean(data, labels), fit_tangent(data, base, labels), fit_riemannian(data, labels)):
                if len(mix.train_log) > 1:
                    worst_step = min(worst_step, float(np.min(np.diff(mix.train_log))))
                fits += 1
    verdict(3, worst_step >= -1e-8,
            f"smallest train-LL step {worst_step:.2e} (>= -1e-8) over {fits} fits (50 datasets x S^3, SPD(2) x 3 variants)")


def _bench(manifold, family, n_targets, seed=2024):
    return run_experiment(ExperimentSpec(manifold, family, n_targets=n_targets, n_train=100, n_test=100, seed=seed))


def _means(res):
    return [res.methods[m].mean_ll for m in res.methods]


def test_criterion_4_sphere_table_ordering():
    t0 = time.perf_counter()
    parts, ok = [], True
    for family in ("rgd", "wgd", "vmf"):
        res = _bench(ManifoldId.sphere(3), family, 20)
        e, t, r = _means(res)
        good = ordered(e, t, r)
        if family == "rgd":
            good = good and e < 0 and r > 0
        ok &= good
        parts.append(f"{family}: {fmt(res)}")
    secs = time.perf_counter() - t0
    ok &= secs < 600
    verdict(4, ok, "; ".join(parts) + f"; need R>T>E (rgd: E<0<R); {secs:.0f}s (<600s)")


def test_criterion_5_spd_table_ordering():
    t0 = time.perf_counter()
    parts, ok = [], True
    for family in ("rgd", "iwd"):
        res = _bench(ManifoldId.spd(2), family, 20)
        ok &= ordered(*_means(res))
        parts.append(f"{family}: {fmt(res)}")
    secs = time.perf_counter() - t0
    ok &= secs < 600
    verdict(5, ok, "; ".join(parts) + f"; need R>T>E; {secs:.0f}s (<600s)")


def test_criterion_6_dimensional_gap():
    gaps = {}
    for d in (3, 7):
        e, t, r = _means(_bench(ManifoldId.sphere(d), "rgd", 10))
        gaps[d] = r - t
    verdict(6, gaps[7] > gaps[3], f"R-T gap S^7 = {gaps[7]:.1f} vs S^3 = {gaps[3]:.1f} (need S^7 > S^3)")


def test_criterion_7_c_shape_ordering():
    rng = np.random.default_rng(707)
    data = make_c_shape(200, 0.05, rng)
    labels = init_shared(data, 3, rng)
    e = fit_euclidean(data, labels).train_log[-1]
    t = fit_tangent(data, frechet_mean(data), labels).train_log[-1]
    r = fit_riemannian(data, labels).train_log[-1]
    verdict(7, ordered(e, t, r), f"C-shape train LL: E={e:.1f} T={t:.1f} R={r:.1f} (need R>T>E)")


def test_criterion_8_flat_limit():
    rng = np.random.default_rng(808)
    worst = 0.0
    for d in (2, 3):
        center = sphere_point(d, rng)
        train = sphere_ball(d, 100, 0.05, rng, center=center)
        test = sphere_ball(d, 100, 0.05, rng, center=center)
        labels = init_shared(train, 2, rng)
        lt = loglik(fit_tangent(train, frechet_mean(train), labels), test)
        lr = loglik(fit_riemannian(train, labels), test)
        worst = max(worst, abs(lr - lt) / abs(lr))
    verdict(8, worst < 0.02, f"max |LL_R - LL_T| / |LL_R| = {worst:.2e} (<0.02) on S^2, S^3 in a 0.05 ball")


def test_criterion_9_distortion():
    rng = np.random.default_rng(909)
    base = sphere_point(2, rng)
    data = sphere_ball(2, 100, math.pi / 3, rng, center=base)
    rep = distortion_report(data, base)
    ok = rep.signed_mean <= 0 and rep.base_distance_error <= 1e-10
    verdict(9, ok, f"signed mean {rep.signed_mean:.4f} (<=0), basepoint distance error "
                   f"{rep.base_distance_error:.1e} (<=1e-10)")


def test_criterion_10_cmd_bench_determinism(tmp_path):
    blobs = []
    for name in ("first", "second"):
        out = tmp_path / f"{name}.csv"
        rc = cli_main(["bench", "--manifold", "sphere:2", "--family", "rgd", "--targets", "5",
                       "--seed", "7", "--out", str(out)])
        assert rc == 0
        blobs.append((out.read_bytes(), per_target_path(out).read_bytes()))
    verdict(10, blobs[0] == blobs[1], f"two identical bench invocations byte-identical: {blobs[0] == blobs[1]}")

