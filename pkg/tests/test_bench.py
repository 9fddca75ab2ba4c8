import math

import numpy as np
import pytest

from manifoldmix import bench
from manifoldmix.bench import (
    ExperimentSpec,
    distortion_report,
    make_c_shape,
    make_sphere_targets,
    make_spd_targets,
    per_target_csv,
    read_per_target_csv,
    run_experiment,
    summary_csv,
    target_rng,
)
from manifoldmix.distributions import Family
from manifoldmix.errors import CutLocusError, ExperimentError, ManifoldError
from manifoldmix.gmm import Variant
from manifoldmix.manifolds import ManifoldId, Point, distance, log, stack_points, tangent_basis, to_coords

from helpers import spd_point, sphere_ball

S2 = ManifoldId.sphere(2)
SMALL = dict(n_targets=3, n_train=40, n_test=30, seed=11)


class TestTargets:
    def test_vmf_concentrations(self, rng):
        spec = make_sphere_targets(3, "vmf", rng)
        assert len(spec.components) == 3
        assert all(20 <= c.concentration <= 70 for c in spec.components)
        np.testing.assert_allclose(spec.weights, 1 / 3)

    def test_sphere_means(self, rng):
        for d in (2, 3, 7):
            spec = make_sphere_targets(d, "rgd", rng)
            mus = [c.mean for c in spec.components]
            np.testing.assert_allclose(mus[0].coords, np.ones(d + 1) / math.sqrt(d + 1), atol=1e-15)
            assert distance(mus[1], mus[2]) == pytest.approx(math.pi, abs=1e-7)
            for c in spec.components:
                w = np.linalg.eigvalsh(c.cov)
                assert w.min() >= 0.01 - 1e-12 and w.max() <= 0.25 + 1e-12

    def test_spd_targets(self, rng):
        for d in (2, 3):
            rgd = make_spd_targets(d, "rgd", rng)
            assert len(rgd.components) == 5
            for c in rgd.components:
                w = np.linalg.eigvalsh(c.mean.coords)
                assert w.min() >= 0.1 - 1e-10 and w.max() <= 2 + 1e-10
                w = np.linalg.eigvalsh(c.cov)
                assert w.min() >= 0.1 - 1e-10 and w.max() <= 0.5 + 1e-10
            iwd = make_spd_targets(d, "iwd", rng)
            assert all(d + 1 <= c.dof <= d + 3 for c in iwd.components)

    def test_iwd_scales_are_rgd_means(self):
        rgd = make_spd_targets(2, "rgd", np.random.default_rng(3))
        iwd = make_spd_targets(2, "iwd", np.random.default_rng(3))
        # the first draw of both streams is the first component's mean
        assert np.array_equal(rgd.components[0].mean.coords, iwd.components[0].scale.coords)
        for c in iwd.components:
            w = np.linalg.eigvalsh(c.scale.coords)
            assert w.min() >= 0.1 - 1e-10 and w.max() <= 2 + 1e-10

    def test_deterministic(self):
        a = make_spd_targets(2, "iwd", np.random.default_rng(5))
        b = make_spd_targets(2, "iwd", np.random.default_rng(5))
        for x, y in zip(a.components, b.components):
            assert x.scale == y.scale and x.dof == y.dof

    @pytest.mark.parametrize("m,family", [("sphere:3", "iwd"), ("spd:2", "vmf"), ("spd:4", "rgd"), ("sphere:1", "rgd")])
    def test_invalid_combinations(self, m, family):
        with pytest.raises(ValueError):
            bench.make_targets(ManifoldId.parse(m), family, np.random.default_rng(0))


class TestCShape:
    def test_valid_points(self, rng):
        pts = make_c_shape(200, 0.05, rng)
        assert len(pts) == 200
        for p in pts:
            assert abs(np.linalg.norm(p.coords) - 1) <= 1e-12

    def test_noiseless_on_arc(self, rng):
        center = Point(S2, bench.C_SHAPE_CENTER)
        pts = make_c_shape(100, 0.0, rng)
        for p in pts:
            assert distance(center, p) == pytest.approx(0.6, abs=1e-9)
        # the arc spans 270 degrees and leaves the 90 degree gap around +e1
        ang = np.degrees(np.arctan2([p.coords[1] for p in pts], [p.coords[0] for p in pts])) % 360
        assert ang.min() >= 45 - 1e-9 and ang.max() <= 315 + 1e-9
        assert ang.max() - ang.min() > 250

    def test_deterministic(self):
        a = make_c_shape(50, 0.05, np.random.default_rng(2))
        b = make_c_shape(50, 0.05, np.random.default_rng(2))
        assert a == b

    def test_minimum_size(self, rng):
        with pytest.raises(ValueError):
            make_c_shape(5, 0.05, rng)


class TestDistortion:
    def test_all_equal(self):
        p = Point(S2, [0.0, 0.6, 0.8])
        rep = distortion_report([p] * 10, p)
        assert rep.mean_abs == 0 and rep.max_abs == 0 and rep.signed_mean == 0

    def test_pair_with_base(self, rng):
        base = Point(S2, [1.0, 0, 0])
        y = sphere_ball(2, 1, 1.0, rng)[0]
        rep = distortion_report([base, y], base)
        assert rep.n_pairs == 1 and rep.max_abs < 1e-12

    def test_tangent_plane_stretches(self, rng):
        base = Point(S2, [1.0, 0, 0])
        rep = distortion_report(sphere_ball(2, 100, math.pi / 3, rng), base)
        assert rep.signed_mean <= 0
        assert rep.signed_max <= 1e-12
        assert rep.base_distance_error <= 1e-10
        assert rep.frac_beyond_half_pi == 0

    def test_brute_force_agreement(self, rng):
        base = Point(S2, [1.0, 0, 0])
        pts = sphere_ball(2, 15, 1.0, rng)
        b = tangent_basis(base)
        c = [to_coords(b, log(base, p)) for p in pts]
        diffs = [distance(pts[i], pts[j]) - np.linalg.norm(c[i] - c[j])
                 for i in range(15) for j in range(i + 1, 15)]
        rep = distortion_report(pts, base)
        assert rep.signed_mean == pytest.approx(np.mean(diffs), abs=1e-12)
        assert rep.max_abs == pytest.approx(np.max(np.abs(diffs)), abs=1e-12)

    def test_spd(self, rng):
        pts = [spd_point(2, rng) for _ in range(10)]
        rep = distortion_report(pts, pts[0])
        assert rep.base_distance_error < 1e-10

    def test_cut_locus(self):
        base = Point(S2, [1.0, 0, 0])
        with pytest.raises(CutLocusError):
            distortion_report([Point(S2, [-1.0, 0, 0])], base)


class TestSpec:
    def test_defaults(self):
        s = ExperimentSpec(ManifoldId.sphere(3), "rgd")
        assert (s.n_targets, s.n_train, s.n_test, s.k_target, s.k_model) == (100, 100, 100, 3, 3)
        assert ExperimentSpec(ManifoldId.spd(2), "iwd").k_model == 5

    def test_validation(self):
        with pytest.raises(ValueError):
            ExperimentSpec(ManifoldId.sphere(3), "rgd", n_targets=0)
        with pytest.raises(ValueError):
            ExperimentSpec(ManifoldId.sphere(3), "iwd")
        with pytest.raises(ValueError):
            ExperimentSpec(ManifoldId.sphere(3), "rgd", k_model=0)


def test_target_rng_streams():
    a = target_rng(7, 0).random(4)
    assert np.array_equal(a, target_rng(7, 0).random(4))
    assert not np.array_equal(a, target_rng(7, 1).random(4))
    assert not np.array_equal(a, target_rng(8, 0).random(4))
    spawned = np.random.default_rng(np.random.SeedSequence(7).spawn(2)[1]).random(4)
    assert np.array_equal(spawned, target_rng(7, 1).random(4))


class TestRunExperiment:
    def test_deterministic_and_parallel_safe(self):
        spec = ExperimentSpec(S2, "rgd", **SMALL)
        a = run_experiment(spec, workers=1)
        b = run_experiment(spec, workers=2)
        assert a == b
        assert summary_csv(a) == summary_csv(b) and per_target_csv(a) == per_target_csv(b)

    def test_aggregates_match_csv(self):
        spec = ExperimentSpec(ManifoldId.spd(2), "iwd", n_targets=3, n_train=30, n_test=20, seed=4)
        res = run_experiment(spec, workers=1)
        rows = read_per_target_csv(per_target_csv(res))
        assert len(rows) == 9
        for method in Variant:
            vals = [float(r["test_ll"]) for r in rows if r["method"] == method.value]
            s = res.summary(method)
            assert s.mean_ll == pytest.approx(float(np.mean(vals)), abs=1e-9)
            assert s.std_ll == pytest.approx(float(np.std(vals, ddof=1)), abs=1e-9)
            assert s.std_ll >= 0
        header = summary_csv(res).splitlines()[0]
        assert header == "manifold,dim,family,method,mean_ll,std_ll,failures"

    def test_methods_share_data_and_init(self, monkeypatch):
        seen = {}

        def spy(name, fn):
            def wrapped(data, *args):
                labels = args[-2] if name == "tangent" else args[0]
                seen.setdefault(name, []).append((stack_points(data)[1].copy(), np.array(labels)))
                return fn(data, *args)
            return wrapped

        monkeypatch.setattr(bench, "fit_euclidean", spy("euclidean", bench.fit_euclidean))
        monkeypatch.setattr(bench, "fit_tangent", spy("tangent", bench.fit_tangent))
        monkeypatch.setattr(bench, "fit_riemannian", spy("riemannian", bench.fit_riemannian))
        run_experiment(ExperimentSpec(S2, "wgd", **SMALL), workers=1)
        for i in range(SMALL["n_targets"]):
            ref_x, ref_l = seen["euclidean"][i]
            for name in ("tangent", "riemannian"):
                x, lab = seen[name][i]
                assert np.array_equal(x, ref_x) and np.array_equal(lab, ref_l)

    def test_failure_policy(self, monkeypatch):
        real = bench.fit_riemannian
        calls = {"n": 0}

        def flaky(data, labels, cfg):
            calls["n"] += 1
            if calls["n"] == 1:
                raise ManifoldError("injected")
            return real(data, labels, cfg)

        monkeypatch.setattr(bench, "fit_riemannian", flaky)
        spec = ExperimentSpec(S2, "rgd", n_targets=6, n_train=30, n_test=10, seed=1)
        res = run_experiment(spec, workers=1)
        assert res.n_failed == 1 and res.n_completed == 5
        assert res.summary("riemannian").failures == 1
        statuses = {r.method: r.status for r in res.rows if r.target_index == 0}
        assert statuses[Variant.RIEMANNIAN] == "failed" and statuses[Variant.EUCLIDEAN] == "skipped"
        oks = [r.test_ll for r in res.rows if r.method is Variant.EUCLIDEAN and r.status == "ok"]
        assert res.summary("euclidean").mean_ll == pytest.approx(np.mean(oks))

    def test_too_many_failures(self, monkeypatch):
        def broken(*args):
            raise ManifoldError("injected")

        monkeypatch.setattr(bench, "fit_riemannian", broken)
        with pytest.raises(ExperimentError):
            run_experiment(ExperimentSpec(S2, "rgd", n_targets=2, n_train=20, n_test=5), workers=1)

    def test_worker_count_env(self, monkeypatch):
        monkeypatch.setenv("MANIFOLDMIX_THREADS", "3")
        assert bench.worker_count() == 3
        monkeypatch.setenv("MANIFOLDMIX_THREADS", "0")
        assert bench.worker_count() == 1


def test_family_enum_values():
    assert {f.value for f in Family} == {"rgd", "wgd", "vmf", "iwd"}
