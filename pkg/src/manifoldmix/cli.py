"""Command-line front end.

Subcommands::

    manifoldmix bench    run a density-estimation benchmark, write summary + per-target CSVs
    manifoldmix fit      fit one mixture to a point CSV, write model JSON + fit report
    manifoldmix sample   draw points from a randomly generated target mixture
    manifoldmix grid     tabulate a fitted S^2 mixture on a lat/lon grid
    manifoldmix distort  pairwise distance distortion of a single tangent space

Exit codes: 0 success, 1 runtime or numerical failure, 2 usage or validation
failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import bench, gmm
from .distributions import Family, sample_target
from .errors import (
    ConvergenceError,
    CutLocusError,
    ExperimentError,
    ManifoldError,
    PathologicalCovarianceError,
    UnsupportedError,
)
from .frechet import frechet_mean
from .manifolds import Kind, ManifoldId, Point, PointFileError, read_points, write_points

log = logging.getLogger("manifoldmix")

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


class UsageError(Exception):
    pass


def _manifold(text: str) -> ManifoldId:
    try:
        return ManifoldId.parse(text)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _family(text: str) -> Family:
    try:
        return Family(text.strip().lower())
    except ValueError as exc:
        choices = ", ".join(f.value for f in Family)
        raise UsageError(f"unknown family {text!r}; choose from {choices}") from exc


def origin(m: ManifoldId) -> Point:
    """``e1`` on spheres, the identity on SPD manifolds."""
    if m.kind is Kind.SPHERE:
        return Point(m, np.eye(m.size + 1)[0])
    return Point(m, np.eye(m.size))


def _basepoint(kind: str, points) -> Point:
    if kind == "origin":
        return origin(points[0].manifold)
    return frechet_mean(points)


def _read(path) -> tuple[ManifoldId, list[Point]]:
    try:
        return read_points(path)
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from exc
    except PointFileError as exc:
        raise UsageError(str(exc)) from exc


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def per_target_path(summary: Path) -> Path:
    """``results.csv`` -> ``results.targets.csv``."""
    return summary.with_name(summary.stem + ".targets" + (summary.suffix or ".csv"))


# ---------------------------------------------------------------------------
# commands


def cmd_bench(args) -> int:
    m = _manifold(args.manifold)
    family = _family(args.family)
    try:
        spec = bench.ExperimentSpec(m, family, n_targets=args.targets, n_train=args.train,
                                    n_test=args.test, k_model=args.k, seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    result = bench.run_experiment(spec)
    out = Path(args.out)
    _write_text(out, bench.summary_csv(result))
    _write_text(per_target_path(out), bench.per_target_csv(result))
    for method in bench.METHODS:
        s = result.methods[method]
        log.info("%-10s %12.3f +- %9.3f  (failures %d)", method.value, s.mean_ll, s.std_ll, s.failures)
    return EXIT_OK


def cmd_fit(args) -> int:
    m, points = _read(args.input)
    if args.k < 1 or args.k > len(points):
        raise UsageError(f"--k must lie in 1..{len(points)}")
    rng = np.random.default_rng(args.seed)
    labels = gmm.init_shared(points, args.k, rng)
    method = gmm.Variant(args.method)
    if method is gmm.Variant.EUCLIDEAN:
        mix = gmm.fit_euclidean(points, labels)
    elif method is gmm.Variant.TANGENT:
        mix = gmm.fit_tangent(points, _basepoint(args.basepoint, points), labels)
    else:
        mix = gmm.fit_riemannian(points, labels)
    details = gmm.loglik_details(mix, points)
    report = {
        "manifold": str(m),
        "method": method.value,
        "k": mix.k,
        "seed": args.seed,
        "n_points": len(points),
        "final_train_ll": mix.train_log[-1],
        "iterations": mix.n_iter,
        "reseeds": mix.reseeds,
        "incidents": details.incidents,
    }
    if method is gmm.Variant.TANGENT:
        report["basepoint"] = args.basepoint
    out = Path(args.out)
    _write_text(out, gmm.dumps(mix))
    report_path = Path(args.report) if args.report else out.with_name(out.stem + ".report.json")
    _write_text(report_path, json.dumps(report, indent=2) + "\n")
    log.info("final train log-likelihood %.6f after %d iterations", report["final_train_ll"], mix.n_iter)
    return EXIT_OK


def cmd_sample(args) -> int:
    m = _manifold(args.manifold)
    family = _family(args.family)
    try:
        bench.check_target_family(m, family)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if args.n < 1:
        raise UsageError("--n must be positive")
    rng = np.random.default_rng(args.seed)
    target = bench.make_targets(m, family, rng)
    points = sample_target(target, args.n, rng)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_points(out, points)
    return EXIT_OK


def cmd_grid(args) -> int:
    try:
        mix = gmm.loads(Path(args.model).read_text())
    except OSError as exc:
        raise UsageError(f"cannot read {args.model}: {exc.strerror}") from exc
    except (ValueError, KeyError, TypeError) as exc:
        raise UsageError(f"{args.model}: not a mixture document ({exc})") from exc
    try:
        cells = gmm.density_grid(mix, args.resolution)
    except (UnsupportedError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lat", "lon", "density", "solid_angle"])
        for c in cells:
            w.writerow([repr(c.lat), repr(c.lon), repr(c.density), repr(c.solid_angle)])
    return EXIT_OK


def cmd_distort(args) -> int:
    _, points = _read(args.input)
    report = bench.distortion_report(points, _basepoint(args.basepoint, points))
    doc = report.to_dict()
    doc["basepoint"] = args.basepoint
    _write_text(Path(args.out), json.dumps(doc, indent=2) + "\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="manifoldmix", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("bench", help="run a density-estimation benchmark")
    b.add_argument("--manifold", default="sphere:3", help="sphere:d or spd:d (default sphere:3)")
    b.add_argument("--family", default="rgd", help="rgd, wgd, vmf (spheres) or rgd, iwd (SPD)")
    b.add_argument("--targets", type=int, default=20, help="number of random targets")
    b.add_argument("--train", type=int, default=100, help="training points per target")
    b.add_argument("--test", type=int, default=100, help="test points per target")
    b.add_argument("--k", type=int, default=None, help="model components (default: target components)")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", default="bench.csv", help="summary CSV; per-target rows go to <stem>.targets.csv")
    b.set_defaults(func=cmd_bench)

    f = sub.add_parser("fit", help="fit a mixture to a point CSV")
    f.add_argument("--input", required=True)
    f.add_argument("--method", choices=[v.value for v in gmm.Variant], default="riemannian")
    f.add_argument("--basepoint", choices=["origin", "frechet"], default="frechet",
                   help="tangent basepoint for --method tangent")
    f.add_argument("--k", type=int, default=3)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--out", required=True, help="model JSON")
    f.add_argument("--report", default=None, help="fit report JSON (default <stem>.report.json)")
    f.set_defaults(func=cmd_fit)

    s = sub.add_parser("sample", help="sample points from a random target mixture")
    s.add_argument("--manifold", default="sphere:2")
    s.add_argument("--family", default="rgd")
    s.add_argument("--n", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sample)

    g = sub.add_parser("grid", help="density of an S^2 mixture on a lat/lon grid")
    g.add_argument("--model", required=True, help="model JSON written by fit")
    g.add_argument("--resolution", type=float, default=2.0, help="cell size in degrees")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_grid)

    d = sub.add_parser("distort", help="tangent-space distance distortion report")
    d.add_argument("--input", required=True)
    d.add_argument("--basepoint", choices=["origin", "frechet"], default="frechet")
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_distort)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"manifoldmix {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CutLocusError as exc:
        print(f"manifoldmix {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ExperimentError, ConvergenceError, PathologicalCovarianceError, ManifoldError,
            np.linalg.LinAlgError, ValueError) as exc:
        print(f"manifoldmix {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
