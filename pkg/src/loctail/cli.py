"""Command-line front end.

Every run writes ``manifest.json`` with the fully resolved arguments and
field spec into its output directory; ``loctail rerun <manifest>`` repeats
the run.  Exit status: 0 success, 2 invalid input or violated
precondition, 3 failed check.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .asymptotics import limit_diagnostics
from .covariance import DegenerateConfiguration, detcov_chain_check, self_similarity_residual
from .field import FieldSpec, SpecificationError
from .moments import lyapunov_consistent, moment_mc, moment_series, MomentSeries, intersection_field
from .paths import InsufficientData, tail_curve, tail_exponent_fit
from .presets import load_spec
from .tours import TourReport, grid_covering_bound, load_points_csv, narrowing_order, nn_tour_length, \
    worst_case_search

EXIT_OK, EXIT_INPUT, EXIT_CHECK = 0, 2, 3
MANIFEST_SCHEMA = "loctail.manifest/1"


class CheckFailed(Exception):
    pass


def _count(text: str) -> int:
    v = float(text)
    if v != int(v) or v < 0:
        raise argparse.ArgumentTypeError(f"not a count: {text}")
    return int(v)


def _floats(text: str) -> list:
    return [float(x) for x in text.split(",") if x.strip()]


def _ints(text: str) -> list:
    return [int(x) for x in text.split(",") if x.strip()]


def _dump(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _spec(args) -> FieldSpec:
    if getattr(args, "spec_json", None):
        return FieldSpec.from_json(args.spec_json)
    return load_spec(args.spec)


def cmd_moments(args, out: Path) -> dict:
    spec = _spec(args)
    if args.budget:
        series = moment_series(spec, args.n_max, args.budget, args.seed, args.beta, args.estimator)
    else:
        ests = [moment_mc(spec, n, args.samples, args.seed, args.beta, args.estimator)
                for n in range(1, args.n_max + 1)]
        series = MomentSeries(spec.fingerprint(), ests, args.beta)
    (out / "moments.csv").write_text(series.to_csv())
    _dump(out / "moments.json", series.to_json())
    return {"lyapunov_consistent": lyapunov_consistent(series)}


def cmd_tails(args, out: Path) -> dict:
    spec = _spec(args)
    lam = args.lam if args.lam else spec.lam
    curve = tail_curve(spec, args.thresholds, args.replications, args.seed, args.grid, args.eps_k)
    (out / "tail.csv").write_text(curve.to_csv())
    summary = {"lambda": lam, "replications": args.replications}
    try:
        fit = tail_exponent_fit(curve, lam)
        summary.update(slope=fit.slope, slope_ci=list(fit.ci), curvature=fit.curvature,
                       curvature_flag=fit.curvature_flag)
    except InsufficientData as exc:
        summary["fit_error"] = str(exc)
    _dump(out / "tailfit.json", summary)
    return summary


def cmd_tour(args, out: Path) -> dict:
    alpha = tuple(args.alpha)
    if args.points:
        P = load_points_csv(Path(args.points).read_text())
        order = narrowing_order(P, alpha)
        rep = TourReport(P, order, alpha, nn_tour_length(P, order, alpha),
                         grid_covering_bound(P.shape[0], alpha))
    else:
        rep = worst_case_search(args.n, alpha, args.restarts, args.seed, args.steps)
    _dump(out / "tour.json", rep.to_json())
    ok = rep.length <= rep.bound * (1 + 1e-12)
    if not ok:
        raise CheckFailed(f"tour length {rep.length} exceeds bound {rep.bound}")
    return {"length": rep.length, "bound": rep.bound, "within_bound": ok}


def cmd_intersect(args, out: Path) -> dict:
    specs = [load_spec(s) for s in args.spec]
    spec = intersection_field(specs)
    _dump(out / "spec.json", spec.to_json())
    summary = {"N": spec.N, "d": spec.d, "gamma": spec.lam, "integrable": spec.integrable()}
    if args.n_max:
        ests = [moment_mc(spec, n, args.samples, args.seed) for n in range(1, args.n_max + 1)]
        series = MomentSeries(spec.fingerprint(), ests)
        (out / "moments.csv").write_text(series.to_csv())
    return summary


def cmd_check(args, out: Path) -> dict:
    spec = _spec(args)
    lam = spec.lam
    series = moment_series(spec, args.n_max, args.budget, args.seed)
    curve = tail_curve(spec, args.thresholds, args.replications, args.seed, args.grid, args.eps_k)
    (out / "moments.csv").write_text(series.to_csv())
    (out / "tail.csv").write_text(curve.to_csv())
    verdict = limit_diagnostics(series, curve, lam)
    _dump(out / "verdict.json", verdict.to_json())
    if not verdict.consistent:
        raise CheckFailed("moment and tail routes disagree")
    return {"consistent": verdict.consistent}


def cmd_validate(args, out: Path) -> dict:
    spec = _spec(args)
    spec.require_integrable(1.0)
    rng = np.random.default_rng(args.seed)
    worst_ss, worst_chain, degenerate = 0.0, 0.0, 0
    for _ in range(args.trials):
        n = int(rng.integers(1, 6))
        P = rng.random((n, spec.N))
        omega = float(np.exp(rng.uniform(-2, 2)))
        worst_ss = max(worst_ss, self_similarity_residual(spec, omega, P))
        rep = detcov_chain_check(spec, P)
        if rep.degenerate:
            degenerate += 1
        else:
            worst_chain = max(worst_chain, rep.rel_error)
    result = {"lambda": spec.lam, "integrable": True, "self_similarity_residual": worst_ss,
              "chain_rel_error": worst_chain, "degenerate": degenerate,
              "passed": worst_ss <= 1e-8 and worst_chain <= 1e-8}
    _dump(out / "validation.json", result)
    if not result["passed"]:
        raise CheckFailed("validation checks failed")
    return result


COMMANDS = {"moments": cmd_moments, "tails": cmd_tails, "tour": cmd_tour,
            "intersect": cmd_intersect, "check": cmd_check, "validate": cmd_validate}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="loctail", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, spec=True, seed=True):
        if spec:
            sp.add_argument("--spec", required=True, help="preset name or spec JSON path")
        if seed:
            sp.add_argument("--seed", type=int, required=True)
        sp.add_argument("--out", default=None, help="output directory (default ./runs/<command>)")

    sp = sub.add_parser("moments", help="Monte-Carlo local-time moments")
    common(sp)
    sp.add_argument("--n-max", type=int, default=6)
    sp.add_argument("--samples", type=_count, default=10 ** 5)
    sp.add_argument("--budget", type=_count, default=0, help="adaptive total budget")
    sp.add_argument("--beta", type=float, default=1.0)
    sp.add_argument("--estimator", choices=("mom", "mean"), default="mom")

    def tail_opts(sp):
        sp.add_argument("--thresholds", type=_floats, default=[1.5, 2.0, 2.5, 3.0])
        sp.add_argument("--replications", type=_count, default=10 ** 4)
        sp.add_argument("--grid", type=int, default=None)
        sp.add_argument("--eps-k", type=_ints, default=[4, 5, 6, 7, 8])

    sp = sub.add_parser("tails", help="empirical tail curve and exponent fit")
    common(sp)
    tail_opts(sp)
    sp.add_argument("--lam", type=float, default=None, help="exponent to test (default: spec)")

    sp = sub.add_parser("tour", help="worst-case NN tour search or tour of given points")
    common(sp, spec=False)
    sp.add_argument("--n", type=int, default=64)
    sp.add_argument("--alpha", type=_floats, default=[1.0, 1.0])
    sp.add_argument("--restarts", type=int, default=32)
    sp.add_argument("--steps", type=int, default=200)
    sp.add_argument("--points", default=None, help="CSV with one point per row")

    sp = sub.add_parser("intersect", help="intersection field of independent fields")
    sp.add_argument("--spec", action="append", required=True)
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--out", default=None)
    sp.add_argument("--n-max", type=int, default=0)
    sp.add_argument("--samples", type=_count, default=10 ** 5)

    sp = sub.add_parser("check", help="moment-limit versus tail-slope consistency")
    common(sp)
    sp.add_argument("--n-max", type=int, default=6)
    sp.add_argument("--budget", type=_count, default=3 * 10 ** 6)
    tail_opts(sp)

    sp = sub.add_parser("validate", help="validate a spec")
    common(sp, seed=False)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--trials", type=int, default=200)

    sp = sub.add_parser("rerun", help="repeat the run recorded in a manifest")
    sp.add_argument("manifest")
    sp.add_argument("--out", default=None)
    return p


def _execute(command: str, args, out: Path) -> int:
    out.mkdir(parents=True, exist_ok=True)
    resolved = {k: v for k, v in vars(args).items() if k not in ("out", "command", "spec_json")}
    manifest = {"schema": MANIFEST_SCHEMA, "version": __version__, "command": command,
                "args": resolved, "outputs": {"moments": "loctail.moments/1",
                                              "tour": "loctail.tour/1",
                                              "verdict": "loctail.verdict/1"}}
    _dump(out / "manifest.json", manifest)
    try:
        if command not in ("tour", "intersect"):
            manifest["spec"] = _spec(args).to_json()
            _dump(out / "manifest.json", manifest)
        summary = COMMANDS[command](args, out)
        status = EXIT_OK
    except (CheckFailed, InsufficientData) as exc:
        summary, status = {"error": str(exc)}, EXIT_CHECK
        print(f"check failed: {exc}", file=sys.stderr)
    except (SpecificationError, DegenerateConfiguration, OSError) as exc:
        summary, status = {"error": str(exc)}, EXIT_INPUT
        print(f"error: {exc}", file=sys.stderr)
    summary["exit_status"] = status
    _dump(out / "summary.json", summary)
    return status


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "rerun":
        try:
            doc = json.loads(Path(args.manifest).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            print(f"error: cannot read manifest: {exc}", file=sys.stderr)
            return EXIT_INPUT
        if doc.get("schema") != MANIFEST_SCHEMA or doc.get("command") not in COMMANDS:
            print("error: not a loctail manifest", file=sys.stderr)
            return EXIT_INPUT
        ns = argparse.Namespace(**doc["args"])
        if "spec" in doc:
            ns.spec_json = doc["spec"]
        out = Path(args.out) if args.out else Path(args.manifest).parent / "rerun"
        return _execute(doc["command"], ns, out)
    out = Path(args.out) if args.out else Path("runs") / args.command
    return _execute(args.command, args, out)


if __name__ == "__main__":
    sys.exit(main())
