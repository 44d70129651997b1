"""Command-line front end: ``geomeasure <command> ...`` with JSON reports.

Exit status: 0 on success, 1 on validation errors (bad files, bad flags,
malformed scenes, functions undefined on their domain), 2 on numerical failure (flagged or degenerate results,
failed checks).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .io import SceneSyntaxError, load_scene, scene_to_doc, serialize_report

__all__ = ["main", "build_parser"]

log = logging.getLogger("geomeasure")

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2


class UsageError(ValueError):
    pass


class NumericalFailure(RuntimeError):
    def __init__(self, message: str, doc: dict | None = None):
        super().__init__(message)
        self.doc = doc


def _scene_arg(sub):
    sub.add_argument("scene_pos", nargs="?", metavar="SCENE", help="scene file")
    sub.add_argument("--scene", help="scene file (alternative to the positional argument)")


def _spec_arg(sub):
    sub.add_argument("spec_pos", nargs="?", metavar="SPEC", help="spec file")
    sub.add_argument("--spec", help="spec file (alternative to the positional argument)")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="geomeasure", description="Hausdorff measures of piecewise-C1 sets.")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more diagnostics on stderr")
    sp = p.add_subparsers(dest="command", required=True)

    def common(sub):
        sub.add_argument("--out", help="write the report to this file instead of stdout")
        sub.add_argument("-v", "--verbose", action="count", default=0, help=argparse.SUPPRESS)

    m = sp.add_parser("measure", help="H^e of a scene")
    _scene_arg(m)
    m.add_argument("--method", choices=("area", "crofton"), default="area")
    m.add_argument("--e", type=int, required=True, help="measure dimension")
    m.add_argument("--samples", type=int, help="crofton: number of planes")
    m.add_argument("--seed", type=int, help="crofton: RNG seed")
    m.add_argument("--window", type=float, help="crofton: window radius (default circumradius)")
    m.add_argument("--threads", type=int, help="crofton: worker threads")
    m.add_argument("--no-partition", action="store_true", help="area: skip the rectifiable partition")
    m.add_argument("--eps", type=float, help="area: flatness for the partition")
    common(m)

    q = sp.add_parser("partition", help="basic rectifiable partition of a scene")
    _scene_arg(q)
    q.add_argument("--e", type=int, help="dimension (default: largest patch dimension)")
    q.add_argument("--eps", type=float, help="flatness (default epsilon_n)")
    common(q)

    c = sp.add_parser("crofton", help="alias of measure --method crofton")
    _scene_arg(c)
    c.add_argument("--e", type=int, required=True)
    c.add_argument("--samples", type=int, default=200_000)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--window", type=float)
    c.add_argument("--threads", type=int)
    common(c)

    for name, helptext in (("coarea-check", "co-area identity"), ("cov-check", "change of variables"),
                           ("fubini-check", "Fubini identity")):
        s = sp.add_parser(name, help=helptext)
        _spec_arg(s)
        if name == "coarea-check":
            s.add_argument("--grid", type=int, help="y panels (overrides the spec)")
        common(s)

    w = sp.add_parser("whitney", help="Whitney arc verification on a cell")
    w.add_argument("--cell", required=True, help="cell file")
    w.add_argument("--trials", type=int, default=1000)
    w.add_argument("--seed", type=int, default=0)
    w.add_argument("--K", type=float, dest="K_bound", help="bound to verify (default K(n, L) of the cell)")
    common(w)

    t = sp.add_parser("selftest", help="run the acceptance suite")
    t.add_argument("--criteria", help="comma-separated criterion numbers (default all)")
    common(t)
    return p


# --------------------------------------------------------------------------- helpers


def _path(args, name: str) -> Path:
    pos = getattr(args, f"{name}_pos", None)
    opt = getattr(args, name, None)
    if pos and opt and pos != opt:
        raise UsageError(f"{name} given twice")
    value = opt or pos
    if not value:
        raise UsageError(f"missing {name} file")
    path = Path(value)
    if not path.is_file():
        raise UsageError(f"{name} file not found: {value}")
    return path


def _read_json(path: Path) -> dict:
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SceneSyntaxError(f"{path}: {exc.msg}", exc.lineno, exc.colno) from exc


def _check_e(scene, e: int):
    if e < 0 or e > scene.ambient_dim:
        raise UsageError(f"--e must lie in [0, {scene.ambient_dim}]")


# --------------------------------------------------------------------------- commands


def cmd_measure(args, method: str | None = None) -> dict:
    method = method or args.method
    if method == "area":
        for flag in ("samples", "seed", "window", "threads"):
            if getattr(args, flag, None) is not None:
                raise UsageError(f"--{flag} applies to the crofton method only")
    elif getattr(args, "no_partition", False) or getattr(args, "eps", None) is not None:
        raise UsageError("--no-partition/--eps apply to the area method only")
    s = load_scene(_path(args, "scene"))
    _check_e(s, args.e)
    if method == "area":
        from .measure import hausdorff_measure

        r = hausdorff_measure(s, args.e, partition=not args.no_partition, eps=args.eps)
    else:
        from .crofton import CroftonConfig, crofton_estimate

        for flag in ("samples", "threads"):
            v = getattr(args, flag)
            if v is not None and v < 1:
                raise UsageError(f"--{flag} must be positive")
        cfg = CroftonConfig(
            samples=args.samples if args.samples is not None else 200_000,
            seed=args.seed if args.seed is not None else 0,
            window_radius=args.window,
            threads=args.threads,
        )
        r = crofton_estimate(s, args.e, cfg)
    doc = r.to_doc()
    if r.flagged:
        raise NumericalFailure("result is flagged: numerical accuracy not reached", doc)
    return doc


def cmd_partition(args) -> dict:
    from .partition import partition_constants, partition_summary, rectifiable_partition

    s = load_scene(_path(args, "scene"))
    e = args.e if args.e is not None else max(p.e for p in s.patches)
    _check_e(s, e)
    if args.eps is not None and not 0 < args.eps <= 0.5:
        raise UsageError("--eps must lie in (0, 1/2]")
    part = rectifiable_partition(s, e, eps=args.eps)
    const = partition_constants(s.ambient_dim)
    summary = partition_summary(part)
    summary.update({"e": e, "eps": float(args.eps) if args.eps is not None else const.eps,
                    "epsilon_n": str(const.epsilon_n), "M_n": const.M_n})
    doc = {"scene": scene_to_doc(part), "summary": summary}
    if summary["flagged"]:
        raise NumericalFailure("some pieces could not be verified", doc)
    return doc


def cmd_coarea(args) -> dict:
    from .coarea import coarea_check, slice_spec_from_doc

    spec, grid = slice_spec_from_doc(_read_json(_path(args, "spec")))
    if args.grid is not None:
        grid = args.grid
    r = coarea_check(spec, grid)
    doc = r.to_doc()
    doc["pass"] = r.ok
    if not r.ok:
        raise NumericalFailure("co-area gap exceeds the numerical error budget", doc)
    return doc


def cmd_cov(args) -> dict:
    from .cells import cell_from_doc
    from .coarea import change_of_variables_check
    from .expr import VectorMap

    d = _read_json(_path(args, "spec"))
    A = cell_from_doc(d["region"], "region")
    f = VectorMap.parse(d["map"], A.ambient_dim)
    g = VectorMap.parse([d["g"]], f.codomain_dim)
    image = cell_from_doc(d["image"], "image") if "image" in d else None
    kinks = tuple((int(a), float(t)) for a, t in d.get("kinks", ()))
    ikinks = tuple((int(a), float(t)) for a, t in d.get("image_kinks", ()))
    r = change_of_variables_check(f, g, A, image, kinks, ikinks, seed=int(d.get("seed", 0)))
    doc = r.to_doc()
    doc["pass"] = r.gap <= max(1e-6, 3 * r.error)
    if not doc["pass"]:
        raise NumericalFailure("change-of-variables gap exceeds the error budget", doc)
    return doc


def cmd_fubini(args) -> dict:
    from .coarea import fubini_check
    from .expr import VectorMap

    d = _read_json(_path(args, "spec"))
    n, m = int(d["n"]), int(d["m"])
    f = VectorMap.parse([d["f"]], n + m)
    r = fubini_check(f, n, m)
    doc = {"joint": r.lhs, "iterated": r.rhs, "gap": r.gap, "error": r.error}
    doc["pass"] = r.gap <= max(1e-6, 3 * r.error)
    if not doc["pass"]:
        raise NumericalFailure("Fubini gap exceeds the error budget", doc)
    return doc


def cmd_whitney(args) -> dict:
    from .cells import cell_from_doc
    from .whitney import whitney_verify

    path = Path(args.cell)
    if not path.is_file():
        raise UsageError(f"cell file not found: {args.cell}")
    d = _read_json(path)
    c = cell_from_doc(d.get("cell", d), "cell")
    if args.trials < 1:
        raise UsageError("--trials must be positive")
    r = whitney_verify(c, args.K_bound, args.trials, np.random.default_rng(args.seed))
    if not r["pass"]:
        raise NumericalFailure("Whitney bound violated", r)
    return r


def cmd_selftest(args) -> dict:
    from .acceptance import format_result, run_acceptance

    selected = [int(k) for k in args.criteria.split(",")] if args.criteria else None
    results = []
    for r in run_acceptance(selected):
        print(format_result(r), file=sys.stderr, flush=True)
        results.append(r)
    doc = {"criteria": [r.to_doc() for r in results], "pass": all(r.passed for r in results)}
    if not doc["pass"]:
        raise NumericalFailure("acceptance criteria failed", doc)
    return doc


COMMANDS = {
    "measure": cmd_measure,
    "partition": cmd_partition,
    "crofton": lambda a: cmd_measure(a, "crofton"),
    "coarea-check": cmd_coarea,
    "cov-check": cmd_cov,
    "fubini-check": cmd_fubini,
    "whitney": cmd_whitney,
    "selftest": cmd_selftest,
}


def _emit(doc: dict, out: str | None) -> None:
    text = serialize_report(doc)
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)
        sys.stdout.flush()


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s: %(message)s", stream=sys.stderr)
    from .cells import CellError
    from .expr import DomainError, ExprSyntaxError
    from .patches import PatchError

    try:
        doc = COMMANDS[args.command](args)
    except NumericalFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        if exc.doc is not None:
            _emit(exc.doc, getattr(args, "out", None))
        return EXIT_NUMERIC
    except (UsageError, SceneSyntaxError, ExprSyntaxError, CellError, PatchError, DomainError, KeyError, TypeError) as exc:
        where = ""
        if isinstance(exc, SceneSyntaxError) and exc.line and "line" not in str(exc):
            where = f" (line {exc.line}, column {exc.column})"
        print(f"error: {exc}{where}", file=sys.stderr)
        return EXIT_INVALID
    except (ValueError, ArithmeticError, RuntimeError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    _emit(doc, getattr(args, "out", None))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
