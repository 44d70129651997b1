"""The acceptance suite: nine end-to-end criteria with their tolerances.

Each criterion returns a :class:`CriterionResult`; ``run_acceptance`` runs a
selection and ``format_result`` renders the one-line summary used by the
``selftest`` command and the test suite.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import special_ortho_group

from .cells import BandExt, Interval, cell_from_doc, unit_samples
from .coarea import change_of_variables_check, coarea_check, fubini_check, slice_spec_from_doc
from .crofton import CroftonConfig, crofton_estimate
from .expr import Const, Var, VectorMap, parse_expr
from .io import builtin_path, load_builtin
from .linalg import beta_constant, sphere_volume
from .measure import embed_scene, hausdorff_measure, transform_scene
from .partition import band_volume, partition_constants, rectifiable_partition
from .whitney import whitney_verify

__all__ = ["CriterionResult", "CRITERIA", "run_acceptance", "run_criterion", "format_result", "random_cov_cases", "random_fubini_cases"]

PARABOLA_LENGTH = (2 * math.sqrt(5) + math.asinh(2)) / 4
ORACLES = {
    "segment": (1, 1.0),
    "circle": (1, 2 * math.pi),
    "sphere_cap": (2, 0.4 * math.pi),
    "parabola": (1, PARABOLA_LENGTH),
    "helix": (1, 2 * math.pi * math.sqrt(1.04)),
}
TEST_SCENES = ("segment", "circle", "sphere_cap", "parabola", "helix", "double")
WHITNEY_CELLS = ("interval", "square", "roof", "graph3", "band3")


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    seconds: float = 0.0
    details: dict = field(default_factory=dict)

    def to_doc(self) -> dict:
        return {"criterion": self.number, "title": self.title, "pass": self.passed,
                "seconds": round(self.seconds, 3), "details": self.details}


def format_result(r: CriterionResult) -> str:
    return f"criterion {r.number}: {'PASS' if r.passed else 'FAIL'}  {r.title}  ({r.seconds:.1f} s)"


def _scene_e(s) -> int:
    return max(p.e for p in s.patches)


# --------------------------------------------------------------------------- 1


def criterion_1() -> CriterionResult:
    checks = {
        "beta(2,1)": (beta_constant(2, 1), 2 / math.pi),
        "beta(3,1)": (beta_constant(3, 1), 0.5),
        "beta(3,2)": (beta_constant(3, 2), 0.5),
    }
    for n in range(1, 9):
        checks[f"beta({n},{n})"] = (beta_constant(n, n), 1.0)
        checks[f"beta({n},0)"] = (beta_constant(n, 0), 1.0)
        for e in range(n + 1):
            checks[f"sym({n},{e})"] = (beta_constant(n, e), beta_constant(n, n - e))
    worst = max(abs(a - b) for a, b in checks.values())
    return CriterionResult(1, "beta table", worst <= 1e-12, details={"checks": len(checks), "max_error": worst})


# --------------------------------------------------------------------------- 2


def criterion_2(samples: int = 200_000, seed: int = 7) -> CriterionResult:
    rows = {}
    ok = True
    for name, (e, exact) in ORACLES.items():
        s = load_builtin(name)
        area = hausdorff_measure(s, e)
        t0 = time.perf_counter()
        cr = crofton_estimate(s, e, CroftonConfig(samples=samples, seed=seed))
        secs = time.perf_counter() - t0
        agree = abs(cr.value - area.value) <= 3 * cr.stderr + 1e-3
        oracle = abs(area.value - exact) <= 1e-6
        fast = secs < 60
        rows[name] = {"area": area.value, "oracle": exact, "crofton": cr.value, "stderr": cr.stderr,
                      "z": (cr.value - area.value) / cr.stderr if cr.stderr else 0.0,
                      "crofton_seconds": round(secs, 2), "pass": bool(agree and oracle and fast)}
        ok &= agree and oracle and fast
    return CriterionResult(2, "cross-method agreement", bool(ok), details=rows)


# --------------------------------------------------------------------------- 3


def criterion_3(samples: int = 200_000, seed: int = 7) -> CriterionResult:
    s = load_builtin("double")
    exact = 1 + math.sqrt(1 + 1e-6)
    plain = hausdorff_measure(s, 1, partition=False)
    parted = hausdorff_measure(s, 1, partition=True)
    cr = crofton_estimate(s, 1, CroftonConfig(samples=samples, seed=seed))
    checks = {
        "area": abs(plain.value - exact) <= 1e-6,
        "partitioned_area": abs(parted.value - exact) <= 1e-6,
        "crofton": abs(cr.value - exact) <= 3 * cr.stderr + 1e-3,
        "not_one": min(abs(plain.value - 1), abs(parted.value - 1), abs(cr.value - 1)) > 0.5,
    }
    details = {"exact": exact, "area": plain.value, "partitioned_area": parted.value,
               "crofton": cr.value, "stderr": cr.stderr, "checks": checks}
    return CriterionResult(3, "additivity of overlapping graphs", all(checks.values()), details=details)


# --------------------------------------------------------------------------- 4


def _builtin_doc(name: str) -> dict:
    import json

    return json.loads(builtin_path(name).read_text())


def criterion_4() -> CriterionResult:
    out = {}
    spec, grid = slice_spec_from_doc(_builtin_doc("coarea_linear.json"))
    lin = coarea_check(spec, grid)
    out["linear"] = {"lhs": lin.lhs, "rhs": lin.rhs, "gap": lin.gap, "pass": lin.gap <= 1e-9}
    spec, grid = slice_spec_from_doc(_builtin_doc("coarea_annulus.json"))
    ann = coarea_check(spec, grid)
    target = math.pi / 8
    out["annulus"] = {"lhs": ann.lhs, "rhs": ann.rhs, "gap": ann.gap, "error": ann.error,
                      "pass": abs(ann.lhs - target) <= 1e-4 and abs(ann.rhs - target) <= 1e-4}
    spec, grid = slice_spec_from_doc(_builtin_doc("coarea_degree.json"))
    deg = coarea_check(spec, grid)
    out["degree"] = {"lhs": deg.lhs, "rhs": deg.rhs, "gap": deg.gap,
                     "pass": deg.gap <= 1e-6 and abs(deg.lhs - 1.0) <= 1e-6}
    return CriterionResult(4, "co-area", all(v["pass"] for v in out.values()), details=out)


# --------------------------------------------------------------------------- 5


def _num(v: float) -> Const:
    return Const(float(v))


def random_cov_cases(count: int = 20, seed: int = 5):
    """Smooth injective maps (monotone triangular) with their image cells, and smooth integrands.

    Yields (f, g, A, image, image_kinks) tuples; even cases are planar, odd ones 1-D.
    """
    rng = np.random.default_rng(seed)
    x, y = Var(0), Var(1)
    for i in range(count):
        if i % 2:
            a0 = rng.uniform(0.0, 0.5)
            b0 = a0 + rng.uniform(0.5, 1.0)
            al, ka, de = rng.uniform(1, 2), rng.uniform(0, 0.5), rng.uniform(0, 0.5)
            fx = _num(al) * x + _num(ka) * x**3 + _num(de) * Call1("sin", x)
            f = VectorMap((fx,), 1)
            lo, hi = float(f([a0])[0]), float(f([b0])[0])
            lam = rng.uniform(0.5, 2)
            g = VectorMap((Call1("cos", _num(lam) * x) + x**2,), 1)
            yield f, g, Interval(a0, b0), Interval(lo, hi), ()
            continue
        a0 = rng.uniform(0.0, 0.5)
        b0 = a0 + rng.uniform(0.5, 1.0)
        c0, c1 = rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2)
        d0, d1 = rng.uniform(0.5, 1.0), rng.uniform(0.0, 0.5)
        gA = _num(c0) + _num(c1) * Call1("sin", x)
        hA = gA + _num(d0) + _num(d1) * x**2
        A = BandExt(Interval(a0, b0), VectorMap((gA,), 1), VectorMap((hA,), 1))
        al, be = rng.uniform(0.5, 2), rng.uniform(-0.5, 0.5)
        ga, ka = rng.uniform(0.5, 2), rng.uniform(0, 0.5)
        d2, d3 = rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5)
        phi = _num(ga) * y + _num(ka) * y**3 + _num(d2) * Call1("sin", x) + _num(d3) * x**2
        f = VectorMap((_num(al) * x + _num(be), phi), 2)
        xu = (x - _num(be)) / _num(al)
        low = phi.substitute({0: xu, 1: gA.substitute({0: xu})})
        high = phi.substitute({0: xu, 1: hA.substitute({0: xu})})
        image = BandExt(Interval(al * a0 + be, al * b0 + be), VectorMap((low,), 1), VectorMap((high,), 1))
        l1, l2, l3 = rng.uniform(-1, 1), rng.uniform(0.5, 2), rng.uniform(-1, 1)
        g = VectorMap((Call1("exp", _num(l1) * x) * Call1("cos", _num(l2) * y) + _num(l3) * x * y,), 2)
        yield f, g, A, image, ()


def Call1(name: str, arg):
    from .expr import Call

    return Call(name, (arg,))


def random_fubini_cases(count: int = 20, seed: int = 6):
    """Smooth scalar functions on unit cubes of dimension 2 or 3, with the split (n, m)."""
    rng = np.random.default_rng(seed)
    splits = [(1, 1), (1, 2), (2, 1)]
    for i in range(count):
        n, m = splits[i % 3]
        d = n + m
        a = [float(v) for v in rng.uniform(-1, 1, d)]
        b = [float(v) for v in rng.uniform(0.5, 3, d)]
        c = float(rng.uniform(-1, 1))
        lin_a = " + ".join(f"{a[j]!r}*x{j + 1}" for j in range(d))
        lin_b = " + ".join(f"{b[j]!r}*x{j + 1}" for j in range(d))
        poly = " * ".join(f"(1 + x{j + 1}^{j + 1})" for j in range(d))
        text = f"exp({lin_a}) * cos({lin_b}) + {c!r} * {poly}"
        yield VectorMap((parse_expr(text),), d), n, m, text


def criterion_5() -> CriterionResult:
    cov = []
    for f, g, A, image, ik in random_cov_cases():
        r = change_of_variables_check(f, g, A, image, image_kinks=ik)
        cov.append({"gap": r.gap, "error": r.error, "pass": r.gap <= max(1e-6, 3 * r.error)})
    fub = []
    for f, n, m, text in random_fubini_cases():
        r = fubini_check(f, n, m)
        fub.append({"f": text, "n": n, "m": m, "gap": r.gap, "error": r.error,
                    "pass": r.gap <= max(1e-6, 3 * r.error)})
    ok = all(c["pass"] for c in cov) and all(c["pass"] for c in fub)
    details = {"cov_cases": len(cov), "cov_max_gap": max(c["gap"] for c in cov),
               "fubini_cases": len(fub), "fubini_max_gap": max(c["gap"] for c in fub),
               "failures": [c for c in cov + fub if not c["pass"]]}
    return CriterionResult(5, "change of variables and Fubini", ok, details=details)


# --------------------------------------------------------------------------- 6


def criterion_6() -> CriterionResult:
    s = load_builtin("circle")
    const = partition_constants(2)
    part = rectifiable_partition(s, 1, eps=const.eps)
    M = float(const.M_n)
    worst = 0.0
    for p in part.patches:
        Df = p.graph_derivative_unit(unit_samples(p.e, 65))
        worst = max(worst, float(np.max(np.linalg.norm(Df, axis=(1, 2)))))
    total = hausdorff_measure(part, 1, partition=False).value
    invariant = {}
    for n in range(1, 7):
        c = partition_constants(n)
        lhs = 2 * n * band_volume(n, c.eps)
        invariant[n] = {"epsilon": str(c.epsilon_n), "M": c.M_n, "lhs": lhs, "sphere": sphere_volume(n - 1),
                        "pass": lhs < sphere_volume(n - 1)}
    checks = {
        "pieces": len(part.patches) >= 17,
        "derivative_bound": worst <= M,
        "measure": abs(total - 2 * math.pi) <= 0.01 * 2 * math.pi,
        "constants": all(v["pass"] for v in invariant.values()),
    }
    details = {"pieces": len(part.patches), "max_Df": worst, "M_2": const.M_n, "measure": total,
               "constants": invariant, "checks": checks}
    return CriterionResult(6, "partition soundness", all(checks.values()), details=details)


# --------------------------------------------------------------------------- 7


def criterion_7(trials: int = 1000, seed: int = 11) -> CriterionResult:
    import json

    rows = {}
    t0 = time.perf_counter()
    for i, name in enumerate(WHITNEY_CELLS):
        c = cell_from_doc(json.loads(builtin_path(f"cell_{name}.json").read_text()))
        r = whitney_verify(c, trials=trials, rng=np.random.default_rng([seed, i]))
        rows[name] = r
    secs = time.perf_counter() - t0
    ok = all(r["pass"] for r in rows.values()) and secs < 30
    rows["seconds"] = round(secs, 2)
    return CriterionResult(7, "Whitney arcs", bool(ok), details=rows)


# --------------------------------------------------------------------------- 8


def criterion_8(samples: int = 50_000, seed: int = 13) -> CriterionResult:
    rows = {}
    ok = True
    for i, name in enumerate(TEST_SCENES):
        s = load_builtin(name)
        e = _scene_e(s)
        n = s.ambient_dim
        base = hausdorff_measure(s, e, partition=False).value
        Q = special_ortho_group.rvs(n, random_state=100 + i)
        off = np.linspace(0.3, -0.7, n)
        transforms = {"isometry": (Q, off, 1.0), "scale_0.5": (None, None, 0.5), "scale_3": (None, None, 3.0)}
        row = {"area": base}
        for tname, (R, b, r) in transforms.items():
            t = transform_scene(s, R, b, r)
            expect = base * r**e
            area_t = hausdorff_measure(t, e, partition=False).value
            cr = crofton_estimate(t, e, CroftonConfig(samples=samples, seed=seed))
            a_ok = abs(area_t - expect) <= 1e-6
            c_ok = abs(cr.value - expect) <= 3 * cr.stderr
            row[tname] = {"area": area_t, "crofton": cr.value, "stderr": cr.stderr, "expected": expect,
                          "pass": bool(a_ok and c_ok)}
            ok &= a_ok and c_ok
        emb = hausdorff_measure(embed_scene(s), e, partition=False).value
        row["embedded"] = {"area": emb, "pass": abs(emb - base) <= 1e-9}
        ok &= abs(emb - base) <= 1e-9
        rows[name] = row
    pts = load_builtin("points")
    h0 = hausdorff_measure(pts, 0).value
    rows["points"] = {"H0": h0, "cardinality": len(pts.patches), "pass": h0 == len(pts.patches)}
    ok &= h0 == len(pts.patches)
    return CriterionResult(8, "invariance", bool(ok), details=rows)


# --------------------------------------------------------------------------- 9


def criterion_9() -> CriterionResult:
    import os
    import tempfile

    from .cli import main

    runs = {
        "crofton": ["measure", "--method", "crofton", "--e", "1", "--samples", "20000", "--seed", "7",
                    "--threads", "2", str(builtin_path("circle.scene.json"))],
        "crofton_3d": ["measure", "--method", "crofton", "--e", "1", "--samples", "10000", "--seed", "3",
                       str(builtin_path("helix.scene.json"))],
        "whitney": ["whitney", "--cell", str(builtin_path("cell_roof.json")), "--trials", "200", "--seed", "4"],
    }
    rows = {}
    with tempfile.TemporaryDirectory() as tmp:
        for name, argv in runs.items():
            outs = []
            for k in range(2):
                path = os.path.join(tmp, f"{name}_{k}.json")
                code = main(argv + ["--out", path])
                with open(path, "rb") as fh:
                    outs.append((code, fh.read()))
            rows[name] = {"exit": [o[0] for o in outs], "identical": outs[0][1] == outs[1][1]}
    ok = all(r["identical"] and r["exit"] == [0, 0] for r in rows.values())
    return CriterionResult(9, "determinism", ok, details=rows)


CRITERIA = {
    1: criterion_1,
    2: criterion_2,
    3: criterion_3,
    4: criterion_4,
    5: criterion_5,
    6: criterion_6,
    7: criterion_7,
    8: criterion_8,
    9: criterion_9,
}


def run_criterion(number: int) -> CriterionResult:
    t0 = time.perf_counter()
    try:
        r = CRITERIA[number]()
    except Exception as exc:  # a crash is a failure of the criterion, reported rather than raised
        r = CriterionResult(number, CRITERIA[number].__name__, False, details={"error": repr(exc)})
    r.seconds = time.perf_counter() - t0
    return r


def run_acceptance(selected=None) -> list[CriterionResult]:
    numbers = sorted(CRITERIA) if not selected else sorted(set(int(k) for k in selected))
    return [run_criterion(k) for k in numbers]
