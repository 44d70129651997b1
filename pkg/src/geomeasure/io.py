"""Scene and report documents (JSON)."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, is_dataclass
from pathlib import Path

import numpy as np

from .cells import CellDomain, cell_from_doc
from .expr import ExprSyntaxError, VectorMap, parse_expr
from .patches import ChartPatch, Frame, GraphPatch, ParametricPatch, Patch, Scene

__all__ = [
    "SceneSyntaxError",
    "parse_scene",
    "load_scene",
    "scene_to_doc",
    "serialize_scene",
    "serialize_report",
    "patch_from_doc",
    "patch_to_doc",
]


class SceneSyntaxError(ValueError):
    def __init__(self, message: str, line: int = 0, column: int = 0):
        super().__init__(f"{message} (line {line}, column {column})" if line else message)
        self.line = line
        self.column = column


def _require(doc: dict, key: str, where: str):
    if key not in doc:
        raise SceneSyntaxError(f"{where}: missing field {key!r}")
    return doc[key]


def _parse_map(texts, d: int, where: str) -> VectorMap:
    if not isinstance(texts, list):
        raise SceneSyntaxError(f"{where}: map must be a list of expression strings")
    comps = []
    for i, t in enumerate(texts):
        try:
            comps.append(parse_expr(t) if isinstance(t, str) else parse_expr(repr(float(t))))
        except ExprSyntaxError as exc:
            raise SceneSyntaxError(f"{where}.map[{i}]: {exc}", exc.line, exc.column) from None
    try:
        return VectorMap(tuple(comps), d)
    except ValueError as exc:
        raise SceneSyntaxError(f"{where}: {exc}") from None


def _frame_from_doc(doc) -> Frame:
    if not doc:
        return Frame()
    rot = doc.get("rotation")
    off = doc.get("offset")
    return Frame(float(doc.get("scale", 1.0)), None if rot is None else np.asarray(rot, dtype=float),
                 None if off is None else np.asarray(off, dtype=float))


def patch_from_doc(doc: dict, n: int, kinks=(), where: str = "patch") -> Patch:
    if not isinstance(doc, dict):
        raise SceneSyntaxError(f"{where}: patch must be an object")
    kind = _require(doc, "kind", where)
    flags = frozenset(doc.get("flags", ()))
    if "chart" in doc:
        ch = doc["chart"]
        source = patch_from_doc(_require(ch, "source", where + ".chart"), n, kinks, where + ".chart.source")
        return ChartPatch(source, np.asarray(ch["rotation"], dtype=float), np.asarray(ch["origin"], dtype=float),
                          doc.get("bound"), flags)
    e = int(_require(doc, "e", where))
    try:
        domain = cell_from_doc(_require(doc, "domain", where), where + ".domain")
    except ExprSyntaxError as exc:
        raise SceneSyntaxError(f"{where}.domain: {exc}", exc.line, exc.column) from None
    fmap = _parse_map(_require(doc, "map", where), e, where)
    frame = _frame_from_doc(doc.get("frame"))
    bound = doc.get("bound")
    bound = None if bound is None else float(bound)
    if kind == "graph":
        perm = doc.get("permutation") or list(range(1, n + 1))
        if sorted(perm) != list(range(1, n + 1)):
            raise SceneSyntaxError(f"{where}: permutation must be a permutation of 1..{n}")
        return GraphPatch(n, e, domain, fmap, tuple(p - 1 for p in perm), bound, frame, tuple(kinks), flags)
    if kind == "parametric":
        return ParametricPatch(n, e, domain, fmap, bool(doc.get("injective", True)), frame, tuple(kinks), flags)
    raise SceneSyntaxError(f"{where}: unknown patch kind {kind!r}")


def scene_from_doc(doc: dict, validate: bool = True, samples: int = 1000) -> Scene:
    if not isinstance(doc, dict):
        raise SceneSyntaxError("scene document must be an object")
    n = int(_require(doc, "ambient_dim", "scene"))
    pdocs = _require(doc, "patches", "scene")
    kinks: dict[int, list] = {}
    for k in doc.get("kinks", ()):
        kinks.setdefault(int(k["patch"]), []).append((int(k["axis"]), float(k["at"])))
    patches = []
    for i, pd in enumerate(pdocs):
        p = patch_from_doc(pd, n, kinks.get(i, ()), f"patches[{i}]")
        if validate:
            p.validate(samples)
        patches.append(p)
    box = doc.get("bounding_box")
    scene = Scene(n, tuple(patches), None if box is None else np.asarray(box, dtype=float),
                  bool(doc.get("partitioned", False)), bool(doc.get("overlapping", False)))
    if validate and box is not None:
        scene.check_box(samples)
    return scene


def parse_scene(text: str, validate: bool = True) -> Scene:
    """Parse and validate a scene document."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SceneSyntaxError(exc.msg, exc.lineno, exc.colno) from None
    return scene_from_doc(doc, validate)


def load_scene(path, validate: bool = True) -> Scene:
    return parse_scene(Path(path).read_text(), validate)


def _cell_doc(c: CellDomain) -> dict:
    return c.to_doc()


def patch_to_doc(p: Patch) -> dict:
    if isinstance(p, ChartPatch):
        doc = {
            "kind": "graph",
            "e": p.e,
            "chart": {"source": patch_to_doc(p.source), "rotation": p.rotation.tolist(), "origin": p.origin.tolist()},
        }
        if p.bound is not None:
            doc["bound"] = float(p.bound)
    elif isinstance(p, GraphPatch):
        doc = {
            "kind": "graph",
            "e": p.e,
            "permutation": [j + 1 for j in p.permutation],
            "domain": _cell_doc(p.cell),
            "map": p.map.texts(),
        }
        if p.bound is not None:
            doc["bound"] = float(p.bound)
    elif isinstance(p, ParametricPatch):
        doc = {"kind": "parametric", "e": p.e, "domain": _cell_doc(p.cell), "map": p.map.texts()}
        if not p.injective:
            doc["injective"] = False
    else:
        raise TypeError(f"cannot serialise {type(p).__name__}")
    if not isinstance(p, ChartPatch):
        frame = p.frame.to_doc()
        if frame:
            doc["frame"] = frame
    if p.flags:
        doc["flags"] = sorted(p.flags)
    return doc


def scene_to_doc(s: Scene, include_box: bool = False) -> dict:
    doc: dict = {"ambient_dim": s.ambient_dim, "patches": [patch_to_doc(p) for p in s.patches]}
    kinks = [
        {"patch": i, "axis": int(a), "at": float(t)}
        for i, p in enumerate(s.patches)
        if not isinstance(p, ChartPatch)
        for a, t in p.kinks
    ]
    if kinks:
        doc["kinks"] = kinks
    if s.partitioned:
        doc["partitioned"] = True
    if s.overlapping:
        doc["overlapping"] = True
    if include_box:
        doc["bounding_box"] = s.bounding_box.tolist()
    return doc


def _dumps(doc) -> str:
    return json.dumps(doc, sort_keys=True, indent=2, allow_nan=False) + "\n"


def serialize_scene(s: Scene, include_box: bool = False) -> str:
    """Canonical scene document (sorted keys, shortest round-trip floats)."""
    return _dumps(scene_to_doc(s, include_box))


def _plain(value):
    if is_dataclass(value):
        value = asdict(value)
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items() if v is not None}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, (np.floating, float)):
        v = float(value)
        return v if math.isfinite(v) else ("inf" if v > 0 else "nan" if v != v else "-inf")
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, np.bool_):
        return bool(value)
    return value


def serialize_report(report) -> str:
    """Canonical JSON for a report (a dataclass or a mapping)."""
    if hasattr(report, "to_doc"):
        report = report.to_doc()
    return _dumps(_plain(report))


def builtin_path(name: str) -> Path:
    """Path of a file shipped in the package ``scenes`` directory."""
    from importlib.resources import files

    return Path(str(files("geomeasure") / "scenes" / name))


def load_builtin(name: str, validate: bool = True) -> Scene:
    """One of the shipped scenes, by stem (``circle``) or file name."""
    fname = name if name.endswith(".json") else f"{name}.scene.json"
    return load_scene(builtin_path(fname), validate)
