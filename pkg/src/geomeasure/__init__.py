"""Hausdorff measures of piecewise-C1 sets by the area formula, Cauchy-Crofton sampling and co-area slicing."""

from __future__ import annotations

from .cells import BandExt, CellDomain, CellError, GraphExt, Interval, Point, cell_from_doc
from .coarea import SliceSpec, change_of_variables_check, coarea_check, fubini_check
from .crofton import UNSTABLE, CroftonConfig, NewtonConfig, crofton_estimate, intersect_count
from .expr import DomainError, Dual, ExprSyntaxError, VectorMap, parse_expr
from .io import load_builtin, load_scene, parse_scene, serialize_report, serialize_scene
from .linalg import AffinePlane, LinearSubspace, beta_constant, grassmann_distance, haar_sample_subspace
from .measure import MeasureError, MeasureReport, area_measure, embed_scene, hausdorff_measure, jacobian_Je, transform_scene
from .partition import eflat_refine, epsilon_n, graphify, partition_constants, rectifiable_partition
from .patches import ChartPatch, GraphPatch, ParametricPatch, Scene, cell_to_graph, tangent_space
from .whitney import connect_points, whitney_constants, whitney_verify

__version__ = "0.1.0"

__all__ = [
    "AffinePlane",
    "BandExt",
    "CellDomain",
    "CellError",
    "ChartPatch",
    "CroftonConfig",
    "DomainError",
    "Dual",
    "ExprSyntaxError",
    "GraphExt",
    "GraphPatch",
    "Interval",
    "LinearSubspace",
    "MeasureError",
    "MeasureReport",
    "NewtonConfig",
    "ParametricPatch",
    "Point",
    "Scene",
    "SliceSpec",
    "UNSTABLE",
    "VectorMap",
    "area_measure",
    "beta_constant",
    "cell_from_doc",
    "cell_to_graph",
    "change_of_variables_check",
    "coarea_check",
    "connect_points",
    "crofton_estimate",
    "eflat_refine",
    "embed_scene",
    "epsilon_n",
    "fubini_check",
    "graphify",
    "grassmann_distance",
    "haar_sample_subspace",
    "hausdorff_measure",
    "intersect_count",
    "jacobian_Je",
    "load_builtin",
    "load_scene",
    "parse_expr",
    "parse_scene",
    "partition_constants",
    "rectifiable_partition",
    "serialize_report",
    "serialize_scene",
    "tangent_space",
    "transform_scene",
    "whitney_constants",
    "whitney_verify",
]
