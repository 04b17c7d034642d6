"""Robust discontinuity indicators on surface meshes.

Build the sparse overshoot-undershoot operator of a mesh once with
:func:`assemble`, then call :func:`detect` for any number of nodal
functions on that mesh.
"""
from .indicator import DetectConfig, IndicatorResult, detect, jump_function, node_beta, element_threshold
from .mesh import (
    BOUNDARY,
    FeatureEdgeSet,
    Mesh,
    MeshError,
    cell_center,
    detect_features,
    element_area,
    k_ring,
    load_mesh,
    virtual_split,
    write_off,
)
from .osus import OperatorError, OsusOperator, apply, assemble, load, save
from .wls import length_scales, local_frame, vandermonde, radial_weights, walf_eval, wls_fit

__all__ = [
    "BOUNDARY", "DetectConfig", "FeatureEdgeSet", "IndicatorResult", "Mesh", "MeshError",
    "OperatorError", "OsusOperator", "apply", "assemble", "cell_center", "detect",
    "detect_features", "element_area", "element_threshold", "jump_function", "k_ring",
    "length_scales", "load", "load_mesh", "local_frame", "node_beta", "radial_weights",
    "save", "vandermonde", "virtual_split", "walf_eval", "wls_fit", "write_off",
]
