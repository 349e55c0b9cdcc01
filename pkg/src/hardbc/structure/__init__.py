"""Solution structures that satisfy boundary conditions by construction."""

from . import fields
from .core import (
    MODES,
    BCTerm,
    ConfigurationError,
    IllPosedBoundaryError,
    SlotRegistry,
    SolutionStructure,
)
from .fields import GridEvaluator, evaluate_points, transfinite_weights
from .scalar import (
    boundary_value_op,
    build_legacy_sukumar,
    build_scalar_glss,
    build_scalar_op,
    local_dirichlet,
    local_robin_glss,
    resolve_intersections_scalar,
)
from .system import (
    build_semi_weak,
    build_system_glss,
    build_system_op,
    build_weak,
    resolve_intersections_system,
)


def weights(dom, p, tol: float | None = None):
    """Transfinite weights ``w_i`` of all segments at a single point."""
    import numpy as np

    from .. import geometry as geo

    p = geo.Point2.of(p)
    tol = 1e-12 * dom.diagonal if tol is None else tol
    geoms = [s.geom for s in dom.segments]
    mus = [s.mu for s in dom.segments]
    prio = [s.n_dirichlet for s in dom.segments]
    return np.array([float(w[0]) for w in transfinite_weights(geoms, mus, np.array([p.x]), np.array([p.y]), tol, prio)])


def build(dom, mode: str = "glss", params: dict | None = None, component_names=None, **options) -> SolutionStructure:
    """Build the structure for ``mode`` (one of ``MODES``).

    Scalar domains use the scalar builders for ``glss``/``op``; systems use the
    system builders. Extra keyword options go to the selected builder.
    """
    if mode not in MODES:
        raise ConfigurationError(f"unknown mode {mode!r}; choose from {', '.join(MODES)}")
    scalar = dom.n_components == 1
    if mode == "legacy-sukumar":
        return build_legacy_sukumar(dom, params)
    if mode == "glss":
        if scalar:
            ss = build_scalar_glss(dom, params, **options)
        else:
            ss = build_system_glss(dom, params=params, component_names=component_names, **options)
    elif mode == "op":
        if scalar:
            options.pop("remainder_segments", None)
            ss = build_scalar_op(dom, params)
        else:
            ss = build_system_op(dom, params=params, component_names=component_names, **options)
    elif mode == "semi-weak":
        ss = build_semi_weak(dom, params=params, component_names=component_names)
    else:
        ss = build_weak(dom, params=params, component_names=component_names)
    if component_names and scalar:
        ss.component_names = list(component_names)
    return ss


__all__ = [
    "MODES", "BCTerm", "ConfigurationError", "IllPosedBoundaryError", "SlotRegistry", "SolutionStructure",
    "GridEvaluator", "evaluate_points", "transfinite_weights", "weights", "build", "fields",
    "boundary_value_op", "build_legacy_sukumar", "build_scalar_glss", "build_scalar_op", "local_dirichlet",
    "local_robin_glss", "resolve_intersections_scalar", "build_semi_weak", "build_system_glss",
    "build_system_op", "build_weak", "resolve_intersections_system",
]
