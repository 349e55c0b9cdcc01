"""Problem specifications: JSON loading, shipped problems and parameter sampling."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .. import expr as ex
from .. import geometry as geo

KINDS = ("poisson", "darcy", "ns")


class SpecError(ValueError):
    """Invalid problem-spec file; the message carries the offending line when known."""


@dataclass(frozen=True)
class ProblemSpec:
    """A PDE problem on a domain, with defaults for grid and training."""

    kind: str
    domain: geo.DomainSpec
    components: tuple
    params: dict = field(default_factory=dict)
    reference: dict = field(default_factory=dict)
    coefficients: dict = field(default_factory=dict)
    grid: tuple = (101, 101)
    training: dict = field(default_factory=dict)
    structure_options: dict = field(default_factory=dict)
    sampling: dict = field(default_factory=dict)
    reference_csv: str | None = None
    name: str = ""
    diagnostics: dict = field(default_factory=dict)

    @property
    def nu(self) -> float:
        return float(self.params.get("nu", 0.0))

    def with_params(self, **params) -> "ProblemSpec":
        p = dict(self.params)
        p.update(params)
        return replace(self, params=p)

    @property
    def expr_params(self) -> dict:
        """Parameters that may appear inside expressions."""
        return {k: float(v) for k, v in self.params.items() if k in ex.VARIABLES}

    def reference_fields(self, x, y) -> dict | None:
        """Analytic reference values at points, or ``None``."""
        if not self.reference:
            return None
        env = dict(self.expr_params, x=np.asarray(x, dtype=float), y=np.asarray(y, dtype=float))
        return {k: np.broadcast_to(np.asarray(ex.evaluate(e, env), dtype=float), np.shape(x)).copy()
                for k, e in self.reference.items()}

    def coefficient(self, name: str, x, y) -> np.ndarray:
        env = dict(self.expr_params, x=np.asarray(x, dtype=float), y=np.asarray(y, dtype=float))
        return np.broadcast_to(np.asarray(ex.evaluate(self.coefficients[name], env), dtype=float),
                               np.shape(x)).copy()


# ---------------------------------------------------------------------------
# JSON loading


def _line_of(text: str, needle: str) -> int | None:
    m = re.search(re.escape(needle), text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def _where(text: str, needle: str | None) -> str:
    if text and needle:
        line = _line_of(text, needle)
        if line:
            return f" (line {line})"
    return ""


def _parse_expr(value, what: str, text: str, needle: str | None):
    try:
        return ex.as_expr(value)
    except ex.ExprError as err:
        raise SpecError(f"{what}: {err}{_where(text, needle)}") from None


def _row(d: dict, n: int, where: str, text: str, needle: str) -> geo.BCRow:
    kind = d.get("kind")
    basis = d.get("basis", [1.0] if n == 1 else None)
    if basis is None:
        raise SpecError(f"{where}: row needs a basis vector{_where(text, needle)}")
    g = _parse_expr(d.get("g", "0"), f"{where} g", text, needle)
    h = _parse_expr(d.get("h", "0"), f"{where} h", text, needle)
    c = d.get("c", ["0"] * len(basis))
    if not isinstance(c, list):
        c = [c]
    c = tuple(_parse_expr(v, f"{where} c", text, needle) for v in c)
    try:
        return geo.BCRow(kind, tuple(basis), g=g, c=c, h=h)
    except geo.GeometryError as err:
        raise SpecError(f"{where}: {err}{_where(text, needle)}") from None


def domain_from_dict(d: dict, text: str = "") -> geo.DomainSpec:
    segs = []
    names = []
    n = None
    for k, s in enumerate(d.get("segments", [])):
        name = str(s.get("name", k + 1))
        needle = f'"name": "{name}"'
        where = f"segment {name}"
        try:
            g = geo.geom_from_dict(s["geom"])
        except (KeyError, TypeError, geo.GeometryError) as err:
            raise SpecError(f"{where}: bad geometry {err}{_where(text, needle)}") from None
        rows = s.get("rows")
        if rows is None:
            raise SpecError(f"{where}: missing 'rows'{_where(text, needle)}")
        n = n or len(rows)
        try:
            segs.append(geo.SegmentSpec(g, tuple(_row(r, n, where, text, needle) for r in rows), name,
                                        bool(s.get("vanishing_gradient", False))))
        except geo.GeometryError as err:
            raise SpecError(f"{where}: {err}{_where(text, needle)}") from None
        names.append(name)
    if not segs:
        raise SpecError("domain has no segments")
    inters = []
    for k, P in enumerate(d.get("intersections", [])):
        pname = str(P.get("name", f"P{k}"))
        idx = []
        for s in P.get("segments", []):
            if isinstance(s, str):
                if s not in names:
                    at = _where(text, '"' + pname + '"')
                    raise SpecError(f"intersection {pname}: unknown segment {s!r}{at}")
                idx.append(names.index(s))
            else:
                idx.append(int(s))
        inters.append(geo.IntersectionPoint(geo.Point2.of(P["point"]), tuple(idx), pname))
    try:
        return geo.DomainSpec(tuple(d["box"]), tuple(segs), tuple(inters), d.get("name", ""))
    except (KeyError, geo.GeometryError) as err:
        raise SpecError(f"domain: {err}") from None


def problem_from_dict(d: dict, text: str = "", name: str = "") -> ProblemSpec:
    kind = d.get("problem")
    if kind not in KINDS:
        at = _where(text, '"problem"')
        raise SpecError(f"'problem' must be one of {KINDS}, got {kind!r}{at}")
    dom = domain_from_dict(d.get("domain", {}), text)
    comps = tuple(d.get("components", ["u"]))
    if len(comps) != dom.n_components:
        raise SpecError(f"{len(comps)} component names for {dom.n_components}-component boundary rows")
    ref = {k: _parse_expr(v, f"reference {k}", text, f'"{k}"') for k, v in d.get("reference", {}).items()}
    coef = {k: _parse_expr(v, f"coefficient {k}", text, f'"{k}"') for k, v in d.get("coefficients", {}).items()}
    train = dict(d.get("training", {}))
    grid = tuple(int(v) for v in train.pop("grid", (101, 101)))
    ref_csv = d.get("reference_csv")
    return ProblemSpec(kind, dom, comps, dict(d.get("parameters", {})), ref, coef, grid, train,
                       dict(d.get("structure", {})), dict(d.get("sampling", {})), ref_csv, name or d.get("name", kind),
                       dict(d.get("diagnostics", {})))


def load_problem(path_or_name) -> ProblemSpec:
    """Load a problem from a JSON file, or a shipped problem by name."""
    p = Path(str(path_or_name))
    if p.suffix != ".json" and not p.exists():
        if str(path_or_name) not in KINDS:
            raise SpecError(f"no such problem file or shipped problem: {path_or_name}")
        text = resources.files("hardbc.data").joinpath(f"{path_or_name}.json").read_text()
        base = None
    else:
        text = p.read_text()
        base = p.parent
    try:
        d = json.loads(text)
    except json.JSONDecodeError as err:
        raise SpecError(f"invalid JSON at line {err.lineno}, column {err.colno}: {err.msg}") from None
    spec = problem_from_dict(d, text)
    if spec.reference_csv and base is not None and not Path(spec.reference_csv).is_absolute():
        spec = replace(spec, reference_csv=str(base / spec.reference_csv))
    elif spec.reference_csv and base is None:
        spec = replace(spec, reference_csv=str(resources.files("hardbc.data").joinpath(spec.reference_csv)))
    return spec


def poisson() -> ProblemSpec:
    return load_problem("poisson")


def darcy(alpha: float = 2.0, beta: float = 3.0) -> ProblemSpec:
    return load_problem("darcy").with_params(alpha=alpha, beta=beta)


def navier_stokes() -> ProblemSpec:
    return load_problem("ns")


# ---------------------------------------------------------------------------
# sampling


def sample_parameters(n: int, seed: int = 0, low: float = 1.0, high: float = 4.0) -> list:
    """``n`` pairs ``(alpha, beta)`` drawn uniformly from ``[low, high)^2``."""
    if n < 1:
        raise ValueError("need at least one parameter pair")
    rng = np.random.default_rng(seed)
    pairs = rng.uniform(low, high, size=(n, 2))
    return [(float(a), float(b)) for a, b in pairs]
