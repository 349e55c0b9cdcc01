"""Composable scalar fields and their evaluation on grids or point clouds.

A field is an immutable DAG. Leaves are constants, expressions in ``x, y``,
distance fields and named *slots* (the unknown functions a network supplies).
Inner nodes are sums, products, quotients, spatial gradients, composition with
the orthogonal projection onto a line, and transfinite blends.

Evaluation happens in a context that fixes the sample points and the array
backend. Sub-DAGs without slots are evaluated once in numpy and cached, so in a
training loop only the slot-dependent part is recomputed.
"""

from __future__ import annotations

import hashlib
import json
from typing import Callable, Mapping

import numpy as np

from .. import expr as ex
from .. import geometry as geo
from .._backend import as_numpy, is_torch, to_torch


class FieldError(ValueError):
    pass


class NonFiniteFieldError(FieldError):
    def __init__(self, message: str, node_index: int | None = None, path: str = ""):
        super().__init__(message)
        self.node_index = node_index
        self.path = path


# ---------------------------------------------------------------------------
# nodes


class Field:
    """Base node. Use :func:`add`, :func:`mul` and friends (or operators) to combine."""

    children: tuple = ()
    op = "field"

    def __init__(self):
        self.has_slots = any(c.has_slots for c in self.children)

    def _eval(self, ctx: "Context"):
        raise NotImplementedError

    def params(self) -> dict:
        return {}

    def label(self) -> str:
        p = self.params()
        inner = ", ".join(f"{k}={v}" for k, v in p.items())
        return f"{self.op}({inner})" if inner else self.op

    def slot_names(self) -> list[str]:
        seen: dict = {}
        for node in walk(self):
            if isinstance(node, Slot):
                seen.setdefault(node.name, None)
        return list(seen)

    def __add__(self, other):
        return add(self, as_field(other))

    def __radd__(self, other):
        return add(as_field(other), self)

    def __sub__(self, other):
        return sub(self, as_field(other))

    def __rsub__(self, other):
        return sub(as_field(other), self)

    def __mul__(self, other):
        return mul(self, as_field(other))

    def __rmul__(self, other):
        return mul(as_field(other), self)

    def __truediv__(self, other):
        return div(self, as_field(other))

    def __neg__(self):
        return neg(self)

    def __repr__(self) -> str:
        return self.label()


class Const(Field):
    op = "const"

    def __init__(self, value: float):
        self.value = float(value)
        super().__init__()

    def _eval(self, ctx):
        return np.full(ctx.size, self.value)

    def params(self):
        return {"value": self.value}


class ExprField(Field):
    """Expression in ``x`` and ``y`` (problem parameters already substituted)."""

    op = "expr"

    def __init__(self, e):
        e = ex.as_expr(e)
        extra = e.free_variables - {"x", "y"}
        if extra:
            raise FieldError(f"expression {e} has unbound parameters {sorted(extra)}")
        self.expr = e
        super().__init__()

    def _eval(self, ctx):
        v = ex.evaluate(self.expr, {"x": ctx.x, "y": ctx.y})
        return np.broadcast_to(np.asarray(v, dtype=float), (ctx.size,)).copy()

    def params(self):
        return {"expr": str(self.expr)}


class Phi(Field):
    """Distance to a segment, optionally raised to an integer power."""

    op = "phi"

    def __init__(self, geom: geo.SegmentGeom, power: int = 1, name: str = ""):
        self.geom = geom
        self.power = int(power)
        self.name = name
        super().__init__()

    def _eval(self, ctx):
        return self.geom.phi(ctx.x, ctx.y) ** self.power

    def params(self):
        return {"seg": self.name or self.geom.to_dict(), "power": self.power}


class PhiBar(Field):
    op = "phi_bar"

    def __init__(self, geom: geo.SegmentGeom, name: str = ""):
        self.geom = geom
        self.name = name
        super().__init__()

    def _eval(self, ctx):
        return np.asarray(self.geom.phi_bar(ctx.x, ctx.y), dtype=float)

    def params(self):
        return {"seg": self.name or self.geom.to_dict()}


class PhiBarGrad(Field):
    op = "phi_bar_grad"

    def __init__(self, geom: geo.SegmentGeom, axis: int, name: str = ""):
        self.geom = geom
        self.axis = axis
        self.name = name
        super().__init__()

    def _eval(self, ctx):
        return np.asarray(self.geom.phi_bar_grad(ctx.x, ctx.y)[self.axis], dtype=float)

    def params(self):
        return {"seg": self.name or self.geom.to_dict(), "axis": self.axis}


class PhiGrad(Field):
    """Analytic gradient of the plain distance (legacy structures only)."""

    op = "phi_grad"

    def __init__(self, geom: geo.SegmentGeom, axis: int, name: str = ""):
        self.geom = geom
        self.axis = axis
        self.name = name
        super().__init__()

    def _eval(self, ctx):
        return np.asarray(self.geom.phi_grad(ctx.x, ctx.y)[self.axis], dtype=float)

    def params(self):
        return {"seg": self.name or self.geom.to_dict(), "axis": self.axis}


class PhiPoint(Field):
    """Distance to a point, raised to ``power`` (2 gives a smooth field)."""

    op = "phi_point"

    def __init__(self, point: geo.Point2, name: str = "", power: int = 1):
        self.point = geo.Point2.of(point)
        self.name = name
        self.power = int(power)
        super().__init__()

    def _eval(self, ctx):
        d = geo.phi_point_field(self.point, ctx.x, ctx.y)
        return d if self.power == 1 else d**self.power

    def params(self):
        out = {"point": self.name or [self.point.x, self.point.y]}
        if self.power != 1:
            out["power"] = self.power
        return out


class Slot(Field):
    op = "slot"

    def __init__(self, name: str):
        self.name = name
        self.children = ()
        self.has_slots = True

    def _eval(self, ctx):
        return ctx.slot(self.name)

    def params(self):
        return {"name": self.name}


class Gradient(Field):
    """Spatial derivative of a field along ``axis`` (finite differences on grids)."""

    op = "grad"

    def __init__(self, field: Field, axis: int):
        self.children = (field,)
        self.axis = axis
        super().__init__()

    def _eval(self, ctx):
        return ctx.gradient(self.children[0], self.axis)

    def params(self):
        return {"axis": self.axis}


class Compose(Field):
    """``field`` evaluated at the orthogonal projection onto the line of ``geom``."""

    op = "compose"

    def __init__(self, field: Field, geom: geo.Line, name: str = ""):
        if not isinstance(geom, geo.Line):
            raise FieldError("composition with the normalizer needs a straight segment")
        self.children = (field,)
        self.geom = geom
        self.name = name
        super().__init__()

    def _eval(self, ctx):
        return ctx.composed(self.children[0], self.geom)

    def params(self):
        return {"seg": self.name or self.geom.to_dict()}


class Sum(Field):
    op = "sum"

    def __init__(self, terms):
        self.children = tuple(terms)
        super().__init__()

    def _eval(self, ctx):
        vals = [ctx.value(c) for c in self.children]
        out = vals[0]
        for v in vals[1:]:
            out = out + v
        return out


class Product(Field):
    op = "prod"

    def __init__(self, factors):
        self.children = tuple(factors)
        super().__init__()

    def _eval(self, ctx):
        vals = [ctx.value(c) for c in self.children]
        out = vals[0]
        for v in vals[1:]:
            out = out * v
        return out


class Quotient(Field):
    """Division by a slot-free field that must not vanish at any evaluation point."""

    op = "div"
    guard = "nonzero-denominator"

    def __init__(self, num: Field, den: Field):
        if den.has_slots:
            raise FieldError("denominators must not depend on slots")
        self.children = (num, den)
        super().__init__()

    def _eval(self, ctx):
        den = ctx.const(self.children[1])
        if np.any(as_numpy(den) == 0):
            raise FieldError(f"zero denominator in {self.children[1].label()}")
        return ctx.value(self.children[0]) / den

    def params(self):
        return {"guard": self.guard}


class Transfinite(Field):
    """Blend ``sum_i w_i term_i`` with inverse distance-product weights.

    ``w_i = prod_{j != i} phi_j^mu_j / sum_k prod_{j != k} phi_j^mu_j``. Where a
    point lies on segment ``i`` (``phi_i`` within ``tol`` of zero) the formula is
    bypassed with ``w_i = 1``. At points on several segments the one with the
    highest ``priority`` wins (ties go to the lower index).
    """

    op = "transfinite"

    def __init__(self, geoms, mus, terms, priority=None, names=None):
        self.geoms = tuple(geoms)
        self.mus = tuple(int(m) for m in mus)
        self.children = tuple(terms)
        if not (len(self.geoms) == len(self.mus) == len(self.children)) or not self.geoms:
            raise FieldError("transfinite blend needs one distance, exponent and term per segment")
        self.priority = tuple(priority) if priority is not None else (0,) * len(self.geoms)
        self.names = tuple(names) if names is not None else tuple("" for _ in self.geoms)
        super().__init__()

    def weights(self, x, y, tol: float) -> list[np.ndarray]:
        return transfinite_weights(self.geoms, self.mus, x, y, tol, self.priority)

    def _eval(self, ctx):
        W = ctx.weights(self)
        out = None
        for (wv, used), term in zip(W, self.children):
            if not used or (isinstance(term, Const) and term.value == 0.0):
                continue
            val = wv * ctx.value(term)
            out = val if out is None else out + val
        if out is None:
            return ctx.to_backend(np.zeros(ctx.size))
        return out

    def params(self):
        return {"segments": [n or g.to_dict() for n, g in zip(self.names, self.geoms)], "mu": list(self.mus),
                "priority": list(self.priority)}


def transfinite_weights(geoms, mus, x, y, tol: float, priority=None) -> list[np.ndarray]:
    """Weights of the transfinite blend with exact on-segment bypass."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    M = len(geoms)
    if priority is None:
        priority = (0,) * M
    d = np.stack([g.phi(x, y) for g in geoms])
    zero = d <= tol
    on_any = zero.any(axis=0)
    with np.errstate(divide="ignore"):
        inv = np.stack([np.where(zero[i], 0.0, 1.0 / np.where(zero[i], 1.0, d[i]) ** mus[i]) for i in range(M)])
    total = inv.sum(axis=0)
    W = np.where(on_any, 0.0, inv / np.where(on_any, 1.0, total))
    if np.any(on_any):
        # rank segments: higher priority first, then lower index
        order = sorted(range(M), key=lambda i: (-priority[i], i))
        chosen = np.full(x.shape, -1)
        for i in order:
            pick = zero[i] & (chosen < 0)
            chosen[pick] = i
        for i in range(M):
            W[i] = np.where(on_any, (chosen == i).astype(float), W[i])
    return [W[i] for i in range(M)]


# ---------------------------------------------------------------------------
# construction helpers with light simplification

ZERO = Const(0.0)
ONE = Const(1.0)


def as_field(value) -> Field:
    if isinstance(value, Field):
        return value
    if isinstance(value, (int, float)):
        return Const(value)
    if isinstance(value, (str, ex.Expr)):
        return expr_field(value)
    raise TypeError(f"cannot make a field from {type(value).__name__}")


def expr_field(e) -> Field:
    e = ex.as_expr(e)
    if isinstance(e, ex.Num):
        return Const(e.value)
    return ExprField(e)


def is_const(f: Field, value: float | None = None) -> bool:
    return isinstance(f, Const) and (value is None or f.value == value)


def add(*terms) -> Field:
    flat = []
    c = 0.0
    for t in terms:
        t = as_field(t)
        parts = t.children if isinstance(t, Sum) else (t,)
        for p in parts:
            if isinstance(p, Const):
                c += p.value
            else:
                flat.append(p)
    if c != 0.0:
        flat.append(Const(c))
    if not flat:
        return ZERO
    if len(flat) == 1:
        return flat[0]
    return Sum(flat)


def mul(*factors) -> Field:
    flat = []
    c = 1.0
    for f in factors:
        f = as_field(f)
        parts = f.children if isinstance(f, Product) else (f,)
        for p in parts:
            if isinstance(p, Const):
                c *= p.value
            else:
                flat.append(p)
    if c == 0.0:
        return ZERO
    if c != 1.0:
        flat.insert(0, Const(c))
    if not flat:
        return ONE
    if len(flat) == 1:
        return flat[0]
    return Product(flat)


def neg(a: Field) -> Field:
    return mul(Const(-1.0), a)


def sub(a: Field, b: Field) -> Field:
    return add(a, neg(b))


def div(a: Field, b: Field) -> Field:
    a, b = as_field(a), as_field(b)
    if is_const(b, 1.0):
        return a
    if is_const(a, 0.0):
        return ZERO
    if isinstance(b, Const):
        if b.value == 0.0:
            raise FieldError("division by the constant zero")
        return mul(Const(1.0 / b.value), a)
    return Quotient(a, b)


def dot(coeffs, fields) -> Field:
    return add(*(mul(c, f) for c, f in zip(coeffs, fields)))


def walk(root: Field):
    """Nodes reachable from ``root``, each once, children before parents."""
    seen = set()
    out = []
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            out.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for c in reversed(node.children):
            if id(c) not in seen:
                stack.append((c, False))
    return out


def dump(roots: Mapping[str, Field]) -> dict:
    """JSON-compatible description of the DAG behind ``roots``."""
    ids: dict = {}
    nodes = []
    for root in roots.values():
        for node in walk(root):
            if id(node) in ids:
                continue
            ids[id(node)] = len(nodes)
            entry = {"id": len(nodes), "op": node.op}
            entry.update(_jsonable(node.params()))
            if node.children:
                entry["args"] = [ids[id(c)] for c in node.children]
            nodes.append(entry)
    return {"nodes": nodes, "roots": {k: ids[id(v)] for k, v in roots.items()}}


def _jsonable(d):
    if isinstance(d, dict):
        return {k: _jsonable(v) for k, v in d.items()}
    if isinstance(d, (list, tuple)):
        return [_jsonable(v) for v in d]
    if isinstance(d, float):
        return float(repr(d)) if np.isfinite(d) else str(d)
    return d


def structure_hash(roots: Mapping[str, Field], extra: dict | None = None) -> str:
    payload = {"dag": dump(roots), "extra": extra or {}}
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


# ---------------------------------------------------------------------------
# evaluation contexts


class StaticCache:
    """Slot-free values for one fixed point set, reusable across evaluations."""

    def __init__(self):
        self.values: dict = {}
        self.torch_values: dict = {}
        self.weights: dict = {}
        self.children: dict = {}
        self.gather: dict = {}

    def child(self, key) -> "StaticCache":
        if key not in self.children:
            self.children[key] = StaticCache()
        return self.children[key]


SlotProvider = Callable[[np.ndarray, np.ndarray], Mapping]


class Context:
    """Evaluation at a fixed set of points with a chosen backend."""

    def __init__(self, x, y, backend: str = "numpy", static: StaticCache | None = None,
                 provider: SlotProvider | None = None, tol: float = 0.0):
        self.x = np.asarray(x, dtype=float)
        self.y = np.asarray(y, dtype=float)
        self.size = self.x.size
        self.backend = backend
        self.static = static if static is not None else StaticCache()
        self.provider = provider
        self.tol = tol
        self.memo: dict = {}
        self._slots = None
        self._numpy_view = None

    # -- values ------------------------------------------------------------

    def value(self, node: Field):
        if not node.has_slots:
            return self.const(node)
        key = id(node)
        if key not in self.memo:
            self.memo[key] = node._eval(self)
        return self.memo[key]

    def const(self, node: Field):
        key = id(node)
        arr = self.static.values.get(key)
        if arr is None:
            view = self.numpy_view()
            arr = np.asarray(node._eval(view), dtype=float)
            if arr.shape != (self.size,):
                arr = np.broadcast_to(arr, (self.size,)).copy()
            if not np.all(np.isfinite(arr)):
                bad = int(np.flatnonzero(~np.isfinite(arr))[0])
                raise NonFiniteFieldError(
                    f"non-finite value of {node.label()} at point {bad} ({self.x[bad]}, {self.y[bad]})",
                    bad, node.label())
            self.static.values[key] = arr
        if self.backend == "torch":
            t = self.static.torch_values.get(key)
            if t is None:
                t = to_torch(arr)
                self.static.torch_values[key] = t
            return t
        return arr

    def to_backend(self, arr: np.ndarray):
        if self.backend == "torch":
            return to_torch(arr)
        return arr

    def numpy_view(self) -> "Context":
        if self.backend == "numpy":
            return self
        if self._numpy_view is None:
            v = self._clone_for_static()
            self._numpy_view = v
        return self._numpy_view

    def _clone_for_static(self) -> "Context":
        return Context(self.x, self.y, "numpy", self.static, self.provider, self.tol)

    def weights(self, node: Transfinite) -> list:
        """``(weight, nonzero)`` pairs in the context's backend."""
        key = (id(node), self.backend)
        W = self.static.weights.get(key)
        if W is None:
            raw = self.static.weights.get((id(node), "numpy"))
            if raw is None:
                raw = [(w, bool(np.any(w))) for w in node.weights(self.x, self.y, self.tol)]
                self.static.weights[(id(node), "numpy")] = raw
            W = raw if self.backend == "numpy" else [(to_torch(w), used) for w, used in raw]
            self.static.weights[key] = W
        return W

    def slot(self, name: str):
        if self._slots is None:
            if self.provider is None:
                raise FieldError(f"no slot values available at these points (slot {name!r})")
            self._slots = self.provider(self.x, self.y)
        try:
            v = self._slots[name]
        except KeyError:
            raise FieldError(f"missing slot {name!r}") from None
        if self.backend == "numpy" and is_torch(v):
            v = as_numpy(v)
        return v

    # -- operators -------------------------------------------------------

    def gradient(self, field: Field, axis: int, delta: float | None = None):
        """Central difference with step ``delta`` (point clouds)."""
        if delta is None:
            delta = 1e-5 * max(1.0, float(np.max(np.abs(np.concatenate([self.x, self.y])))))
        shift = (delta, 0.0) if axis == 0 else (0.0, delta)
        plus = self.child(("shift", axis, 1), self.x + shift[0], self.y + shift[1])
        minus = self.child(("shift", axis, -1), self.x - shift[0], self.y - shift[1])
        return (plus.value(field) - minus.value(field)) / (2 * delta)

    def composed(self, field: Field, geom: geo.Line):
        px, py = geom.project(self.x, self.y)
        return self.child(("compose", id(geom)), px, py).value(field)

    def child(self, key, x, y) -> "Context":
        ck = ("ctx",) + key
        c = self.memo.get(ck)
        if c is None:
            c = Context(x, y, self.backend, self.static.child(key), self.provider, self.tol)
            self.memo[ck] = c
        return c


class GridContext(Context):
    """Evaluation at all nodes of a grid; gradients use box finite differences."""

    def __init__(self, grid, backend: str = "numpy", static: StaticCache | None = None,
                 slots: Mapping | None = None, provider: SlotProvider | None = None):
        super().__init__(grid.x, grid.y, backend, static, provider, grid.tol)
        self.grid = grid
        self._slots = slots

    def _clone_for_static(self):
        return GridContext(self.grid, "numpy", self.static, None, self.provider)

    def gradient(self, field, axis, delta=None):
        return self.grid.operator(axis, 1, "box")(self.value(field))

    def composed(self, field, geom):
        idx = self._gather_index(geom)
        if idx is not None:
            vals = self.value(field)
            if is_torch(vals):
                import torch

                return vals[torch.as_tensor(idx)]
            return vals[idx]
        return super().composed(field, geom)

    def _gather_index(self, geom):
        key = id(geom)
        if key not in self.static.gather:
            px, py = geom.project(self.x, self.y)
            g = self.grid
            i = np.clip(np.searchsorted(g.x1d, px), 0, g.nx - 1)
            j = np.clip(np.searchsorted(g.y1d, py), 0, g.ny - 1)
            for arr, coords, p in ((i, g.x1d, px), (j, g.y1d, py)):
                lower = np.clip(arr - 1, 0, None)
                closer = np.abs(coords[lower] - p) < np.abs(coords[arr] - p)
                arr[closer] = lower[closer]
            idx = i * g.ny + j
            exact = (np.abs(g.x[idx] - px) <= 1e-9 * g.hx) & (np.abs(g.y[idx] - py) <= 1e-9 * g.hy)
            self.static.gather[key] = idx if np.all(exact) else None
        return self.static.gather[key]


# ---------------------------------------------------------------------------
# user-facing evaluators


def _slot_dict(slots, x, y):
    if slots is None:
        return None, None
    if callable(slots) and not isinstance(slots, Mapping):
        return None, slots
    return slots, None


class GridEvaluator:
    """Repeated evaluation of a structure on one grid.

    Slot-free sub-DAGs are computed once. ``evaluate`` accepts a mapping
    ``name -> grid vector`` (numpy or torch) or a callable ``(x, y) -> mapping``.
    Composition onto lines that do not pass through grid nodes requires a
    callable (or ``provider``).
    """

    def __init__(self, ss, grid):
        self.ss = ss
        self.grid = grid
        self.static = StaticCache()

    def context(self, slots=None, provider=None, backend: str | None = None) -> GridContext:
        values, prov = _slot_dict(slots, self.grid.x, self.grid.y)
        provider = provider or prov
        if values is None and provider is not None:
            values = provider(self.grid.x, self.grid.y)
        if backend is None:
            backend = "torch" if values and any(is_torch(v) for v in values.values()) else "numpy"
        return GridContext(self.grid, backend, self.static, values, provider)

    def evaluate(self, slots=None, provider=None, backend: str | None = None) -> list:
        ctx = self.context(slots, provider, backend)
        out = [ctx.value(c) for c in self.ss.components]
        check_finite(ctx, self.ss, out, self.grid.domain_mask)
        return out

    def evaluate_nodes(self, fields, slots=None, provider=None, backend=None) -> list:
        ctx = self.context(slots, provider, backend)
        return [ctx.value(f) for f in fields]


def evaluate_points(fields, x, y, provider: SlotProvider | None = None, tol: float = 0.0) -> list:
    """Evaluate fields at arbitrary points with analytic slot functions (numpy)."""
    ctx = Context(np.atleast_1d(x), np.atleast_1d(y), "numpy", None, provider, tol)
    return [np.asarray(ctx.value(f), dtype=float) for f in fields]


def check_finite(ctx: Context, ss, outputs, mask) -> None:
    for comp, val in zip(ss.component_names, outputs):
        arr = as_numpy(val)
        bad = ~np.isfinite(arr) & mask
        if np.any(bad):
            node = int(np.flatnonzero(bad)[0])
            path = _locate(ctx, ss.components[ss.component_names.index(comp)], node)
            raise NonFiniteFieldError(
                f"non-finite value in component {comp!r} at node {node}; first offending node: {path}", node, path)


def _locate(ctx: Context, root: Field, node: int) -> str:
    for n in walk(root):
        v = ctx.memo.get(id(n))
        if v is None:
            v = ctx.static.values.get(id(n))
        if v is None:
            continue
        arr = as_numpy(v)
        if arr.shape and node < arr.size and not np.isfinite(arr[node]):
            return n.label()
    return root.label()
