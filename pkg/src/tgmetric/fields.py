"""Scalar and tensor fields on a single coordinate chart, with Cartan calculus.

Component conventions (fixed throughout the package):

* ``(d alpha)_ij = d_i alpha_j - d_j alpha_i``
* ``(d B)_ijk = d_i B_jk - d_j B_ik + d_k B_ij``
* ``(i_X w)_{j..} = X^k w_{k j..}`` (contraction on the first slot)

Antisymmetric valences store only the independent components ``i<j`` and
``i<j<k``; accessors manage the signs.
"""
from __future__ import annotations

import itertools
import keyword
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.stats import qmc

from . import expr as E
from .expr import DomainError, ExpressionError, ParseError, UnknownSymbolError

__all__ = [
    "Chart",
    "ScalarField",
    "TensorField",
    "DomainError",
    "ExpressionError",
    "ParseError",
    "UnknownSymbolError",
    "ValenceError",
    "parse_scalar",
    "differentiate",
    "exterior_derivative",
    "interior_product",
    "lie_derivative",
    "lie_bracket",
    "christoffel",
    "christoffel_at",
    "symbolic_inverse",
]

VALENCES = ("scalar", "vector", "oneform", "twoform", "threeform", "symbilinear", "bilinear")
FORM_DEGREE = {"scalar": 0, "oneform": 1, "twoform": 2, "threeform": 3}


class ValenceError(TypeError):
    pass


@dataclass(frozen=True)
class Chart:
    """A coordinate chart: names, a sampling box, and an optional exclusion test.

    Points where ``excluded`` evaluates to a non-positive number are skipped
    when sampling (e.g. ``"x^2 + y^2 - 0.25"`` keeps away from the origin).
    """

    coord_names: tuple[str, ...]
    sample_box: tuple[tuple[float, float], ...]
    excluded: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "coord_names", tuple(self.coord_names))
        object.__setattr__(self, "sample_box", tuple((float(a), float(b)) for a, b in self.sample_box))
        if len(self.coord_names) < 1:
            raise ValueError("chart needs at least one coordinate")
        if len(set(self.coord_names)) != len(self.coord_names):
            raise ValueError(f"coordinate names must be distinct: {self.coord_names}")
        for name in self.coord_names:
            if not name.isidentifier() or keyword.iskeyword(name) or name in E.FUNCTIONS:
                raise ValueError(f"invalid coordinate name {name!r}")
        if len(self.sample_box) != len(self.coord_names):
            raise ValueError("sample_box needs one interval per coordinate")
        for lo, hi in self.sample_box:
            if not lo < hi:
                raise ValueError(f"degenerate sample interval [{lo}, {hi}]")
        if self.excluded is not None:
            E.parse(self.excluded, self.coord_names)

    @property
    def dim(self) -> int:
        return len(self.coord_names)

    def index(self, name: str) -> int:
        try:
            return self.coord_names.index(name)
        except ValueError:
            raise UnknownSymbolError(name) from None

    def env(self, points: np.ndarray) -> dict[str, np.ndarray]:
        points = np.asarray(points, dtype=float)
        if points.shape[-1] != self.dim:
            raise ValueError(f"points need {self.dim} coordinates, got shape {points.shape}")
        return {name: points[..., i] for i, name in enumerate(self.coord_names)}

    def accept(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        if self.excluded is None:
            return np.ones(len(points), dtype=bool)
        val = E.evaluate(E.parse(self.excluded, self.coord_names), self.env(points), (len(points),))
        return val > 0

    def sample(self, count: int, seed: int = 0) -> np.ndarray:
        """Deterministic scrambled-Halton points inside the box, filtered by ``excluded``."""
        lo = np.array([a for a, _ in self.sample_box])
        hi = np.array([b for _, b in self.sample_box])
        gen = qmc.Halton(d=self.dim, scramble=True, seed=seed)
        out = np.empty((0, self.dim))
        for _ in range(100):
            pts = qmc.scale(gen.random(max(2 * count, 16)), lo, hi)
            out = np.vstack([out, pts[self.accept(pts)]])
            if len(out) >= count:
                return out[:count]
        raise ValueError("excluded predicate rejects almost the whole sample box")

    def probe_points(self) -> np.ndarray:
        """Box centre and vertices that pass ``excluded``.

        Random samples almost never land on a vanishing locus such as ``x = 0``;
        rank checks add these probes so symmetric boxes expose one.
        """
        lo = np.array([a for a, _ in self.sample_box])
        hi = np.array([b for _, b in self.sample_box])
        corners = np.array(list(itertools.product(*zip(lo, hi))), dtype=float)
        pts = np.vstack([(lo + hi) / 2, corners])
        return pts[self.accept(pts)]

    def restrict(self, keep: Sequence[str]) -> "Chart":
        idx = [self.index(k) for k in keep]
        return Chart(tuple(keep), tuple(self.sample_box[i] for i in idx))


@dataclass(frozen=True, eq=False)
class ScalarField:
    """An immutable expression in the chart coordinates."""

    node: E.Node
    chart: Chart

    def __post_init__(self):
        unknown = E.symbols(self.node) - set(self.chart.coord_names)
        if unknown:
            raise UnknownSymbolError(sorted(unknown)[0])

    @classmethod
    def const(cls, value: float, chart: Chart) -> "ScalarField":
        return cls(E.Num(value), chart)

    @classmethod
    def coord(cls, name: str, chart: Chart) -> "ScalarField":
        chart.index(name)
        return cls(E.Sym(name), chart)

    def __call__(self, points) -> np.ndarray | float:
        pts = np.asarray(points, dtype=float)
        val = E.evaluate(self.node, self.chart.env(pts), pts.shape[:-1])
        return float(val) if pts.ndim == 1 else val

    def diff(self, coord: str) -> "ScalarField":
        self.chart.index(coord)
        return ScalarField(E.diff(self.node, coord), self.chart)

    def is_zero(self) -> bool:
        return E.is_num(self.node, 0.0)

    def substitute(self, values: dict, chart: Chart | None = None) -> "ScalarField":
        nodes = {k: v.node if isinstance(v, ScalarField) else E.Num(v) for k, v in values.items()}
        return ScalarField(E.substitute(self.node, nodes), chart or self.chart)

    def __str__(self):
        return E.to_string(self.node)

    def __repr__(self):
        return f"ScalarField({E.to_string(self.node)!r})"

    def _lift(self, other) -> E.Node:
        if isinstance(other, ScalarField):
            if other.chart != self.chart:
                raise ValueError("scalar fields live on different charts")
            return other.node
        return E.Num(other)

    def __add__(self, o):
        return ScalarField(E.add(self.node, self._lift(o)), self.chart)

    def __radd__(self, o):
        return ScalarField(E.add(self._lift(o), self.node), self.chart)

    def __sub__(self, o):
        return ScalarField(E.sub(self.node, self._lift(o)), self.chart)

    def __rsub__(self, o):
        return ScalarField(E.sub(self._lift(o), self.node), self.chart)

    def __mul__(self, o):
        return ScalarField(E.mul(self.node, self._lift(o)), self.chart)

    def __rmul__(self, o):
        return ScalarField(E.mul(self._lift(o), self.node), self.chart)

    def __truediv__(self, o):
        return ScalarField(E.div(self.node, self._lift(o)), self.chart)

    def __rtruediv__(self, o):
        return ScalarField(E.div(self._lift(o), self.node), self.chart)

    def __pow__(self, o):
        return ScalarField(E.power(self.node, self._lift(o)), self.chart)

    def __neg__(self):
        return ScalarField(E.neg(self.node), self.chart)


def parse_scalar(text: str, chart: Chart) -> ScalarField:
    return ScalarField(E.parse(text, chart.coord_names), chart)


def differentiate(f: ScalarField, coord: str) -> ScalarField:
    return f.diff(coord)


def total(terms: Iterable[ScalarField], chart: Chart) -> ScalarField:
    acc = ScalarField.const(0.0, chart)
    for t in terms:
        acc = acc + t
    return acc


# ---------------------------------------------------------------- tensors


def _index_sets(valence: str, n: int) -> list[tuple[int, ...]]:
    if valence == "scalar":
        return [()]
    if valence in ("vector", "oneform"):
        return [(i,) for i in range(n)]
    if valence == "twoform":
        return list(itertools.combinations(range(n), 2))
    if valence == "threeform":
        return list(itertools.combinations(range(n), 3))
    if valence == "symbilinear":
        return list(itertools.combinations_with_replacement(range(n), 2))
    if valence == "bilinear":
        return list(itertools.product(range(n), repeat=2))
    raise ValenceError(f"unknown valence {valence!r}")


def _rank(valence: str) -> int:
    return {"scalar": 0, "vector": 1, "oneform": 1, "twoform": 2, "threeform": 3,
            "symbilinear": 2, "bilinear": 2}[valence]


def _perm_sign(idx: Sequence[int]) -> tuple[int, tuple[int, ...]]:
    idx = list(idx)
    if len(set(idx)) != len(idx):
        return 0, tuple(sorted(idx))
    sign = 1
    for i in range(len(idx)):
        for j in range(i + 1, len(idx)):
            if idx[i] > idx[j]:
                sign = -sign
    return sign, tuple(sorted(idx))


@dataclass(frozen=True, eq=False)
class TensorField:
    chart: Chart
    valence: str
    components: tuple[ScalarField, ...]
    _lookup: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        keys = _index_sets(self.valence, self.chart.dim)
        comps = tuple(self.components)
        if len(comps) != len(keys):
            raise ValenceError(
                f"{self.valence} on a {self.chart.dim}-dimensional chart needs {len(keys)} components, got {len(comps)}"
            )
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "_lookup", dict(zip(keys, comps)))

    @property
    def n(self) -> int:
        return self.chart.dim

    @property
    def rank(self) -> int:
        return _rank(self.valence)

    @classmethod
    def zero(cls, chart: Chart, valence: str) -> "TensorField":
        z = ScalarField.const(0.0, chart)
        return cls(chart, valence, tuple(z for _ in _index_sets(valence, chart.dim)))

    @classmethod
    def from_function(cls, chart: Chart, valence: str, fn: Callable[..., ScalarField]) -> "TensorField":
        """Build from ``fn(*index)`` evaluated on the stored index sets."""
        return cls(chart, valence, tuple(fn(*idx) for idx in _index_sets(valence, chart.dim)))

    @classmethod
    def from_strings(cls, chart: Chart, valence: str, texts: Sequence[str]) -> "TensorField":
        return cls(chart, valence, tuple(parse_scalar(t, chart) for t in texts))

    def __getitem__(self, idx) -> ScalarField:
        if not isinstance(idx, tuple):
            idx = (idx,)
        if self.valence in FORM_DEGREE and self.rank >= 2:
            sign, key = _perm_sign(idx)
            if sign == 0:
                return ScalarField.const(0.0, self.chart)
            comp = self._lookup[key]
            return comp if sign > 0 else -comp
        if self.valence == "symbilinear":
            return self._lookup[tuple(sorted(idx))]
        return self._lookup[idx]

    def items(self):
        return self._lookup.items()

    def dense(self) -> np.ndarray:
        """Object array of ScalarFields with full index range."""
        out = np.empty((self.n,) * self.rank, dtype=object)
        for idx in itertools.product(range(self.n), repeat=self.rank):
            out[idx] = self[idx]
        return out

    def __call__(self, points) -> np.ndarray:
        """Evaluate every component; returns shape ``points.shape[:-1] + (n,)*rank``."""
        pts = np.asarray(points, dtype=float)
        base = pts.shape[:-1]
        env = self.chart.env(pts)
        out = np.zeros(base + (self.n,) * self.rank)
        cache = {}
        for key, comp in self._lookup.items():
            if comp.node not in cache:
                cache[comp.node] = E.evaluate(comp.node, env, base) if base else float(E.evaluate(comp.node, env))
            val = cache[comp.node]
            if self.valence in FORM_DEGREE and self.rank >= 2:
                for perm in itertools.permutations(range(self.rank)):
                    idx = tuple(key[p] for p in perm)
                    sign, _ = _perm_sign(perm)
                    out[(...,) + idx] = sign * val
            elif self.valence == "symbilinear":
                i, j = key
                out[..., i, j] = val
                out[..., j, i] = val
            else:
                out[(...,) + key] = val
        return out

    def map(self, fn: Callable[[ScalarField], ScalarField]) -> "TensorField":
        return TensorField(self.chart, self.valence, tuple(fn(c) for c in self.components))

    def _combine(self, other: "TensorField", op) -> "TensorField":
        if other.chart != self.chart:
            raise ValueError("tensor fields live on different charts")
        if other.valence != self.valence:
            raise ValenceError(f"cannot combine {self.valence} with {other.valence}")
        return TensorField(self.chart, self.valence,
                           tuple(op(a, b) for a, b in zip(self.components, other.components)))

    def __add__(self, other):
        return self._combine(other, lambda a, b: a + b)

    def __sub__(self, other):
        return self._combine(other, lambda a, b: a - b)

    def __neg__(self):
        return self.map(lambda c: -c)

    def scale(self, f) -> "TensorField":
        return self.map(lambda c: c * f)

    def as_bilinear(self) -> "TensorField":
        if self.rank != 2:
            raise ValenceError(f"{self.valence} is not a 2-tensor")
        return TensorField.from_function(self.chart, "bilinear", lambda i, j: self[i, j])

    def is_zero(self) -> bool:
        return all(c.is_zero() for c in self.components)


# ---------------------------------------------------------------- Cartan calculus


def _require(t: TensorField, *valences: str):
    if t.valence not in valences:
        raise ValenceError(f"expected one of {valences}, got {t.valence}")


def gradient(f: ScalarField) -> TensorField:
    ch = f.chart
    return TensorField.from_function(ch, "oneform", lambda i: f.diff(ch.coord_names[i]))


def exterior_derivative(w: TensorField) -> TensorField:
    _require(w, "scalar", "oneform", "twoform", "threeform")
    ch, n = w.chart, w.n
    names = ch.coord_names
    if w.valence == "scalar":
        return gradient(w.components[0])
    if w.valence == "oneform":
        return TensorField.from_function(
            ch, "twoform", lambda i, j: w[j].diff(names[i]) - w[i].diff(names[j]))
    if w.valence == "twoform":
        return TensorField.from_function(
            ch, "threeform",
            lambda i, j, k: w[j, k].diff(names[i]) - w[i, k].diff(names[j]) + w[i, j].diff(names[k]))
    if n <= 3:
        return TensorField.zero(ch, "threeform") if n < 3 else _ZeroFourForm(ch)
    raise ValenceError("4-forms are not represented; d of a 3-form is only available for n <= 3")


class _ZeroFourForm(TensorField):
    """Stand-in for d of a 3-form when n = 3 (every 4-form vanishes)."""

    def __init__(self, chart):
        object.__setattr__(self, "chart", chart)
        object.__setattr__(self, "valence", "fourform")
        object.__setattr__(self, "components", ())
        object.__setattr__(self, "_lookup", {})

    def is_zero(self):
        return True

    def __call__(self, points):
        pts = np.asarray(points, dtype=float)
        return np.zeros(pts.shape[:-1] + (self.n,) * 4)


def interior_product(X: TensorField, w: TensorField) -> TensorField:
    _require(X, "vector")
    _require(w, "oneform", "twoform", "threeform", "symbilinear", "bilinear")
    ch, n = X.chart, X.n
    if w.valence == "oneform":
        return TensorField(ch, "scalar", (total((X[k] * w[k] for k in range(n)), ch),))
    if w.valence == "twoform":
        return TensorField.from_function(ch, "oneform", lambda j: total((X[k] * w[k, j] for k in range(n)), ch))
    if w.valence == "threeform":
        return TensorField.from_function(
            ch, "twoform", lambda i, j: total((X[k] * w[k, i, j] for k in range(n)), ch))
    return TensorField.from_function(ch, "oneform", lambda j: total((X[k] * w[k, j] for k in range(n)), ch))


def lie_bracket(X: TensorField, Y: TensorField) -> TensorField:
    _require(X, "vector")
    _require(Y, "vector")
    ch, n = X.chart, X.n
    names = ch.coord_names
    return TensorField.from_function(
        ch, "vector",
        lambda i: total((X[k] * Y[i].diff(names[k]) - Y[k] * X[i].diff(names[k]) for k in range(n)), ch))


def lie_derivative(X: TensorField, T: TensorField) -> TensorField:
    """Component formula ``X^k d_k T + sum over slots T(.., d X, ..)``."""
    _require(X, "vector")
    ch, n = X.chart, X.n
    names = ch.coord_names
    if T.valence == "vector":
        return lie_bracket(X, T)
    if T.valence not in ("scalar", "oneform", "twoform", "threeform", "symbilinear", "bilinear"):
        raise ValenceError(f"Lie derivative of {T.valence} is not supported")
    dX = [[X[k].diff(names[i]) for i in range(n)] for k in range(n)]  # dX[k][i] = d_i X^k

    def comp(*idx):
        acc = total((X[k] * T[idx].diff(names[k]) for k in range(n)), ch) if idx else \
            total((X[k] * T.components[0].diff(names[k]) for k in range(n)), ch)
        for slot in range(len(idx)):
            for k in range(n):
                if dX[k][idx[slot]].is_zero():
                    continue
                moved = idx[:slot] + (k,) + idx[slot + 1:]
                acc = acc + T[moved] * dX[k][idx[slot]]
        return acc

    return TensorField.from_function(ch, T.valence, comp)


# ---------------------------------------------------------------- Levi-Civita


def _det(m: list[list[ScalarField]], chart: Chart) -> ScalarField:
    size = len(m)
    if size == 1:
        return m[0][0]
    if size == 2:
        return m[0][0] * m[1][1] - m[0][1] * m[1][0]
    acc = ScalarField.const(0.0, chart)
    for j in range(size):
        if m[0][j].is_zero():
            continue
        minor = [row[:j] + row[j + 1:] for row in m[1:]]
        term = m[0][j] * _det(minor, chart)
        acc = acc + term if j % 2 == 0 else acc - term
    return acc


def symbolic_inverse(m: list[list[ScalarField]], chart: Chart) -> list[list[ScalarField]]:
    """Adjugate / determinant inverse; intended for sizes up to 4."""
    size = len(m)
    if size > 4:
        raise ValueError("symbolic inverse is limited to n <= 4; use christoffel_at")
    det = _det(m, chart)
    if size == 1:
        return [[1 / det]]
    inv = [[None] * size for _ in range(size)]
    for i in range(size):
        for j in range(size):
            minor = [row[:i] + row[i + 1:] for k, row in enumerate(m) if k != j]
            cof = _det(minor, chart)
            inv[i][j] = (cof if (i + j) % 2 == 0 else -cof) / det
    return inv


def christoffel(g: TensorField) -> np.ndarray:
    """Symbolic ``Gamma[k, i, j]`` for n <= 4."""
    _require(g, "symbilinear")
    ch, n = g.chart, g.n
    names = ch.coord_names
    ginv = symbolic_inverse([[g[i, j] for j in range(n)] for i in range(n)], ch)
    dg = {(l, i, j): g[i, j].diff(names[l]) for l in range(n) for i in range(n) for j in range(i, n)}

    def d(l, i, j):
        return dg[(l, min(i, j), max(i, j))]

    gamma = np.empty((n, n, n), dtype=object)
    for k in range(n):
        for i in range(n):
            for j in range(i, n):
                acc = ScalarField.const(0.0, ch)
                for l in range(n):
                    if ginv[k][l].is_zero():
                        continue
                    inner = d(i, l, j) + d(j, l, i) - d(l, i, j)
                    if not inner.is_zero():
                        acc = acc + ginv[k][l] * inner
                gamma[k, i, j] = gamma[k, j, i] = acc * 0.5
    return gamma


def christoffel_at(g: TensorField, points) -> np.ndarray:
    """Numeric ``Gamma[..., k, i, j]`` at the given points (any n)."""
    _require(g, "symbilinear")
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    names = g.chart.coord_names
    gv = g(pts)
    if np.any(np.abs(np.linalg.det(gv)) < 1e-14):
        raise DomainError("metric is singular at an evaluation point")
    ginv = np.linalg.inv(gv)
    dg = np.stack([g.map(lambda c, a=a: c.diff(a))(pts) for a in names], axis=1)  # [p, l, i, j]
    # lower[p, l, i, j] = d_i g_lj + d_j g_li - d_l g_ij
    lower = np.einsum("pilj->plij", dg) + np.einsum("pjli->plij", dg) - dg
    return 0.5 * np.einsum("pkl,plij->pkij", ginv, lower)
