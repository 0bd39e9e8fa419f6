"""The split exact Courant algebroid (T + T*)M twisted by a closed 3-form H.

Pairing: ``<(X,a),(Y,b)> = a(Y) + b(X)`` (no factor 1/2).
Dorfman bracket: ``[(X,a),(Y,b)] = ([X,Y], L_X b - i_Y da + i_Y i_X H)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fields import (
    Chart,
    DomainError,
    ScalarField,
    TensorField,
    ValenceError,
    exterior_derivative,
    interior_product,
    lie_bracket,
    lie_derivative,
    symbolic_inverse,
)


@dataclass(frozen=True)
class GeneralizedSection:
    X: TensorField
    alpha: TensorField

    def __post_init__(self):
        if self.X.valence != "vector" or self.alpha.valence != "oneform":
            raise ValenceError("a generalized section is a (vector, oneform) pair")
        if self.X.chart != self.alpha.chart:
            raise ValueError("section components live on different charts")

    @property
    def chart(self) -> Chart:
        return self.X.chart

    @classmethod
    def from_strings(cls, chart: Chart, X, alpha) -> "GeneralizedSection":
        return cls(TensorField.from_strings(chart, "vector", X), TensorField.from_strings(chart, "oneform", alpha))

    @classmethod
    def zero(cls, chart: Chart) -> "GeneralizedSection":
        return cls(TensorField.zero(chart, "vector"), TensorField.zero(chart, "oneform"))

    def __call__(self, points) -> np.ndarray:
        """Stacked values ``(X^1..X^n, a_1..a_n)`` with shape ``(..., 2n)``."""
        return np.concatenate([self.X(points), self.alpha(points)], axis=-1)

    def __add__(self, other):
        return GeneralizedSection(self.X + other.X, self.alpha + other.alpha)

    def __sub__(self, other):
        return GeneralizedSection(self.X - other.X, self.alpha - other.alpha)

    def scale(self, f) -> "GeneralizedSection":
        return GeneralizedSection(self.X.scale(f), self.alpha.scale(f))

    def __str__(self):
        xs = ", ".join(str(c) for c in self.X.components)
        al = ", ".join(str(c) for c in self.alpha.components)
        return f"(X=[{xs}], alpha=[{al}])"


@dataclass(frozen=True)
class CourantData:
    """Metric ``g`` (the generalized metric V is its graph) and twist ``H``."""

    chart: Chart
    g: TensorField
    H: TensorField

    def __post_init__(self):
        if self.g.valence != "symbilinear" or self.H.valence != "threeform":
            raise ValenceError("CourantData needs a symbilinear g and a threeform H")
        if self.g.chart != self.chart or self.H.chart != self.chart:
            raise ValueError("g and H must live on the data chart")

    @property
    def n(self) -> int:
        return self.chart.dim

    def check(self, points, tol: float = 1e-10) -> dict:
        """Positive definiteness of g and closedness of H at the points."""
        pts = np.atleast_2d(points)
        eig_min = float(np.min(np.linalg.eigvalsh(self.g(pts))))
        dH = exterior_derivative(self.H)
        dH_max = 0.0 if dH.is_zero() else float(np.max(np.abs(dH(pts))))
        return {"min_eigenvalue": eig_min, "dH_max": dH_max,
                "passed": eig_min > 0 and dH_max <= tol}

    def g_inverse(self) -> list[list[ScalarField]]:
        n = self.n
        return symbolic_inverse([[self.g[i, j] for j in range(n)] for i in range(n)], self.chart)


def _same_chart(*sections: GeneralizedSection):
    charts = {s.chart for s in sections}
    if len(charts) != 1:
        raise ValueError("sections live on different charts")


def pairing(s1: GeneralizedSection, s2: GeneralizedSection) -> ScalarField:
    _same_chart(s1, s2)
    a = interior_product(s2.X, s1.alpha).components[0]
    b = interior_product(s1.X, s2.alpha).components[0]
    return a + b


def anchor(s: GeneralizedSection) -> TensorField:
    return s.X


def dorfman(s1: GeneralizedSection, s2: GeneralizedSection, data: CourantData) -> GeneralizedSection:
    _same_chart(s1, s2)
    X, a = s1.X, s1.alpha
    Y, b = s2.X, s2.alpha
    form = lie_derivative(X, b) - interior_product(Y, exterior_derivative(a))
    if not data.H.is_zero():
        form = form + interior_product(Y, interior_product(X, data.H))
    return GeneralizedSection(lie_bracket(X, Y), form)


def b_transform_section(B: TensorField, s: GeneralizedSection) -> GeneralizedSection:
    if B.valence != "twoform":
        raise ValenceError("B must be a twoform")
    return GeneralizedSection(s.X, s.alpha + interior_product(s.X, B))


def b_transform_data(B: TensorField, data: CourantData) -> CourantData:
    return CourantData(data.chart, data.g, data.H - exterior_derivative(B))


def b_transform(B: TensorField, s: GeneralizedSection, data: CourantData):
    """``(X, a) -> (X, a + i_X B)`` together with ``H -> H - dB``."""
    if B.chart != s.chart or B.chart != data.chart:
        raise ValueError("B, section and data must share a chart")
    return b_transform_section(B, s), b_transform_data(B, data)


def _lower(u: TensorField, g: TensorField) -> TensorField:
    n = u.n
    return TensorField.from_function(
        u.chart, "oneform", lambda j: sum((u[i] * g[i, j] for i in range(1, n)), u[0] * g[0, j]))


def plus_embed(u: TensorField, data: CourantData) -> GeneralizedSection:
    return GeneralizedSection(u, _lower(u, data.g))


def minus_embed(u: TensorField, data: CourantData) -> GeneralizedSection:
    return GeneralizedSection(u, -_lower(u, data.g))


def decompose(s: GeneralizedSection, data: CourantData) -> tuple[TensorField, TensorField]:
    """Vectors ``(a, b)`` with ``s = a_+ + b_-``."""
    n = data.n
    ginv = data.g_inverse()
    raised = TensorField.from_function(
        data.chart, "vector", lambda i: sum((ginv[i][j] * s.alpha[j] for j in range(1, n)), ginv[i][0] * s.alpha[0]))
    a = (s.X + raised).scale(0.5)
    b = (s.X - raised).scale(0.5)
    return a, b


def reflect_V(s: GeneralizedSection, data: CourantData) -> GeneralizedSection:
    a, b = decompose(s, data)
    return plus_embed(a, data) - minus_embed(b, data)


# ---------------------------------------------------------------- pointwise matrices


def pairing_matrix(n: int) -> np.ndarray:
    """Gram matrix of the pairing on stacked ``(X, a)`` vectors."""
    Q = np.zeros((2 * n, 2 * n))
    Q[:n, n:] = np.eye(n)
    Q[n:, :n] = np.eye(n)
    return Q


def reflection_matrix(gval: np.ndarray) -> np.ndarray:
    """``R_V`` at a point (acting on stacked vectors): ``(X, a) -> (g^-1 a, g X)``."""
    n = gval.shape[-1]
    if np.any(np.abs(np.linalg.det(gval)) < 1e-14):
        raise DomainError("metric is singular at an evaluation point")
    R = np.zeros(gval.shape[:-2] + (2 * n, 2 * n))
    R[..., :n, n:] = np.linalg.inv(gval)
    R[..., n:, :n] = gval
    return R


def generalized_metric_matrix(gval: np.ndarray) -> np.ndarray:
    """``G_V(s, t) = <s, R_V t>``, i.e. ``diag(g, g^-1)``; positive definite."""
    n = gval.shape[-1]
    G = np.zeros(gval.shape[:-2] + (2 * n, 2 * n))
    G[..., :n, :n] = gval
    G[..., n:, n:] = np.linalg.inv(gval)
    return G
