import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tgmetric.expr import DomainError, UnknownSymbolError
from tgmetric.fields import (
    Chart,
    ScalarField,
    TensorField,
    ValenceError,
    christoffel,
    christoffel_at,
    exterior_derivative,
    interior_product,
    lie_bracket,
    lie_derivative,
    parse_scalar,
)

from conftest import DIRAC_CORPUS, assert_close, scenario


def field_values(f, pts):
    return np.broadcast_to(f(pts), (len(pts),))


# ---------------------------------------------------------------- chart and sampling


def test_chart_validation():
    with pytest.raises(ValueError):
        Chart(("x", "x"), ((0, 1), (0, 1)))
    with pytest.raises(ValueError):
        Chart(("x",), ((1, 1),))
    with pytest.raises(ValueError):
        Chart(("2x",), ((0, 1),))


def test_sampling_is_seeded_and_respects_exclusion():
    ch = Chart(("x", "y"), ((-1, 1), (-1, 1)), "x^2 + y^2 - 0.25")
    a, b = ch.sample(50, seed=7), ch.sample(50, seed=7)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, ch.sample(50, seed=8))
    assert a.shape == (50, 2)
    assert np.all(a[:, 0] ** 2 + a[:, 1] ** 2 > 0.25)
    assert np.all(np.abs(a) <= 1)


def test_unknown_symbol_in_field(chart3):
    with pytest.raises(UnknownSymbolError):
        parse_scalar("x*q", chart3)


def test_eval_domain_error(chart3):
    with pytest.raises(DomainError):
        parse_scalar("1/x", chart3)(np.array([0.0, 0.2, 0.3]))


# ---------------------------------------------------------------- storage


def test_component_counts(chart3):
    counts = {"scalar": 1, "vector": 3, "oneform": 3, "twoform": 3, "threeform": 1,
              "symbilinear": 6, "bilinear": 9}
    for valence, count in counts.items():
        assert len(TensorField.zero(chart3, valence).components) == count
    with pytest.raises(ValenceError):
        TensorField.from_strings(chart3, "twoform", ["x", "y"])


def test_forms_are_structurally_antisymmetric(chart3, pts3):
    w = TensorField.from_strings(chart3, "twoform", ["x*y", "sin(z)", "exp(x)"])
    W = w(pts3)
    assert np.array_equal(W, -W.swapaxes(-1, -2))
    assert w[1, 0].node == (-w[0, 1]).node
    assert w[2, 2].is_zero()
    H = TensorField.from_strings(chart3, "threeform", ["x + y*z"])(pts3)
    assert np.array_equal(H, -H.swapaxes(-1, -2))
    assert np.array_equal(H, -H.swapaxes(-2, -3))
    g = TensorField.from_strings(chart3, "symbilinear", ["1", "x", "0", "2", "y", "3"])(pts3)
    assert np.array_equal(g, g.swapaxes(-1, -2))


# ---------------------------------------------------------------- Cartan calculus


def test_d_examples(chart3, pts3):
    a = TensorField.from_strings(chart3, "oneform", ["0", "2*x", "0"])
    da = exterior_derivative(a)
    assert_close(da(pts3)[:, 0, 1], 2.0, 0)
    assert_close(da(pts3)[:, 0, 2], 0.0, 0)
    vol = TensorField.from_strings(chart3, "threeform", ["1"])
    assert exterior_derivative(vol).is_zero()
    f = TensorField(chart3, "scalar", (parse_scalar("x*y*z", chart3),))
    assert exterior_derivative(exterior_derivative(f)).is_zero()


def test_d_convention_against_fd(chart3, pts3):
    # (dB)_xyz = d_x B_yz - d_y B_xz + d_z B_xy; storage order is xy, xz, yz
    B = TensorField.from_strings(chart3, "twoform", ["x*y*z", "sin(y)*z", "x^2*y"])
    dB = exterior_derivative(B)(pts3)[:, 0, 1, 2]
    x, y, z = pts3.T
    expected = 2 * x * y - np.cos(y) * z + x * y
    assert_close(dB, expected, 1e-12)


def test_interior_product_examples(chart3, pts3):
    dz = TensorField.from_strings(chart3, "vector", ["0", "0", "1"])
    H = TensorField.from_strings(chart3, "threeform", ["2"])
    iH = interior_product(dz, H)(pts3)
    assert_close(iH[:, 0, 1], 2.0, 0)
    dx = TensorField.from_strings(chart3, "vector", ["1", "0", "0"])
    dy = TensorField.from_strings(chart3, "oneform", ["0", "1", "0"])
    assert interior_product(dx, dy).is_zero()
    with pytest.raises(ValenceError):
        interior_product(dx, TensorField.zero(chart3, "scalar"))


def test_iota_iota_vanishes(chart3, pts3):
    X = TensorField.from_strings(chart3, "vector", ["y", "x*z", "exp(x)"])
    w = TensorField.from_strings(chart3, "twoform", ["x*y", "sin(z)", "exp(x)"])
    H = TensorField.from_strings(chart3, "threeform", ["1 + x^2*y"])
    assert_close(interior_product(X, interior_product(X, w))(pts3), 0, 1e-12)
    assert_close(interior_product(X, interior_product(X, H))(pts3), 0, 1e-12)


def test_lie_derivative_examples(chart3, pts3):
    dz = TensorField.from_strings(chart3, "vector", ["0", "0", "1"])
    g = TensorField.from_strings(chart3, "symbilinear", ["1 + x^2", "x*y", "0", "exp(y)", "0", "2"])
    assert_close(lie_derivative(dz, g)(pts3), 0, 0)
    rot = TensorField.from_strings(chart3, "vector", ["-y", "x", "0"])
    flat = TensorField.from_strings(chart3, "symbilinear", ["1", "0", "0", "1", "0", "1"])
    assert_close(lie_derivative(rot, flat)(pts3), 0, 1e-14)


def test_lie_derivative_of_vector_is_bracket(chart3, pts3):
    X = TensorField.from_strings(chart3, "vector", ["1", "0", "0"])
    Y = TensorField.from_strings(chart3, "vector", ["0", "x^2", "0"])
    br = lie_bracket(X, Y)(pts3)
    assert_close(br[:, 1], 2 * pts3[:, 0], 1e-14)
    assert_close(lie_derivative(X, Y)(pts3), br, 0)


def test_symbilinear_lie_derivative_formula(chart3, pts3):
    # (L_X g)_ij = X^k d_k g_ij + g_kj d_i X^k + g_ik d_j X^k, checked by finite differences of the flow
    X = TensorField.from_strings(chart3, "vector", ["y*z", "sin(x)", "x*y"])
    g = TensorField.from_strings(chart3, "symbilinear", ["2 + x^2", "x*y", "0", "1 + y^2", "z", "3"])
    L = lie_derivative(X, g)(pts3)
    h = 1e-5

    def pulled(t):
        # first-order flow: phi_t(p) = p + t X(p); (phi_t^* g)_ij = g_kl(phi_t p) dphi^k_i dphi^l_j
        shifted = pts3 + t * X(pts3)
        J = np.eye(3)[None] + t * np.stack([X.map(lambda c, v=v: c.diff(v))(pts3) for v in "xyz"], axis=-1)
        return np.einsum("pki,pkl,plj->pij", J, g(shifted), J)

    fd = (pulled(h) - pulled(-h)) / (2 * h)
    assert_close(L, fd, 1e-6)


@pytest.mark.parametrize("name", DIRAC_CORPUS)
def test_cartan_identity_on_scenarios(name):
    sc = scenario(name)
    pts = sc.points()
    forms = [s.alpha for s in sc.frame.sections] + [
        TensorField.from_strings(sc.chart, "oneform", ["x*y", "sin(z)", "exp(x)*y"]),
        TensorField.from_strings(sc.chart, "twoform", ["x*z", "cos(y)", "x^2*y"])]
    vectors = [s.X for s in sc.frame.sections] + [TensorField.from_strings(sc.chart, "vector", ["z", "x*y", "1"])]
    for X in vectors:
        for w in forms:
            lhs = lie_derivative(X, w)(pts)
            rhs = (interior_product(X, exterior_derivative(w)) + exterior_derivative(interior_product(X, w)))(pts)
            assert_close(lhs, rhs, 1e-10)


@pytest.mark.parametrize("name", DIRAC_CORPUS)
def test_d_squared_vanishes(name):
    sc = scenario(name)
    pts = sc.points()
    scalars = [TensorField(sc.chart, "scalar", (c,)) for s in sc.frame.sections for c in s.X.components]
    scalars.append(TensorField(sc.chart, "scalar", (parse_scalar("x*y*z + exp(x)*sin(y)", sc.chart),)))
    for f in scalars:
        dd = exterior_derivative(exterior_derivative(f))
        assert dd.is_zero() or np.max(np.abs(dd(pts))) <= 1e-12
    for w in [s.alpha for s in sc.frame.sections]:
        dd = exterior_derivative(exterior_derivative(w))
        assert dd.is_zero() or np.max(np.abs(dd(pts))) <= 1e-12


@pytest.mark.parametrize("name", DIRAC_CORPUS)
def test_symbolic_derivatives_match_fd_on_scenario_fields(name):
    sc = scenario(name)
    pts = sc.points()
    comps = list(sc.data.g.components) + list(sc.data.H.components)
    for s in sc.frame.sections:
        comps += list(s.X.components) + list(s.alpha.components)
    h = 1e-5
    for f in comps:
        for i, v in enumerate(sc.chart.coord_names):
            d = field_values(f.diff(v), pts)
            plus, minus = pts.copy(), pts.copy()
            plus[:, i] += h
            minus[:, i] -= h
            fd = (field_values(f, plus) - field_values(f, minus)) / (2 * h)
            assert np.max(np.abs(d - fd) / np.maximum(np.abs(d), 1.0)) <= 1e-6


# ---------------------------------------------------------------- Levi-Civita


def test_christoffel_euclidean_is_zero(chart3):
    flat = TensorField.from_strings(chart3, "symbilinear", ["1", "0", "0", "1", "0", "1"])
    assert all(c.is_zero() for c in christoffel(flat).flat)


def _metricity(g, pts):
    gam = christoffel_at(g, pts)
    gv = g(pts)
    dg = np.stack([g.map(lambda c, v=v: c.diff(v))(pts) for v in g.chart.coord_names], axis=1)
    # nabla_l g_ij = d_l g_ij - Gamma^k_li g_kj - Gamma^k_lj g_ik
    return dg - np.einsum("pkli,pkj->plij", gam, gv) - np.einsum("pklj,pik->plij", gam, gv)


def test_heisenberg_christoffels_metric_and_symmetric():
    sc = scenario("s3_heisenberg")
    pts = sc.points()
    gam = christoffel_at(sc.data.g, pts)
    assert np.max(np.abs(gam)) > 0.1
    assert_close(_metricity(sc.data.g, pts), 0, 1e-9)
    assert np.array_equal(gam, gam.swapaxes(-1, -2))
    sym = christoffel(sc.data.g)
    assert_close(np.stack([[[c(pts) * np.ones(len(pts)) for c in row] for row in blk] for blk in sym])
                 .transpose(3, 0, 1, 2), gam, 1e-12)


@pytest.mark.parametrize("name", DIRAC_CORPUS)
def test_metricity_on_scenarios(name):
    sc = scenario(name)
    assert_close(_metricity(sc.data.g, sc.points()), 0, 1e-9)


# ---------------------------------------------------------------- properties


coeffs = st.lists(st.floats(-2, 2, allow_nan=False), min_size=3, max_size=3)


@settings(max_examples=40, deadline=None)
@given(coeffs, coeffs)
def test_d_is_linear_and_leibniz(a, b):
    ch = Chart(("x", "y", "z"), ((-1, 1),) * 3)
    pts = ch.sample(20, seed=1)
    f = parse_scalar(f"{a[0]}*x*y + {a[1]}*sin(z) + {a[2]}*exp(y)", ch)
    w = TensorField.from_function(ch, "oneform", lambda i: ScalarField.const(b[i], ch) * parse_scalar("x + y", ch))
    fw = w.scale(f)
    lhs = exterior_derivative(fw)(pts)
    df = exterior_derivative(TensorField(ch, "scalar", (f,)))(pts)
    wv = w(pts)
    wedge = df[:, :, None] * wv[:, None, :] - df[:, None, :] * wv[:, :, None]
    rhs = wedge + f(pts)[:, None, None] * exterior_derivative(w)(pts)
    assert_close(lhs, rhs, 1e-11)
