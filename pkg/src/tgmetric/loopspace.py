"""Discretized loop phase space T*LM with an H-twisted symplectic structure.

A state is ``N`` lattice sites ``x_m``, ``p_m`` on the circle, ``dsigma = 2 pi / N``;
``f_m = (Dx_m, p_m)`` with the periodic central difference
``Dx_m = (x_{m+1} - x_{m-1}) / (2 dsigma)``.

Elementary brackets::

    {x_m^i, p_m'j} = delta^i_j delta_mm' / dsigma
    {p_mi, p_m'j}  = -H_ijk(x_m) Dx_m^k delta_mm' / dsigma

With these signs the smeared currents satisfy, in the continuum limit,
``{J(s1 f1), J(s2 f2)} = -J([s1,s2] f1 f2) - int f1' f2 <s1, s2>``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .courant import CourantData, GeneralizedSection, dorfman, pairing, pairing_matrix
from .dirac import DiracFrame, null_space
from .fields import Chart, ScalarField, parse_scalar

TWO_PI = 2.0 * np.pi
SIGMA_CHART = Chart(("sigma",), ((0.0, TWO_PI),))
FD_STEP = 1e-6


def test_function(text: str) -> ScalarField:
    return parse_scalar(text, SIGMA_CHART)


DEFAULT_TESTFNS = ("1", "cos(sigma)", "sin(sigma)")


@dataclass(frozen=True)
class LoopState:
    x: np.ndarray  # N x n
    p: np.ndarray  # N x n

    def __post_init__(self):
        if self.x.shape != self.p.shape or self.x.ndim != 2:
            raise ValueError("x and p must both be N x n arrays")

    @property
    def N(self) -> int:
        return self.x.shape[0]

    @property
    def n(self) -> int:
        return self.x.shape[1]

    @property
    def dsigma(self) -> float:
        return TWO_PI / self.N

    @property
    def sigma(self) -> np.ndarray:
        return np.arange(self.N) * self.dsigma

    @property
    def Dx(self) -> np.ndarray:
        return (np.roll(self.x, -1, axis=0) - np.roll(self.x, 1, axis=0)) / (2 * self.dsigma)

    @property
    def f(self) -> np.ndarray:
        """``(Dx_m, p_m)`` stacked, N x 2n."""
        return np.hstack([self.Dx, self.p])

    def replace(self, x=None, p=None) -> "LoopState":
        return LoopState(self.x if x is None else x, self.p if p is None else p)


class OutOfChartError(ValueError):
    """A loop leaves the chart box."""


def check_in_box(state: LoopState, chart: Chart):
    for i, (lo, hi) in enumerate(chart.sample_box):
        if np.any(state.x[:, i] < lo) or np.any(state.x[:, i] > hi):
            raise OutOfChartError(f"loop leaves the chart box in coordinate {chart.coord_names[i]!r}")


# ---------------------------------------------------------------- functionals


class Functional:
    """A function of a LoopState.  Subclasses may register exact gradients."""

    exact = False

    def value(self, state: LoopState) -> float:
        raise NotImplementedError

    def gradient(self, state: LoopState) -> tuple[np.ndarray, np.ndarray]:
        return fd_gradient(self, state)

    def __call__(self, state: LoopState) -> float:
        return self.value(state)


def fd_gradient(F: Functional, state: LoopState, step: float = FD_STEP):
    """Central differences in each of the 2nN variables."""
    gx = np.zeros_like(state.x)
    gp = np.zeros_like(state.p)
    for arr, out, name in ((state.x, gx, "x"), (state.p, gp, "p")):
        for idx in np.ndindex(arr.shape):
            up, dn = arr.copy(), arr.copy()
            up[idx] += step
            dn[idx] -= step
            fu = F.value(state.replace(**{name: up}))
            fd = F.value(state.replace(**{name: dn}))
            out[idx] = (fu - fd) / (2 * step)
    if not (np.all(np.isfinite(gx)) and np.all(np.isfinite(gp))):
        raise FloatingPointError("non-finite gradient")
    return gx, gp


class Sampler(Functional):
    """``x_m^i`` or ``p_{m,i}``."""

    exact = True

    def __init__(self, kind: str, m: int, i: int):
        if kind not in ("x", "p"):
            raise ValueError("kind must be 'x' or 'p'")
        self.kind, self.m, self.i = kind, m, i

    def value(self, state):
        return float(getattr(state, self.kind)[self.m, self.i])

    def gradient(self, state):
        gx, gp = np.zeros_like(state.x), np.zeros_like(state.p)
        (gx if self.kind == "x" else gp)[self.m, self.i] = 1.0
        return gx, gp


class Product(Functional):
    exact = True

    def __init__(self, F: Functional, G: Functional):
        self.F, self.G = F, G

    def value(self, state):
        return self.F.value(state) * self.G.value(state)

    def gradient(self, state):
        fv, gv = self.F.value(state), self.G.value(state)
        fx, fp = self.F.gradient(state)
        gx, gp = self.G.gradient(state)
        return fx * gv + fv * gx, fp * gv + fv * gp


class Current(Functional):
    """Smeared current ``sum_m phi(sigma_m) <s(x_m), f_m> dsigma``."""

    exact = True

    def __init__(self, section: GeneralizedSection, testfn: ScalarField | str = "1"):
        self.section = section
        self.testfn = test_function(testfn) if isinstance(testfn, str) else testfn
        names = section.chart.coord_names
        self._dX = [section.X.map(lambda c, v=v: c.diff(v)) for v in names]
        self._da = [section.alpha.map(lambda c, v=v: c.diff(v)) for v in names]

    def _phi(self, state):
        return np.broadcast_to(self.testfn(state.sigma[:, None]), (state.N,))

    def value(self, state):
        X, al = self.section.X(state.x), self.section.alpha(state.x)
        dens = np.sum(al * state.Dx, axis=1) + np.sum(X * state.p, axis=1)
        return float(np.sum(self._phi(state) * dens) * state.dsigma)

    def gradient(self, state):
        ds = state.dsigma
        phi = self._phi(state)
        X, al = self.section.X(state.x), self.section.alpha(state.x)
        gp = phi[:, None] * X * ds
        local = np.stack([np.sum(self._da[k](state.x) * state.Dx, axis=1)
                          + np.sum(self._dX[k](state.x) * state.p, axis=1) for k in range(state.n)], axis=1)
        c = phi[:, None] * al
        gx = phi[:, None] * local * ds + 0.5 * (np.roll(c, 1, axis=0) - np.roll(c, -1, axis=0))
        return gx, gp


class LocalFunctional(Functional):
    """``sum_m density(x_m, Dx_m, p_m) dsigma``.

    Subclasses implement ``density`` (vectorized over sites) and optionally
    ``density_grad`` returning ``(d_x, d_v, d_p)``; otherwise the density is
    differentiated by central differences.
    """

    def density(self, x, v, p) -> np.ndarray:
        raise NotImplementedError

    def density_grad(self, x, v, p):
        h = FD_STEP
        out = []
        for which in range(3):
            args = [x, v, p]
            g = np.zeros_like(args[which])
            for k in range(args[which].shape[1]):
                up = [a.copy() for a in args]
                dn = [a.copy() for a in args]
                up[which][:, k] += h
                dn[which][:, k] -= h
                g[:, k] = (self.density(*up) - self.density(*dn)) / (2 * h)
            out.append(g)
        return tuple(out)

    def value(self, state):
        return float(np.sum(self.density(state.x, state.Dx, state.p)) * state.dsigma)

    def gradient(self, state):
        ds = state.dsigma
        dx, dv, dp = self.density_grad(state.x, state.Dx, state.p)
        gx = dx * ds + 0.5 * (np.roll(dv, 1, axis=0) - np.roll(dv, -1, axis=0))
        return gx, dp * ds


class HamiltonianV(LocalFunctional):
    """``1/2 sum <f_m, R_V f_m> dsigma = 1/2 sum (|p|^2_{g^-1} + |Dx|^2_g) dsigma``."""

    exact = True

    def __init__(self, data: CourantData):
        self.data = data
        names = data.chart.coord_names
        self._dg = [data.g.map(lambda c, v=v: c.diff(v)) for v in names]

    def density(self, x, v, p):
        g = self.data.g(x)
        ginv = np.linalg.inv(g)
        return 0.5 * (np.einsum("mi,mij,mj->m", p, ginv, p) + np.einsum("mi,mij,mj->m", v, g, v))

    def density_grad(self, x, v, p):
        g = self.data.g(x)
        ginv = np.linalg.inv(g)
        gp = ginv @ p[..., None]
        dx = np.stack([
            0.5 * (-np.einsum("mi,mij,mj->m", gp[..., 0], dgk, gp[..., 0]) + np.einsum("mi,mij,mj->m", v, dgk, v))
            for dgk in (d(x) for d in self._dg)], axis=1)
        return dx, np.einsum("mij,mj->mi", g, v), gp[..., 0]


def hamiltonian_V(state: LoopState, data: CourantData) -> float:
    check_in_box(state, data.chart)
    return HamiltonianV(data).value(state)


# ---------------------------------------------------------------- reduced Hamiltonian


def _site_frames(frame: DiracFrame, x: np.ndarray):
    D = frame.matrix(x)  # N x 2n x k
    g = frame.data.g(x)
    return D, g


def reduced_form(frame: DiracFrame, x: np.ndarray, extension: str = "G") -> np.ndarray:
    """Per-site symmetric matrices ``A`` with ``H_W density = 1/2 f^T A f``.

    ``f`` is first projected onto ``D^perp`` (G_V-orthogonally for
    ``extension="G"``, Euclidean-orthogonally for ``"E"``).  On ``D^perp`` the
    form is ``<[f], R_W [f]> = 2 <w, w> - <f, f>`` where ``w`` is the
    pairing-orthogonal component of ``[f]`` along ``W/D``, spanned by
    ``u_+`` for ``u`` in ``Ann(D_+)``.  It vanishes on ``D`` and only depends
    on the class of ``f`` in ``D^perp / D``.
    """
    n, k = frame.n, frame.k
    D, g = _site_frames(frame, x)
    N = len(x)
    Q = pairing_matrix(n)
    ginv = np.linalg.inv(g)
    QD = Q @ D  # N x 2n x k
    if extension == "G":
        Ginv = np.zeros((N, 2 * n, 2 * n))
        Ginv[:, :n, :n] = ginv
        Ginv[:, n:, n:] = g
        comp = Ginv @ QD
    elif extension == "E":
        comp = QD
    else:
        raise ValueError("extension must be 'G' or 'E'")
    # Pi = I - comp (D^T Q comp)^-1 D^T Q
    QDt = np.swapaxes(QD, 1, 2)  # D^T Q
    Pi = np.eye(2 * n) - comp @ np.linalg.solve(QDt @ comp, QDt)
    X, al = D[:, :n], D[:, n:]
    beta_plus = al + g @ X
    if k < n:
        _, _, vt = np.linalg.svd(np.swapaxes(beta_plus, 1, 2))
        U = np.swapaxes(vt[:, k:, :], 1, 2)  # N x n x (n-k)
        Uplus = np.concatenate([U, g @ U], axis=1)
        QU = Q @ Uplus
        M = np.swapaxes(Uplus, 1, 2) @ QU
        core = 2 * QU @ np.linalg.solve(M, np.swapaxes(QU, 1, 2)) - Q
    else:
        core = np.zeros((N, 2 * n, 2 * n))  # D^perp / D = 0
    A = np.swapaxes(Pi, 1, 2) @ core @ Pi
    return 0.5 * (A + np.swapaxes(A, 1, 2))


class HamiltonianW(LocalFunctional):
    """Reduced Hamiltonian, extended off ``D^perp`` by a projection (see :func:`reduced_form`).

    The density is quadratic in ``(Dx, p)``, so the velocity and momentum
    gradients are exact; only the position dependence is differenced.
    """

    def __init__(self, frame: DiracFrame, extension: str = "G", step: float = 1e-4):
        self.frame, self.extension, self.step = frame, extension, step

    def density(self, x, v, p):
        f = np.hstack([v, p])
        A = reduced_form(self.frame, x, self.extension)
        return 0.5 * np.einsum("mi,mij,mj->m", f, A, f)

    def density_grad(self, x, v, p):
        n = x.shape[1]
        f = np.hstack([v, p])
        A = reduced_form(self.frame, x, self.extension)
        Af = np.einsum("mij,mj->mi", A, f)
        h = self.step
        dx = np.zeros_like(x)
        # fourth-order central stencil
        for k in range(n):
            vals = []
            for s in (2, 1, -1, -2):
                xs = x.copy()
                xs[:, k] += s * h
                As = reduced_form(self.frame, xs, self.extension)
                vals.append(0.5 * np.einsum("mi,mij,mj->m", f, As, f))
            dx[:, k] = (-vals[0] + 8 * vals[1] - 8 * vals[2] + vals[3]) / (12 * h)
        return dx, Af[:, :n], Af[:, n:]


def hamiltonian_W(state: LoopState, frame: DiracFrame, extension: str = "G") -> float:
    check_in_box(state, frame.data.chart)
    return HamiltonianW(frame, extension).value(state)


def reduced_density_by_quotient(frame: DiracFrame, x: np.ndarray, f: np.ndarray) -> np.ndarray:
    """Site-by-site ``<Pf, R_W Pf>`` through an explicit complement ``C`` of ``D`` in ``D^perp``.

    Independent of :func:`reduced_form`: builds ``C`` as the G_V-orthocomplement
    of ``D`` inside ``D^perp``, projects ``W`` into ``C`` and reflects there.
    """
    n, k = frame.n, frame.k
    Q = pairing_matrix(n)
    out = np.zeros(len(x))
    for m in range(len(x)):
        D = frame.matrix(x[m])
        g = frame.data.g(x[m])
        G = np.block([[g, np.zeros((n, n))], [np.zeros((n, n)), np.linalg.inv(g)]])
        Dperp = null_space(D.T @ Q)
        # G-orthogonal projection of f onto D^perp
        Pg = Dperp @ np.linalg.solve(Dperp.T @ G @ Dperp, Dperp.T @ G)
        ft = Pg @ f[m]
        # C = {c in D^perp : c^T G D = 0}
        coef = null_space((G @ D).T @ Dperp)
        C = Dperp @ coef
        PC = C @ np.linalg.solve(C.T @ G @ C, C.T @ G)  # G-orthogonal projector onto C
        # P: D^perp -> C along D; D is G-orthogonal to C so PC does it on D^perp
        c = PC @ ft
        beta = D[n:] + g @ D[:n]
        U = null_space(beta.T)
        Wc = PC @ np.vstack([U, g @ U])
        K = C.T @ Q @ C
        cc = np.linalg.lstsq(C, c, rcond=None)[0]
        wc = np.linalg.lstsq(C, Wc, rcond=None)[0]
        proj = wc @ np.linalg.solve(wc.T @ K @ wc, wc.T @ K)
        R = 2 * proj - np.eye(len(cc))
        out[m] = cc @ K @ R @ cc
    return out


# ---------------------------------------------------------------- Poisson bracket


def poisson_bracket(F: Functional, G: Functional, state: LoopState, data: CourantData) -> float:
    fx, fp = F.gradient(state)
    gx, gp = G.gradient(state)
    ds = state.dsigma
    val = np.sum(fx * gp - fp * gx) / ds
    if not data.H.is_zero():
        Hx = data.H(state.x)  # N x n x n x n
        twist = -np.einsum("mijk,mk->mij", Hx, state.Dx)
        val += np.einsum("mi,mij,mj->", fp, twist, gp) / ds
    return float(val)


# ---------------------------------------------------------------- constraint states


def loop_positions(loop: Sequence[ScalarField | str], N: int) -> np.ndarray:
    fields = [test_function(t) if isinstance(t, str) else t for t in loop]
    sigma = np.arange(N) * (TWO_PI / N)
    return np.stack([np.broadcast_to(f(sigma[:, None]), (N,)) for f in fields], axis=1).astype(float)


def constraint_state(frame: DiracFrame, loop, N: int, seed: int = 0,
                     homogeneous_scale: float = 0.5, modes: int = 2) -> LoopState:
    """A state on ``{f_m in D^perp}``: ``alpha_a(Dx_m) + p_m(X_a) = 0`` at every site.

    Least-norm particular solution plus a smooth seeded homogeneous part
    (low Fourier modes projected onto ``ker X^T``).
    """
    x = loop_positions(loop, N)
    state0 = LoopState(x, np.zeros_like(x))
    check_in_box(state0, frame.data.chart)
    Dx = state0.Dx
    Xm = frame.anchor_matrix(x)  # N x n x k
    Am = frame.alpha_matrix(x)
    rhs = -np.einsum("mik,mi->mk", Am, Dx)
    n = frame.n
    p = np.zeros_like(x)
    rng = np.random.default_rng(seed)
    coeffs = rng.standard_normal((2 * modes + 1, n)) * homogeneous_scale
    sig = state0.sigma
    basis = [np.ones(N)] + [f(j * sig) for j in range(1, modes + 1) for f in (np.cos, np.sin)]
    q = sum(c[None, :] * b[:, None] for c, b in zip(coeffs, basis))
    for m in range(N):
        XT = Xm[m].T
        part, *_ = np.linalg.lstsq(XT, rhs[m], rcond=None)
        if np.linalg.norm(XT @ part - rhs[m]) > 1e-10:
            raise ValueError(f"inconsistent constraints at site {m}")
        ns = null_space(XT)
        p[m] = part + ns @ (ns.T @ q[m])
    state = LoopState(x, p)
    resid = constraint_residual(frame, state)
    if resid > 1e-10:
        raise ValueError(f"constraint residual {resid:.3g} exceeds 1e-10")
    return state


def constraint_residual(frame: DiracFrame, state: LoopState) -> float:
    D = frame.matrix(state.x)
    Q = pairing_matrix(frame.n)
    return float(np.max(np.abs(np.einsum("mi,ij,mjk->mk", state.f, Q, D))))


# ---------------------------------------------------------------- studies


def _order(values: Sequence[float]) -> list[float | None]:
    out = []
    for a, b in zip(values, values[1:]):
        out.append(float(np.log2(a / b)) if a > 0 and b > 0 else None)
    return out


@dataclass
class GaugeStudy:
    N_list: list[int]
    max_b: list[float]
    max_b_euclidean: list[float]
    orders: list[float | None]
    per_current: dict = field(default_factory=dict)

    @property
    def extension_gap(self) -> float:
        return max(abs(a - b) for a, b in zip(self.max_b, self.max_b_euclidean))

    def as_dict(self) -> dict:
        return {"N": self.N_list, "max_b": self.max_b, "max_b_euclidean": self.max_b_euclidean,
                "orders": self.orders, "extension_gap": self.extension_gap}


def gauge_invariance_study(frame: DiracFrame, loop, N_list=(64, 128, 256), seed: int = 0,
                           testfns: Sequence[str] = DEFAULT_TESTFNS) -> GaugeStudy:
    """``max |{mu*(s phi), H_W}|`` on constraint states over frame generators and test functions."""
    maxes, maxes_e, per = [], [], {}
    for N in N_list:
        state = constraint_state(frame, loop, N, seed)
        HW, HE = HamiltonianW(frame, "G"), HamiltonianW(frame, "E")
        worst = worst_e = 0.0
        for a, s in enumerate(frame.sections):
            for t in testfns:
                J = Current(s, t)
                b = poisson_bracket(J, HW, state, frame.data)
                be = poisson_bracket(J, HE, state, frame.data)
                per[f"N={N},a={a},phi={t}"] = b
                worst, worst_e = max(worst, abs(b)), max(worst_e, abs(be))
        maxes.append(worst)
        maxes_e.append(worst_e)
    return GaugeStudy(list(N_list), maxes, maxes_e, _order(maxes), per)


def closure_residual(s1: GeneralizedSection, s2: GeneralizedSection, phi1: str, phi2: str,
                     state: LoopState, data: CourantData) -> tuple[float, float]:
    """``{J(s1 f1), J(s2 f2)} + J([s1,s2] f1 f2) + int f1' f2 <s1,s2>`` and the anomaly integral."""
    f1, f2 = test_function(phi1), test_function(phi2)
    lhs = poisson_bracket(Current(s1, f1), Current(s2, f2), state, data)
    br = Current(dorfman(s1, s2, data), f1 * f2).value(state)
    sig = state.sigma[:, None]
    df1 = np.broadcast_to(f1.diff("sigma")(sig), (state.N,))
    pv = np.broadcast_to(pairing(s1, s2)(state.x), (state.N,))
    anomaly = float(np.sum(df1 * np.broadcast_to(f2(sig), (state.N,)) * pv) * state.dsigma)
    return lhs + br + anomaly, anomaly


@dataclass
class ClosureStudy:
    N_list: list[int]
    max_residual: list[float]
    max_anomaly: float
    orders: list[float | None]

    def as_dict(self):
        return {"N": self.N_list, "max_residual": self.max_residual,
                "max_anomaly": self.max_anomaly, "orders": self.orders}


def closure_study(frame: DiracFrame, loop, N_list=(64, 128, 256), seed: int = 0,
                  testfns: Sequence[str] = DEFAULT_TESTFNS) -> ClosureStudy:
    res, anom = [], 0.0
    for N in N_list:
        state = constraint_state(frame, loop, N, seed)
        worst = 0.0
        for s1 in frame.sections:
            for s2 in frame.sections:
                for t1 in testfns:
                    for t2 in testfns:
                        r, a = closure_residual(s1, s2, t1, t2, state, frame.data)
                        worst, anom = max(worst, abs(r)), max(anom, abs(a))
        res.append(worst)
    return ClosureStudy(list(N_list), res, anom, _order(res))


def control_pair(data: CourantData, loop, N: int, seed: int = 0) -> dict:
    """Closure data for the non-isotropic pair ``(d_1, 0) cos``, ``(0, dx^1) sin``.

    The sections pair to 1, so the anomaly integral tends to ``-pi`` and the
    bracket to ``+pi``; their sum is the closure residual.
    """
    ch = data.chart
    n = ch.dim
    e1 = ["1"] + ["0"] * (n - 1)
    z = ["0"] * n
    s1 = GeneralizedSection.from_strings(ch, e1, z)
    s2 = GeneralizedSection.from_strings(ch, z, e1)
    x = loop_positions(loop, N)
    rng = np.random.default_rng(seed)
    state = LoopState(x, rng.standard_normal(x.shape) * 0.1)
    bracket = poisson_bracket(Current(s1, "cos(sigma)"), Current(s2, "sin(sigma)"), state, data)
    residual, anomaly = closure_residual(s1, s2, "cos(sigma)", "sin(sigma)", state, data)
    return {"bracket": bracket, "anomaly": anomaly, "residual": residual}
