"""Dirac-Riemannian foliations: the transversality test, connections, quotient data.

For a frame ``e_a = (X_a, alpha_a)`` of D the test tensor is

    T_a = L_{X_a} g + i_{X_a} H - d alpha_a      (full n x n, T_ij = T(d_i, d_j))

and ``V_D = D + (D^perp cap V)`` is D-transverse iff every ``T_a`` lies in
``D_+ (x) T*M + T*M (x) D_-`` with ``D_pm = span(alpha_a pm i_{X_a} g)``.
Two independent routes decide this: a least-squares solve for the connection
one-forms ``omega^pm`` (:func:`membership_solve`) and the contraction of
``T_a`` with annihilator bases (:func:`bracket_oracle`).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .courant import (
    CourantData,
    GeneralizedSection,
    b_transform_data,
    b_transform_section,
    pairing_matrix,
)
from .dirac import DiracFrame, FrameError, PointFrameData, point_frame
from .fields import (
    Chart,
    ScalarField,
    TensorField,
    christoffel_at,
    exterior_derivative,
    interior_product,
    lie_derivative,
    symbolic_inverse,
)

TOL_PASS = 1e-9
TOL_FAIL = 1e-6


def lemma_tensor(frame: DiracFrame) -> list[TensorField]:
    out = []
    H = frame.data.H
    for s in frame.sections:
        T = lie_derivative(s.X, frame.data.g).as_bilinear()
        T = T - exterior_derivative(s.alpha).as_bilinear()
        if not H.is_zero():
            T = T + interior_product(s.X, H).as_bilinear()
        out.append(T)
    return out


def design_matrix(pfd: PointFrameData) -> np.ndarray:
    """Linear map ``(w+, w-) -> sum_b beta+_b (x) w+_b - w-_b (x) beta-_b`` as an n^2 x 2kn matrix.

    Unknown ordering: ``w+[b, l]`` then ``w-[b, l]``, row-major; rows are ``(i, j)`` row-major.
    """
    n, k = pfd.beta_plus.shape
    eye = np.eye(n)
    plus = np.einsum("ib,jl->ijbl", pfd.beta_plus, eye).reshape(n * n, k * n)
    minus = -np.einsum("il,jb->ijbl", eye, pfd.beta_minus).reshape(n * n, k * n)
    return np.hstack([plus, minus])


@dataclass
class MembershipSolution:
    omega_plus: np.ndarray  # k x n: omega+_a^b as covectors, indexed [b, j]
    omega_minus: np.ndarray
    residual: float
    rank: int


def membership_solve(T: np.ndarray, pfd: PointFrameData) -> MembershipSolution:
    """Minimum-norm least squares for one generator's ``T_a(p)``."""
    n, k = pfd.beta_plus.shape
    A = design_matrix(pfd)
    sol, _, rank, _ = np.linalg.lstsq(A, T.reshape(-1), rcond=None)
    resid = float(np.linalg.norm(A @ sol - T.reshape(-1)))
    return MembershipSolution(sol[: k * n].reshape(k, n), sol[k * n:].reshape(k, n), resid, int(rank))


def local_form(wp: np.ndarray, wm: np.ndarray, pfd: PointFrameData) -> np.ndarray:
    """``sum_b beta+_b (x) w+_b - w-_b (x) beta-_b`` as an n x n array."""
    return np.einsum("ib,bj->ij", pfd.beta_plus, wp) - np.einsum("bi,jb->ij", wm, pfd.beta_minus)


@dataclass
class ConnectionTable:
    """Per-point connection one-forms: ``omega_plus[p, a, b, j]`` is ``(omega+)_a^b`` component j."""

    points: np.ndarray
    omega_plus: np.ndarray
    omega_minus: np.ndarray
    residual: np.ndarray  # [p, a]

    @property
    def nabla(self) -> np.ndarray:
        return 0.5 * (self.omega_plus + self.omega_minus)

    @property
    def phi(self) -> np.ndarray:
        return 0.5 * (self.omega_plus - self.omega_minus)

    def continuity(self) -> float:
        """Largest jump of omega between nearest-neighbour sample points (information only)."""
        if len(self.points) < 2:
            return 0.0
        d = np.linalg.norm(self.points[:, None] - self.points[None], axis=-1)
        np.fill_diagonal(d, np.inf)
        nn = np.argmin(d, axis=1)
        jump = np.abs(self.omega_plus - self.omega_plus[nn]) + np.abs(self.omega_minus - self.omega_minus[nn])
        return float(np.max(jump)) if jump.size else 0.0


def solve_connections(frame: DiracFrame, points, tensors=None) -> ConnectionTable:
    pts = np.atleast_2d(points)
    tensors = tensors or lemma_tensor(frame)
    Tvals = np.stack([T(pts) for T in tensors], axis=1)  # [p, a, i, j]
    k, n = frame.k, frame.n
    wp = np.zeros((len(pts), k, k, n))
    wm = np.zeros_like(wp)
    res = np.zeros((len(pts), k))
    for p, x in enumerate(pts):
        pfd = point_frame(frame, x)
        for a in range(k):
            sol = membership_solve(Tvals[p, a], pfd)
            wp[p, a], wm[p, a], res[p, a] = sol.omega_plus, sol.omega_minus, sol.residual
    return ConnectionTable(pts, wp, wm, res)


def bracket_oracle(frame: DiracFrame, points, tensors=None) -> float:
    """``max |T_a(u, v)|`` over orthonormal ``u in Ann(D_+)``, ``v in Ann(D_-)``.

    Equals ``max |<[e_a, u_+], v_->|`` with ``u_+, v_-`` in ``D^perp``.
    """
    pts = np.atleast_2d(points)
    tensors = tensors or lemma_tensor(frame)
    Tvals = np.stack([T(pts) for T in tensors], axis=1)
    worst = 0.0
    for p, x in enumerate(pts):
        pfd = point_frame(frame, x)
        if pfd.ann_plus.shape[1] == 0:
            continue
        vals = np.einsum("iu,aij,jv->auv", pfd.ann_plus, Tvals[p], pfd.ann_minus)
        worst = max(worst, float(np.max(np.abs(vals))))
    return worst


def check_eqs12(frame: DiracFrame, table: ConnectionTable) -> dict:
    """Residuals of the two compatibility equations for the connections in ``table``.

    With ``rho_bar_a = i_{X_a} g``, ``nabla = (omega+ + omega-)/2``, ``phi = (omega+ - omega-)/2``::

        M+_aij = d_i rb_aj - G^k_ij rb_ak - nabla_ai^b rb_bj - phi_ai^b alpha_bj
        M-_aij = d_i al_aj - G^k_ij al_ak - nabla_ai^b al_bj - phi_ai^b rb_bj - 1/2 X_a^k H_kij

    eq1 = max |Sym M+|, eq2 = max |Alt M-| with ``Sym/Alt T = (T_ij +- T_ji)/2``.
    """
    data = frame.data
    pts = table.points
    names = data.chart.coord_names
    n = data.n
    gamma = christoffel_at(data.g, pts)  # [p, k, i, j]
    gval = data.g(pts)
    Xv = np.stack([s.X(pts) for s in frame.sections], axis=1)  # [p, a, i]
    al = np.stack([s.alpha(pts) for s in frame.sections], axis=1)
    rb = np.einsum("pij,paj->pai", gval, Xv)

    def grad(tf: TensorField):
        return np.stack([tf.map(lambda c, v=v: c.diff(v))(pts) for v in names], axis=1)  # [p, i(deriv), j]

    dg = grad(data.g)  # [p, l, i, j] = d_l g_ij
    dX = np.stack([grad(s.X) for s in frame.sections], axis=1)  # [p, a, i, j] = d_i X^j
    d_rb = np.einsum("pakj,pjm->pakm", dX, gval) + np.einsum("paj,pkjm->pakm", Xv, dg)
    d_al = np.stack([grad(s.alpha) for s in frame.sections], axis=1)
    Hval = data.H(pts)
    iXH = np.einsum("pak,pkij->paij", Xv, Hval)
    nab, phi = table.nabla, table.phi  # [p, a, b, i]

    Mp = d_rb - np.einsum("pkij,pak->paij", gamma, rb) - np.einsum("pabi,pbj->paij", nab, rb) \
        - np.einsum("pabi,pbj->paij", phi, al)
    Mm = d_al - np.einsum("pkij,pak->paij", gamma, al) - np.einsum("pabi,pbj->paij", nab, al) \
        - np.einsum("pabi,pbj->paij", phi, rb) - 0.5 * iXH
    sym = 0.5 * (Mp + Mp.swapaxes(-1, -2))
    alt = 0.5 * (Mm - Mm.swapaxes(-1, -2))
    return {"eq1_max": float(np.max(np.abs(sym))), "eq2_max": float(np.max(np.abs(alt))),
            "eq1_per_point": np.max(np.abs(sym), axis=(1, 2, 3)).tolist(),
            "eq2_per_point": np.max(np.abs(alt), axis=(1, 2, 3)).tolist()}


def zero_connections(frame: DiracFrame, points) -> ConnectionTable:
    pts = np.atleast_2d(points)
    z = np.zeros((len(pts), frame.k, frame.k, frame.n))
    return ConnectionTable(pts, z, z.copy(), np.zeros((len(pts), frame.k)))


def classify(value: float, tol_pass: float, tol_fail: float) -> str:
    if value <= tol_pass:
        return "transverse"
    if value >= tol_fail:
        return "not_transverse"
    return "inconclusive"


@dataclass
class TransverseReport:
    lemma_max_residual: float
    oracle_max: float
    lemma_verdict: str
    oracle_verdict: str
    verdict: str
    eq12: dict | None
    table: ConnectionTable
    tol_pass: float
    tol_fail: float
    diagnostics: dict = field(default_factory=dict)

    @property
    def routes_agree(self) -> bool:
        return self.lemma_verdict == self.oracle_verdict

    def as_dict(self) -> dict:
        out = {
            "verdict": self.verdict,
            "lemma_max_residual": self.lemma_max_residual,
            "oracle_max": self.oracle_max,
            "lemma_verdict": self.lemma_verdict,
            "oracle_verdict": self.oracle_verdict,
            "routes_agree": self.routes_agree,
            "tolerances": {"pass": self.tol_pass, "fail": self.tol_fail},
            "meaning": ("transverse certifies that the sigma model with target data (g, H) "
                        "can be gauged along D" if self.verdict == "transverse" else
                        "no connections satisfying the compatibility equations exist"),
            **self.diagnostics,
        }
        if self.eq12 is not None:
            out["eq12"] = {"eq1_max": self.eq12["eq1_max"], "eq2_max": self.eq12["eq2_max"]}
        return out


def transverse_check(frame: DiracFrame, points, tol_pass: float = TOL_PASS,
                     tol_fail: float = TOL_FAIL) -> TransverseReport:
    pts = np.atleast_2d(points)
    tensors = lemma_tensor(frame)
    table = solve_connections(frame, pts, tensors)
    lemma_max = float(np.max(table.residual))
    oracle = bracket_oracle(frame, pts, tensors)
    lv, ov = classify(lemma_max, tol_pass, tol_fail), classify(oracle, tol_pass, tol_fail)
    if lv == ov:
        verdict = lv
    elif "inconclusive" in (lv, ov):
        verdict = "inconclusive"
    else:
        verdict = "inconclusive"  # routes disagree; flagged in diagnostics
    eq12 = check_eqs12(frame, table) if verdict == "transverse" else None
    omega_norm = float(max(np.max(np.abs(table.omega_plus)), np.max(np.abs(table.omega_minus))))
    diag = {"omega_max_abs": omega_norm, "omega_continuity": table.continuity(),
            "samples": len(pts)}
    return TransverseReport(lemma_max, oracle, lv, ov, verdict, eq12, table, tol_pass, tol_fail, diag)


# ---------------------------------------------------------------- V_D


@dataclass
class VDBasis:
    basis: np.ndarray  # 2n x n: k frame columns then n-k columns u_+
    rank: int
    in_Dperp: float  # max |<e_a, w>| over basis columns w
    min_positive: float  # smallest eigenvalue of the pairing on the u_+ block
    cross: float  # max |<e_a, u_+>|

    @property
    def ok(self) -> bool:
        return self.rank == self.basis.shape[0] // 2 and self.in_Dperp <= 1e-10 and self.min_positive > 0


def build_VD(frame: DiracFrame, p) -> VDBasis:
    pfd = point_frame(frame, p)
    n = frame.n
    U = pfd.ann_plus
    uplus = np.vstack([U, pfd.g @ U])
    basis = np.hstack([pfd.D_mat, uplus])
    rank = int(np.linalg.matrix_rank(basis, tol=1e-10))
    if rank != n:
        raise FrameError(f"V_D has rank {rank} != {n} at {np.asarray(p).tolist()}")
    Q = pairing_matrix(n)
    in_perp = float(np.max(np.abs(pfd.D_mat.T @ Q @ basis)))
    block = uplus.T @ Q @ uplus
    min_pos = float(np.min(np.linalg.eigvalsh(block))) if block.size else np.inf
    return VDBasis(basis, rank, in_perp, min_pos, float(np.max(np.abs(pfd.D_mat.T @ Q @ uplus), initial=0.0)))


# ---------------------------------------------------------------- quotient


class BasicnessError(ValueError):
    def __init__(self, message: str, violation: float):
        super().__init__(message)
        self.violation = violation


@dataclass
class QuotientResult:
    h: TensorField
    H_prime: TensorField
    flattened: tuple[GeneralizedSection, ...]
    leaf_coords: tuple[str, ...]
    violations: dict
    quotient_chart: Chart | None
    g_Q: TensorField | None
    H_Q: TensorField | None

    @property
    def basic_violation(self) -> float:
        return max(self.violations.values())


def _bilinear_apply(E: TensorField, u: TensorField, v: TensorField, chart) -> ScalarField:
    n = E.n
    acc = ScalarField.const(0.0, chart)
    for i in range(n):
        for j in range(n):
            if u[i].is_zero() or v[j].is_zero() or E[i, j].is_zero():
                continue
            acc = acc + u[i] * E[i, j] * v[j]
    return acc


def graph_form(frame: DiracFrame, B: TensorField | None) -> TensorField:
    """The 2-tensor whose graph is ``e^B(V_D)``: ``E - E(., X_b) K^{ba} E(X_a, .)``, ``E = g + B``."""
    data = frame.data
    ch, n, k = data.chart, data.n, frame.k
    E = TensorField.from_function(
        ch, "bilinear", lambda i, j: data.g[i, j] + (B[i, j] if B is not None else 0.0))
    Xs = [s.X for s in frame.sections]
    K = [[_bilinear_apply(E, Xs[a], Xs[b], ch) for b in range(k)] for a in range(k)]
    Kinv = symbolic_inverse(K, ch)

    def left(i, b):  # E(e_i, X_b)
        return sum((E[i, j] * Xs[b][j] for j in range(n)), ScalarField.const(0.0, ch))

    def right(a, j):  # E(X_a, e_j)
        return sum((Xs[a][i] * E[i, j] for i in range(n)), ScalarField.const(0.0, ch))

    L = [[left(i, b) for b in range(k)] for i in range(n)]
    R = [[right(a, j) for j in range(n)] for a in range(k)]

    def comp(i, j):
        acc = E[i, j]
        for a in range(k):
            for b in range(k):
                acc = acc - L[i][b] * Kinv[b][a] * R[a][j]
        return acc

    return TensorField.from_function(ch, "bilinear", comp)


def quotient_extract(frame: DiracFrame, leaf_coords, flattening_B: TensorField | None,
                     points, tol: float = 1e-10) -> QuotientResult:
    """Quotient metric and 3-form for a projectable frame in adapted coordinates.

    Raises :class:`BasicnessError` when h or H' fail to descend along the leaves.
    """
    data = frame.data
    ch, n = data.chart, data.n
    pts = np.atleast_2d(points)
    leaf = tuple(leaf_coords)
    if len(leaf) != frame.k:
        raise ValueError(f"{len(leaf)} leaf coordinates for a rank-{frame.k} frame")
    leaf_idx = [ch.index(c) for c in leaf]
    base = [c for c in ch.coord_names if c not in leaf]
    base_idx = [ch.index(c) for c in base]

    smin = np.linalg.svd(frame.anchor_matrix(pts), compute_uv=False)[..., -1].min()
    if smin < 1e-8:
        raise BasicnessError("frame is not projectable (anchor not injective)", float("inf"))
    Xv = frame.anchor_matrix(pts)
    adapted = float(np.max(np.abs(Xv[:, base_idx, :]), initial=0.0))
    if adapted > tol:
        raise BasicnessError(f"anchors are not tangent to the leaf coordinates {leaf}", adapted)

    if flattening_B is not None:
        flat = tuple(b_transform_section(flattening_B, s) for s in frame.sections)
        data2 = b_transform_data(flattening_B, data)
    else:
        flat, data2 = frame.sections, data
    alpha_left = max(float(np.max(np.abs(s.alpha(pts)))) for s in flat)
    if alpha_left > tol:
        raise BasicnessError("flattening_B does not bring D to the form (X, 0)", alpha_left)

    h = graph_form(frame, flattening_B)
    Hp = data2.H
    violations = {}
    hv = h(pts)
    violations["h_antisymmetric"] = float(np.max(np.abs(hv - hv.swapaxes(-1, -2))))
    violations["d_leaf_h"] = max(float(np.max(np.abs(h.map(lambda c, v=v: c.diff(v))(pts)))) for v in leaf)
    violations["d_leaf_H"] = 0.0 if Hp.is_zero() else max(
        float(np.max(np.abs(Hp.map(lambda c, v=v: c.diff(v))(pts)))) for v in leaf)
    hs = TensorField.from_function(
        ch, "symbilinear", lambda i, j: h[i, j] if h[i, j].node == h[j, i].node else (h[i, j] + h[j, i]) * 0.5)
    iota_h = iota_H = lie_h = lie_H = 0.0
    for s in flat:
        iota_h = max(iota_h, float(np.max(np.abs(interior_product(s.X, hs)(pts)))))
        lie_h = max(lie_h, float(np.max(np.abs(lie_derivative(s.X, hs)(pts)))))
        if not Hp.is_zero():
            iota_H = max(iota_H, float(np.max(np.abs(interior_product(s.X, Hp)(pts)))))
            lie_H = max(lie_H, float(np.max(np.abs(lie_derivative(s.X, Hp)(pts)))))
    violations.update({"iota_X_h": iota_h, "lie_X_h": lie_h, "iota_X_H": iota_H, "lie_X_H": lie_H})

    worst = max(violations.values())
    if worst > tol:
        key = max(violations, key=violations.get)
        raise BasicnessError(f"quotient data is not basic: {key} = {worst:.6g}", worst)

    qchart = ch.restrict(base) if base else None
    g_Q = H_Q = None
    if qchart is not None:
        mid = {c: 0.5 * sum(ch.sample_box[ch.index(c)]) for c in leaf}
        m = len(base)
        g_Q = TensorField.from_function(
            qchart, "symbilinear", lambda i, j: hs[base_idx[i], base_idx[j]].substitute(mid, qchart))
        if m >= 3:
            H_Q = TensorField.from_function(
                qchart, "threeform",
                lambda i, j, l: Hp[base_idx[i], base_idx[j], base_idx[l]].substitute(mid, qchart))
    return QuotientResult(hs, Hp, tuple(flat), leaf, violations, qchart, g_Q, H_Q)
