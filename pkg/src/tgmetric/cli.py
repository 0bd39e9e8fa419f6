"""Command line entry point: ``tgmetric check|quotient|loops <scenario>``.

Exit codes: 0 every check passed, 1 a check failed, 2 inconclusive, 3 input error.
``TGMETRIC_THREADS`` caps the BLAS/OpenMP thread pools.
"""
from __future__ import annotations

import argparse
import os
import sys
import time
from contextlib import contextmanager, nullcontext
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import loopspace as L
from .dirac import FrameError, dirac_checks
from .expr import ExpressionError
from .fields import TensorField
from .report import EXIT_INPUT_ERROR, Report, render_text
from .scenario import Scenario, ScenarioError, load_scenario
from .transverse import BasicnessError, check_eqs12, quotient_extract, transverse_check, zero_connections

EQ12_TOL = 1e-8
GAUGE_EXACT_TOL = 1e-8
CLOSURE_EXACT_TOL = 1e-10
ANOMALY_TOL = 1e-10
EXTENSION_TOL = 1e-8
MIN_ORDER = 1.0


class InputError(Exception):
    pass


@contextmanager
def _timed(report: Report, name: str):
    t0 = time.perf_counter()
    yield
    report.timings[name] = time.perf_counter() - t0


def component_strings(tf: TensorField | None) -> dict | None:
    """Independent components as expression strings keyed by coordinate names."""
    if tf is None:
        return None
    names = tf.chart.coord_names
    sep = "" if all(len(c) == 1 for c in names) else ","
    out = {}
    for idx, comp in tf.items():
        out[sep.join(names[i] for i in idx)] = str(comp)
    return out


def _points(sc: Scenario, args):
    return sc.points(args.samples, args.seed)


# ---------------------------------------------------------------- commands


def cmd_check(sc: Scenario, args) -> Report:
    tol_pass = sc.tolerances.pass_ if args.tol_pass is None else args.tol_pass
    tol_fail = sc.tolerances.fail if args.tol_fail is None else args.tol_fail
    if not tol_pass < tol_fail:
        raise InputError("--tol-pass must be below --tol-fail")
    pts = _points(sc, args)
    rep = Report("check", sc.name, {"samples": len(pts), "seed": args.seed if args.seed is not None
                                    else sc.sample.seed, "tol_pass": tol_pass, "tol_fail": tol_fail})

    with _timed(rep, "data"):
        d = sc.data.check(pts)
    rep.add("data", "pass" if d.pop("passed") else "fail", **d)

    with _timed(rep, "dirac"):
        checks = dirac_checks(sc.frame, pts)
    is_dirac = all(c.passed for c in checks.values())
    rep.add("dirac", "pass" if is_dirac else "fail", **{k: c.as_dict() for k, c in checks.items()})
    if not is_dirac:
        rep.add("transverse", "skipped", reason="frame does not span a regular small Dirac structure")
        rep.add("eqs12", "skipped", reason="no Dirac structure")
        return rep

    with _timed(rep, "transverse"):
        tr = transverse_check(sc.frame, pts, tol_pass, tol_fail)
    status = {"transverse": "pass", "not_transverse": "fail"}.get(tr.verdict, "inconclusive")
    table = tr.table
    body = tr.as_dict()
    body.pop("eq12", None)
    body["omega_plus_max_abs"] = float(np.max(np.abs(table.omega_plus)))
    body["omega_minus_max_abs"] = float(np.max(np.abs(table.omega_minus)))
    body["omega_at_first_point"] = {"point": table.points[0], "omega_plus": table.omega_plus[0],
                                    "omega_minus": table.omega_minus[0]}
    rep.add("transverse", status, **body)

    if tr.eq12 is None:
        rep.add("eqs12", "skipped", reason=f"verdict is {tr.verdict}")
        return rep
    with _timed(rep, "eqs12"):
        zero = check_eqs12(sc.frame, zero_connections(sc.frame, pts))
    worst = max(tr.eq12["eq1_max"], tr.eq12["eq2_max"])
    rep.add("eqs12", "pass" if worst <= EQ12_TOL else "fail",
            eq1_max=tr.eq12["eq1_max"], eq2_max=tr.eq12["eq2_max"], tolerance=EQ12_TOL,
            zero_connection={"eq1_max": zero["eq1_max"], "eq2_max": zero["eq2_max"]})
    return rep


def cmd_quotient(sc: Scenario, args) -> Report:
    if sc.leaf_coords is None:
        raise InputError("scenario has no [quotient] section (leaf_coords)")
    pts = _points(sc, args)
    rep = Report("quotient", sc.name, {"samples": len(pts), "leaf_coords": list(sc.leaf_coords),
                                       "flattening_B": component_strings(sc.flattening_B)})
    with _timed(rep, "quotient"):
        try:
            q = quotient_extract(sc.frame, sc.leaf_coords, sc.flattening_B, pts)
        except BasicnessError as exc:
            rep.add("quotient", "fail", reason=str(exc), basic_violation=exc.violation)
            return rep
    rep.add("quotient", "pass", basic_violation=q.basic_violation, violations=q.violations,
            quotient_coords=list(q.quotient_chart.coord_names) if q.quotient_chart else [],
            g_Q=component_strings(q.g_Q), H_Q=component_strings(q.H_Q),
            H_prime_max=float(np.max(np.abs(q.H_prime(pts)))))
    return rep


def _order_ok(values, orders, exact_tol) -> tuple[bool, str]:
    if max(values) <= exact_tol:
        return True, "exact"
    last = orders[-1]
    return (last is not None and last >= MIN_ORDER and values[-1] < values[0]), "convergent"


def cmd_loops(sc: Scenario, args) -> Report:
    if sc.loop is None:
        raise InputError("scenario has no [loop] section")
    Ns = args.N
    seed = sc.sample.seed if args.seed is None else args.seed
    frame = sc.frame
    rep = Report("loops", sc.name, {"N": Ns, "seed": seed, "loop": list(sc.loop),
                                    "test_functions": list(L.DEFAULT_TESTFNS)})
    pts = sc.points()
    checks = dirac_checks(frame, pts)
    if not all(c.passed for c in checks.values()):
        rep.add("dirac", "fail", **{k: c.as_dict() for k, c in checks.items()})
        return rep
    tr = transverse_check(frame, pts, sc.tolerances.pass_, sc.tolerances.fail)

    with _timed(rep, "hamiltonians"):
        rows = []
        for N in Ns:
            st = L.constraint_state(frame, sc.loop, N, seed)
            rows.append({"N": N, "H_V": L.hamiltonian_V(st, sc.data), "H_W": L.hamiltonian_W(st, frame),
                         "constraint_residual": L.constraint_residual(frame, st)})
    rep.add("hamiltonians", "pass", N=[r["N"] for r in rows], H_V=[r["H_V"] for r in rows],
            H_W=[r["H_W"] for r in rows], constraint_residual=[r["constraint_residual"] for r in rows])

    with _timed(rep, "gauge"):
        gs = L.gauge_invariance_study(frame, sc.loop, Ns, seed)
    ok, mode = _order_ok(gs.max_b, gs.orders, GAUGE_EXACT_TOL)
    gauge_body = {**gs.as_dict(), "mode": mode, "transverse_verdict": tr.verdict}
    if tr.verdict == "transverse":
        status = "pass" if ok and gs.extension_gap <= EXTENSION_TOL else "fail"
    else:
        # W is not D-transverse: the bracket is expected to plateau away from zero
        status = "fail" if tr.verdict == "not_transverse" else "inconclusive"
        gauge_body["mode"] = "plateau"
        gauge_body["plateau_ratio"] = gs.max_b[-1] / gs.max_b[0] if gs.max_b[0] > 0 else None
    rep.add("gauge", status, **gauge_body)

    with _timed(rep, "closure"):
        cs = L.closure_study(frame, sc.loop, Ns, seed)
    ok, mode = _order_ok(cs.max_residual, cs.orders, CLOSURE_EXACT_TOL)
    rep.add("closure", "pass" if ok and cs.max_anomaly <= ANOMALY_TOL else "fail",
            **cs.as_dict(), mode=mode)

    with _timed(rep, "control_pair"):
        ctrl = [L.control_pair(sc.data, sc.loop, N, seed) for N in Ns]
    rep.add("control_pair", "pass", N=Ns, bracket=[c["bracket"] for c in ctrl],
            anomaly=[c["anomaly"] for c in ctrl], residual=[c["residual"] for c in ctrl],
            note="non-isotropic pair (d_1,0) cos, (0,dx^1) sin; the anomaly term does not vanish")
    return rep


COMMANDS = {"check": cmd_check, "quotient": cmd_quotient, "loops": cmd_loops}


# ---------------------------------------------------------------- argument handling


def _n_list(text: str) -> list[int]:
    try:
        vals = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated integers, got {text!r}") from None
    if not vals or any(v < 8 for v in vals):
        raise argparse.ArgumentTypeError("loop resolutions must be integers >= 8")
    return vals


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tgmetric", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("scenario", type=Path)
        p.add_argument("--json", type=Path, default=None, help="write the JSON report here")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--quiet", action="store_true", help="suppress the text summary")

    p = sub.add_parser("check", help="Dirac axioms, transversality verdict, compatibility equations")
    common(p)
    p.add_argument("--samples", type=int, default=None)
    p.add_argument("--tol-pass", type=float, default=None)
    p.add_argument("--tol-fail", type=float, default=None)

    p = sub.add_parser("quotient", help="quotient metric and 3-form in adapted coordinates")
    common(p)
    p.add_argument("--samples", type=int, default=None)

    p = sub.add_parser("loops", help="loop space constraint and reduced Hamiltonian study")
    common(p)
    p.add_argument("--N", type=_n_list, default=[64, 128, 256])
    return parser


def _thread_limit():
    raw = os.environ.get("TGMETRIC_THREADS")
    if raw is None or raw == "":
        return nullcontext()
    try:
        count = int(raw)
    except ValueError:
        raise InputError(f"TGMETRIC_THREADS must be a positive integer, got {raw!r}") from None
    if count < 1:
        raise InputError(f"TGMETRIC_THREADS must be a positive integer, got {raw!r}")
    return threadpool_limits(limits=count)


def run(argv=None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    args = build_parser().parse_args(argv)
    try:
        with _thread_limit():
            sc = load_scenario(args.scenario)
            if getattr(args, "samples", None) is not None and args.samples < 1:
                raise InputError("--samples must be positive")
            rep = COMMANDS[args.command](sc, args)
    except (InputError, ScenarioError, ExpressionError, FrameError, L.OutOfChartError) as exc:
        print(f"tgmetric: input error: {exc}", file=stderr)
        return EXIT_INPUT_ERROR
    if args.json is not None:
        args.json.write_text(rep.to_json(), encoding="utf-8")
    if not args.quiet:
        print(render_text(rep), file=stdout)
    return rep.exit_code


def main(argv=None):
    try:
        code = run(argv)
    except SystemExit as exc:  # argparse usage errors are input errors too
        code = EXIT_INPUT_ERROR if exc.code not in (0, None) else 0
    sys.exit(code)
