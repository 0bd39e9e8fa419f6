"""Convergence tables for the reduced Hamiltonian study.

Prints ``max |{J, H_W}|`` and its observed order for each scenario, then a
sweep over the homogeneous momentum amplitude of the constraint states on s2
(the bracket is proportional to that amplitude).

    python3 scripts/loop_convergence.py [--N 64,128,256] [--seeds 0,1,2]
"""
import argparse
from dataclasses import dataclass

import numpy as np

from tgmetric import bundled
from tgmetric import loopspace as L


@dataclass
class Sweep:
    N: tuple = (64, 128, 256)
    seeds: tuple = (0, 1, 2)
    scales: tuple = (0.0, 0.05, 0.5)
    modes: tuple = (0, 2)
    scenarios: tuple = ("s1_flat", "s2_twisted", "s3_heisenberg", "s4_negative", "s5_rotation")


def bracket_max(frame, state):
    HW = L.HamiltonianW(frame)
    return max(abs(L.poisson_bracket(L.Current(s, t), HW, state, frame.data))
               for s in frame.sections for t in L.DEFAULT_TESTFNS)


def fmt(values):
    return "  ".join(f"{v:9.3e}" for v in values)


def main(cfg: Sweep):
    print("gauge study, default constraint states (seed 0)")
    for name in cfg.scenarios:
        sc = bundled(name)
        gs = L.gauge_invariance_study(sc.frame, sc.loop, cfg.N)
        orders = " ".join("-" if o is None else f"{o:.2f}" for o in gs.orders)
        print(f"  {name:<16} {fmt(gs.max_b)}   orders {orders}")

    sc = bundled("s2_twisted")
    print("\ns2 amplitude sweep")
    print(f"  {'scale':>6} {'modes':>5} {'seed':>4}  " + "  ".join(f"{'N=' + str(n):>9}" for n in cfg.N))
    for scale in cfg.scales:
        for modes in cfg.modes:
            for seed in cfg.seeds:
                vals = [bracket_max(sc.frame, L.constraint_state(sc.frame, sc.loop, N, seed, scale, modes))
                        for N in cfg.N]
                order = np.log2(vals[-2] / vals[-1]) if vals[-1] > 0 else float("nan")
                print(f"  {scale:>6} {modes:>5} {seed:>4}  {fmt(vals)}  order {order:.2f}")


def _ints(text):
    return tuple(int(t) for t in text.split(","))


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--N", type=_ints, default=Sweep.N)
    ap.add_argument("--seeds", type=_ints, default=Sweep.seeds)
    args = ap.parse_args()
    main(Sweep(N=args.N, seeds=args.seeds))
