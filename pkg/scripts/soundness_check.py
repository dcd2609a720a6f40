"""Monte Carlo check that output feedback stays within xi of state feedback.

    python3 scripts/soundness_check.py --samples 50 --epsilon 0.01

Initial states are drawn uniformly from the eroded box, the estimate starts
at the box centre, and the horizon is the sublevel-set entry time T1.
"""

import argparse

import numpy as np

from hgosafe import numkit
from hgosafe.bounds import t1_horizon, xi_for_epsilon
from hgosafe.plant import estimate_constants
from hgosafe.presets import double_integrator
from hgosafe.sim import control_gap, simulate_output_feedback, simulate_state_feedback, sup_distance


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--samples", type=int, default=20)
    ap.add_argument("--epsilon", type=float, default=0.01)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    cfg = double_integrator().with_overrides(observer={"epsilon": args.epsilon})
    m = cfg.build()
    Q = numkit.solve_lyapunov(m.controller.closed_loop_matrix())
    c = cfg.horizon.c
    constants = estimate_constants(m.system, m.controller, m.sets, Q=Q, c=c)
    T1 = t1_horizon(Q, c, constants.x_max)
    xi = xi_for_epsilon(args.epsilon, T1, constants, m.controller, m.observer, "stable", enforce_caps=False).xi

    rng = np.random.default_rng(args.seed)
    box = m.sets.x_box
    x0 = rng.uniform(box[:, 0] + xi, box[:, 1] - xi, size=(args.samples, m.system.n))
    of = simulate_output_feedback(m.system, m.controller, m.observer, m.sets, x0, None, T1)
    sf = simulate_state_feedback(m.system, m.controller, m.sets, x0, T1)
    dists = np.array([sup_distance(a, b) for a, b in zip(of, sf)])
    gaps = np.array([control_gap(a, b, 1.0) for a, b in zip(of, sf)])
    print(f"epsilon {args.epsilon:g}  T1 {T1:.3f} s  xi {xi:.5f}")
    print(f"sup distance: max {dists.max():.5f}  mean {dists.mean():.5f}  violations {(dists > xi).sum()}")
    print(f"control gap for t >= 1 s: max {gaps.max():.5f}")


if __name__ == "__main__":
    main()
