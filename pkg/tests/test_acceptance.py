"""Acceptance suite for the double-integrator case study.

Each test prints one ``[PASS]``/``[FAIL]`` line per criterion (and per
sub-check where a criterion bundles several); the lines are repeated in the
terminal summary. Tolerances are the stated ones and are not relaxed.
"""

import time
import warnings

import numpy as np
import pytest

from hgosafe import numkit
from hgosafe.bounds import (
    bound_main_general,
    bound_transient,
    largest_c,
    t1_horizon,
    transient_time,
    xi_for_epsilon,
)
from hgosafe.observer import build_observer
from hgosafe.pipeline import PipelineConfig, finite_horizon_pipeline, infinite_horizon_pipeline
from hgosafe.plant import estimate_constants
from hgosafe.reach import (
    EmptySetWarning,
    QuadraticSet,
    ReachConfig,
    beta_sweep,
    brute_force_invariant,
    contains,
    erode,
    failure_set,
    invariant_set,
    sdf_box,
    solve_backward_tube,
)
from hgosafe.sim import (
    control_gap,
    saturation_intervals,
    simulate_output_feedback,
    simulate_state_feedback,
    sup_distance,
)

LAMBDA = np.array([[-4.0, 1.0], [-4.0, 0.0]])
pytestmark = pytest.mark.slow

REPORT_KEYS = {"mode", "inputs", "constants", "bound", "xi", "areas", "verdicts", "notes"}
INFINITE_KEYS = REPORT_KEYS | {"c", "c_largest", "T1", "Q"}


@pytest.fixture(scope="module")
def stable_constants(di_system, di_ctrl, di_sets, di_Q):
    return estimate_constants(di_system, di_ctrl, di_sets, Q=di_Q, c=16.0)


@pytest.fixture(scope="module")
def T1(di_Q):
    return t1_horizon(di_Q, 16.0, 25.0)


def stable_xi(eps, T, constants, ctrl):
    return xi_for_epsilon(eps, T, constants, ctrl, build_observer([4.0, 4.0], eps), "stable",
                          enforce_caps=False).xi


def test_lyapunov_solutions(acceptance, di_ctrl):
    P = numkit.solve_lyapunov(LAMBDA)
    Q = numkit.solve_lyapunov(di_ctrl.closed_loop_matrix())
    eP = np.max(np.abs(P - [[0.625, -0.5], [-0.5, 0.65625]]))
    eQ = np.max(np.abs(Q - [[3.5, 2.5], [2.5, 15.0]]))
    ok = acceptance("1 Lyapunov solutions", eP <= 1e-9 and eQ <= 1e-9, f"max error P {eP:.1e}, Q {eQ:.1e}")
    assert ok


def test_t1_horizon(acceptance, T1):
    ok = acceptance("2 entry time T1", abs(T1 - 24.74) <= 0.05, f"T1 = {T1:.4f} s")
    assert ok


def test_beta_sweep_shape(acceptance, di_system, di_sets, di_grid):
    betas = [round(0.05 * i, 2) for i in range(1, 11)]
    start = time.perf_counter()
    res = beta_sweep(betas, di_system, di_sets, di_grid, "converged", cfg=ReachConfig(threads=1))
    elapsed = time.perf_counter() - start
    areas = ", ".join(f"{b:g}:{a:.1f}" for b, a in zip(res.betas, res.areas))
    ok = acceptance("3 beta sweep maximizer", 0.10 <= res.best_beta <= 0.35 and not res.errors,
                    f"best beta {res.best_beta:g} ({areas}); {elapsed:.0f} s")
    ok &= acceptance("3 beta sweep runtime", elapsed < 600, f"{elapsed:.0f} s single-threaded")
    assert ok


def test_sublevel_containment(acceptance, di_Q, di_delta):
    inside = contains(QuadraticSet(di_Q, 16.0), di_delta)
    c_big = largest_c(di_Q, di_delta)
    ok = acceptance("4 Omega_16 inside Delta", inside)
    ok &= acceptance("4 largest c >= 12", c_big >= 12, f"largest c = {c_big:.2f}")
    assert ok


def test_xi_reference(acceptance, stable_constants, di_ctrl, T1):
    x2 = stable_xi(1e-2, T1, stable_constants, di_ctrl)
    x3 = stable_xi(1e-3, T1, stable_constants, di_ctrl)
    ratio = x3 / x2
    ok = acceptance("5 xi(0.01) within 3x of 0.1768", 0.1768 / 3 <= x2 <= 0.1768 * 3, f"xi = {x2:.4f}")
    ok &= acceptance("5 xi(0.001) within 3x of 0.022", 0.022 / 3 <= x3 <= 0.022 * 3, f"xi = {x3:.5f}")
    ok &= acceptance("5 ratio in [0.08, 0.25]", 0.08 <= ratio <= 0.25, f"ratio = {ratio:.4f}")
    ok &= acceptance("5 strict ordering", x3 < x2)
    assert ok


def test_output_feedback_soundness(acceptance, di_system, di_ctrl, di_sets, di_design, stable_constants, T1):
    xi = stable_xi(1e-2, T1, stable_constants, di_ctrl)
    rng = np.random.default_rng(0)
    x0 = rng.uniform(di_sets.x_box[:, 0] + xi, di_sets.x_box[:, 1] - xi, size=(20, 2))
    start = time.perf_counter()
    of = simulate_output_feedback(di_system, di_ctrl, di_design, di_sets, x0, None, T1)
    sf = simulate_state_feedback(di_system, di_ctrl, di_sets, x0, T1)
    elapsed = time.perf_counter() - start
    dists = [sup_distance(a, b) for a, b in zip(of, sf)]
    gaps = [control_gap(a, b, 1.0) for a, b in zip(of, sf)]
    peaking_ok = True
    for a, b in zip(of, sf):
        spans = saturation_intervals(a, di_sets.u_max)
        early = bool(spans) and spans[0][0] <= 0.2
        # after 0.2 s output feedback only saturates where state feedback does too
        late = (np.abs(a.controls) >= di_sets.u_max - 1e-12) & (a.times > 0.2)
        sf_u = np.interp(a.times[late], b.times, np.abs(b.controls))
        peaking_ok &= early and bool(np.all(sf_u >= di_sets.u_max - 0.05))
    ok = acceptance("6 sup distance <= xi", max(dists) <= xi, f"max {max(dists):.4f} vs xi {xi:.4f}, 20 runs")
    ok &= acceptance("6 peaking saturation within [0, 0.2 s]", peaking_ok)
    ok &= acceptance("6 control gap <= 0.05 for t >= 1 s", max(gaps) <= 0.05, f"max {max(gaps):.4f}")
    ok &= acceptance("6 runtime", elapsed < 300, f"{elapsed:.0f} s")
    assert ok


def test_oracle_equivalence(acceptance, di_grid, di_system, di_ctrl, di_sets):
    fld = invariant_set(di_grid, di_system, di_ctrl, di_sets, 25.0, 0.0)
    brute = brute_force_invariant(di_grid, di_system, di_ctrl, di_sets, 25.0)
    diff = fld.inside() != brute
    agree = 1.0 - diff.mean()
    # distance to the zero level measured in cells, using the field's own scale
    band = np.abs(fld.values) <= 2 * max(di_grid.spacing)
    ok = acceptance("7 nodewise agreement >= 97%", agree >= 0.97, f"{100 * agree:.2f}% ({diff.sum()} nodes differ)")
    ok &= acceptance("7 disagreements within 2 cells", bool(np.all(band[diff])))
    assert ok


def test_property_suite(acceptance, di_grid, di_system, di_ctrl, di_sets, stable_constants, exact_constants,
                        T1):
    F = failure_set(di_grid, di_sets, di_system, di_ctrl)
    frames = []
    solve_backward_tube(F, di_ctrl, T=3.0, callback=lambda t, phi: frames.append(phi.copy()))
    mono = all(np.all(b <= a + 1e-12) for a, b in zip([F.values] + frames[:-1], frames))
    ok = acceptance("8 tube monotonicity", mono, f"{len(frames)} steps")

    d1 = invariant_set(di_grid, di_system, di_ctrl, di_sets, 2.0)
    d2 = invariant_set(di_grid, di_system, di_ctrl, di_sets, 6.0)
    ok &= acceptance("8 Delta(T2) inside Delta(T1)", bool(np.all(~d2.inside() | d1.inside())))

    box = sdf_box(di_grid, di_sets.x_box)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EmptySetWarning)
        err = max(np.max(np.abs(erode(erode(box, a), b).values - erode(box, a + b).values))
                  for a, b in [(0.1, 0.2), (0.5, 1.25), (0.01, 2.9)])
    ok &= acceptance("8 erode additivity", err <= 1e-12, f"max error {err:.1e}")

    worst = 0.0
    for eps in (1e-2, 1e-3, 1e-4):
        d = build_observer([4.0, 4.0], eps)
        T_eps = transient_time(d, exact_constants.k)
        g = bound_main_general(eps, T_eps, exact_constants, d, 2, T_eps)
        t = bound_transient(eps, exact_constants, d, 2)
        worst = max(worst, abs(g - 4 * t) / (4 * t))
    ok &= acceptance("8 unit-growth bound equals four transient bounds", worst <= 1e-12, f"rel error {worst:.1e}")

    eps_list = [1e-2, 1e-3, 1e-4, 1e-5]
    xis = [stable_xi(e, T1, stable_constants, di_ctrl) for e in eps_list]
    decreasing = all(b < a for a, b in zip(xis, xis[1:]))
    ratio = xis[-1] / xis[0]
    ok &= acceptance("8 xi strictly decreasing in epsilon", decreasing, ", ".join(f"{x:.3e}" for x in xis))
    ok &= acceptance("8 xi(1e-5) below 1e-3 of xi(1e-2)", ratio < 1e-3, f"ratio {ratio:.3e}")

    rng = np.random.default_rng(1)
    semi = 0.0
    for _ in range(20):
        M = rng.normal(size=(3, 3))
        s, t = rng.uniform(0, 2, size=2)
        lhs = numkit.matrix_exponential(M, s + t)
        rhs = numkit.matrix_exponential(M, s) @ numkit.matrix_exponential(M, t)
        semi = max(semi, np.max(np.abs(lhs - rhs)) / max(1.0, np.max(np.abs(lhs))))
    ok &= acceptance("8 matrix-exponential semigroup", semi <= 1e-8, f"max error {semi:.1e}")
    assert ok


def test_end_to_end_pipelines(acceptance, di_system, di_ctrl, di_design, di_sets):
    start = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EmptySetWarning)
        fin = finite_horizon_pipeline(di_system, di_ctrl, di_design, di_sets, 5.0)
    inf2 = infinite_horizon_pipeline(di_system, di_ctrl, di_design, di_sets, PipelineConfig(c=16.0))
    inf3 = infinite_horizon_pipeline(di_system, di_ctrl, build_observer([4.0, 4.0], 1e-3), di_sets,
                                     PipelineConfig(c=16.0))
    elapsed = time.perf_counter() - start
    schema = REPORT_KEYS <= set(fin.to_dict()) and all(INFINITE_KEYS <= set(r.to_dict()) for r in (inf2, inf3))
    ok = acceptance("9 pipelines complete with full reports", schema,
                    f"finite xi {fin.xi:.3g}, infinite xi {inf2.xi:.4f}")
    nested = all(r.verdicts["delta_tilde_in_delta"] and r.verdicts["delta_in_safe"] for r in (fin, inf2, inf3))
    ok &= acceptance("9 Delta~ inside Delta inside X_safe", nested)
    a2, a3 = inf2.areas["delta_tilde"], inf3.areas["delta_tilde"]
    ok &= acceptance("9 smaller epsilon certifies a larger set", a3 > a2,
                     f"area {a3:.2f} (eps 1e-3) vs {a2:.2f} (eps 1e-2); Delta {inf2.areas['delta']:.2f}")
    ok &= acceptance("9 runtime", elapsed < 600, f"{elapsed:.0f} s")
    assert ok
