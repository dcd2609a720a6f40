"""Closed-loop simulation under state feedback and high-gain-observer feedback.

Fixed-step RK4 is the default. The observer error decays on the ``t/eps``
timescale, so output-feedback runs use a small ``transient_step`` over the
first ``5 T(eps)`` seconds and ``base_step`` afterwards. A step that crosses
the saturation boundary is split at the crossing, so the kink in the control
does not degrade the order. Both simulators take
a single initial state ``(n,)`` or a batch ``(m, n)``; batches are integrated
together and returned as a list of trajectories.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import BlowUpError
from .observer import ObserverDesign, observer_rhs
from .plant import plant_rhs, saturated_control, unsaturated_control

BLOWUP = 1e6


@dataclass(frozen=True)
class IntegratorConfig:
    method: str = "rk4"  # "rk4" or "rk45"
    base_step: float = 1e-3
    transient_step: float | None = None  # None -> epsilon / 20
    abs_tol: float = 1e-9
    rel_tol: float = 1e-7

    def __post_init__(self):
        if self.method not in ("rk4", "rk45"):
            raise ValueError(f"unknown integration method {self.method!r}")
        if not self.base_step > 0:
            raise ValueError("base_step must be positive")
        if self.transient_step is not None and not 0 < self.transient_step <= self.base_step:
            raise ValueError("transient_step must be positive and <= base_step")

    def transient_for(self, epsilon: float) -> float:
        h = self.transient_step if self.transient_step is not None else epsilon / 20.0
        return min(h, self.base_step)


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    estimates: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.states.shape[1]

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def to_csv(self, dest) -> None:
        """Write to a path or an open text stream."""
        if hasattr(dest, "write"):
            self._write_csv(dest)
            return
        with open(dest, "w", newline="") as fh:
            self._write_csv(fh)

    def _write_csv(self, fh) -> None:
        n = self.n
        header = ["t"] + [f"x{i + 1}" for i in range(n)] + ["u"]
        cols = [self.times[:, None], self.states, self.controls[:, None]]
        if self.estimates is not None:
            header += [f"xhat{i + 1}" for i in range(n)]
            cols.append(self.estimates)
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in np.hstack(cols):
            w.writerow([repr(float(v)) for v in row])


def rk4_step(f, t, x, h):
    k1 = f(t, x)
    k2 = f(t + h / 2, x + h / 2 * k1)
    k3 = f(t + h / 2, x + h / 2 * k2)
    k4 = f(t + h, x + h * k3)
    return x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def time_grid(T: float, segments) -> np.ndarray:
    """Piecewise-uniform grid on ``[0, T]``; ``segments`` is ``[(t_end, h), ...]``."""
    pieces = [np.zeros(1)]
    t0 = 0.0
    for t_end, h in segments:
        t_end = min(t_end, T)
        if t_end <= t0:
            continue
        steps = max(1, int(math.ceil((t_end - t0) / h - 1e-9)))
        pieces.append(np.linspace(t0, t_end, steps + 1)[1:])
        t0 = t_end
    return np.concatenate(pieces)


def _switch_fraction(f, t, z, h, switch, s0, s1, cross) -> float:
    """Fraction of ``h`` at which the earliest sign change of ``switch`` occurs (regula falsi)."""
    fr = s0[cross] / (s0[cross] - s1[cross])
    j = np.flatnonzero(cross)[int(np.argmin(fr))]
    lo, hi, slo, shi = 0.0, 1.0, s0[j], s1[j]
    frac = float(np.min(fr))
    for _ in range(3):
        sm = switch(rk4_step(f, t, z, frac * h))[j]
        if sm == 0.0:
            break
        if np.sign(sm) == np.sign(slo):
            lo, slo = frac, sm
        else:
            hi, shi = frac, sm
        frac = lo + (hi - lo) * slo / (slo - shi)
    return min(max(frac, 0.0), 1.0)


def _advance(f, t, z, h, switch, max_splits: int = 8):
    """One RK4 step, split at sign changes of ``switch`` so no stage straddles a kink."""
    if switch is None:
        return rk4_step(f, t, z, h)
    rem = h
    for _ in range(max_splits):
        s0 = np.atleast_1d(switch(z))
        z1 = rk4_step(f, t, z, rem)
        s1 = np.atleast_1d(switch(z1))
        cross = (s0 * s1 < 0)
        if not np.any(cross):
            return z1
        frac = _switch_fraction(f, t, z, rem, switch, s0, s1, cross)
        sub = frac * rem
        if sub <= 1e-12 * h or sub >= rem * (1 - 1e-12):
            return z1
        z = rk4_step(f, t, z, sub)
        t += sub
        rem -= sub
    return rk4_step(f, t, z, rem)


def _integrate_fixed(f, z0, times, n_check, switch=None):
    out = np.empty((times.size,) + z0.shape)
    out[0] = z0
    z = z0
    for i in range(1, times.size):
        h = times[i] - times[i - 1]
        z = _advance(f, times[i - 1], z, h, switch)
        big = np.abs(z[..., :n_check]).max() if z.size else 0.0
        if not np.isfinite(big) or big > BLOWUP:
            raise BlowUpError(f"state norm exceeded {BLOWUP:g} at t = {times[i]:.6g}", times[i], z)
        out[i] = z
    return out


def _integrate_adaptive(f, z0, T, cfg: IntegratorConfig, max_step):
    from scipy.integrate import solve_ivp

    flat = z0.reshape(-1)
    shape = z0.shape

    def g(t, y):
        return f(t, y.reshape(shape)).reshape(-1)

    def blowup(t, y):
        return BLOWUP - np.max(np.abs(y))

    blowup.terminal = True
    sol = solve_ivp(g, (0.0, T), flat, method="RK45", rtol=cfg.rel_tol, atol=cfg.abs_tol,
                    max_step=max_step, events=blowup)
    if sol.status == 1 or not sol.success:
        raise BlowUpError(f"adaptive integration failed at t = {sol.t[-1]:.6g}: {sol.message}", sol.t[-1])
    return sol.t, sol.y.T.reshape((-1,) + shape)


def _batch(x0):
    x0 = np.asarray(x0, dtype=float)
    single = x0.ndim == 1
    return np.atleast_2d(x0), single


def simulate_state_feedback(sys, ctrl, sets, x0, T: float, cfg: IntegratorConfig | None = None,
                            v: float | None = None):
    """Plant driven by the saturated linearizing controller evaluated at the true state."""
    cfg = cfg or IntegratorConfig()
    if not T > 0:
        raise ValueError("horizon T must be positive")
    X0, single = _batch(x0)
    if not np.all(np.isfinite(X0)):
        raise ValueError("initial state must be finite")

    def f(t, x):
        return plant_rhs(sys, x, saturated_control(sys, ctrl, sets, x, v))

    def switch(x):
        return np.abs(unsaturated_control(sys, ctrl, x, v)) - sets.u_max

    if cfg.method == "rk4":
        times = time_grid(T, [(T, cfg.base_step)])
        states = _integrate_fixed(f, X0, times, sys.n, switch)
    else:
        times, states = _integrate_adaptive(f, X0, T, cfg, max_step=cfg.base_step * 100)
    trajs = []
    for j in range(X0.shape[0]):
        xs = states[:, j, :]
        us = saturated_control(sys, ctrl, sets, xs, v)
        trajs.append(Trajectory(times, xs, us))
    return trajs[0] if single else trajs


def simulate_output_feedback(sys, ctrl, design: ObserverDesign, sets, x0, xhat0=None, T: float = 1.0,
                             cfg: IntegratorConfig | None = None, v: float | None = None,
                             saturate: bool = True):
    """Plant plus high-gain observer with ``u = sat(g(xhat))``.

    ``xhat0`` defaults to the centre of ``X_safe``. ``saturate=False`` drops
    the clipping (used to demonstrate peaking).
    """
    from .bounds import transient_time

    cfg = cfg or IntegratorConfig()
    if not T > 0:
        raise ValueError("horizon T must be positive")
    X0, single = _batch(x0)
    n = sys.n
    if xhat0 is None:
        Xh0 = np.broadcast_to(sets.center, X0.shape).copy()
    else:
        Xh0 = np.broadcast_to(np.asarray(xhat0, dtype=float), X0.shape).copy()
    if not np.all(sets.contains(Xh0)):
        raise ValueError("initial estimate must lie in X_safe")

    def control(xh):
        if saturate:
            return saturated_control(sys, ctrl, sets, xh, v)
        return unsaturated_control(sys, ctrl, xh, v)

    def f(t, z):
        x, xh = z[..., :n], z[..., n:]
        u = control(xh)
        return np.concatenate([plant_rhs(sys, x, u), observer_rhs(sys, design, xh, u, x[..., 0])], axis=-1)

    def switch(z):
        return np.abs(unsaturated_control(sys, ctrl, z[..., n:], v)) - sets.u_max

    k = float(np.max(np.linalg.norm(X0 - Xh0, axis=-1)))
    t_eps = transient_time(design, k, n) if k > 0 else 0.0
    Z0 = np.concatenate([X0, Xh0], axis=-1)
    if cfg.method == "rk4":
        times = time_grid(T, [(5.0 * t_eps, cfg.transient_for(design.epsilon)), (T, cfg.base_step)])
        Z = _integrate_fixed(f, Z0, times, 2 * n, switch if saturate else None)
    else:
        times, Z = _integrate_adaptive(f, Z0, T, cfg, max_step=cfg.base_step * 100)
    trajs = []
    for j in range(X0.shape[0]):
        xs, xh = Z[:, j, :n], Z[:, j, n:]
        trajs.append(Trajectory(times, xs, control(xh), xh))
    return trajs[0] if single else trajs


def _interp_states(traj: Trajectory, grid: np.ndarray) -> np.ndarray:
    return np.stack([np.interp(grid, traj.times, traj.states[:, i]) for i in range(traj.n)], axis=-1)


def _interp_controls(traj: Trajectory, grid: np.ndarray) -> np.ndarray:
    return np.interp(grid, traj.times, traj.controls)


def sup_distance(traj_a: Trajectory, traj_b: Trajectory) -> float:
    """Max Euclidean gap between two trajectories on the union of their time grids."""
    Ta, Tb = traj_a.horizon, traj_b.horizon
    if abs(Ta - Tb) > 1e-9 * max(1.0, Ta, Tb) or traj_a.n != traj_b.n:
        raise ValueError(f"trajectory domains differ: [0, {Ta}] vs [0, {Tb}]")
    grid = np.union1d(traj_a.times, traj_b.times)
    gap = _interp_states(traj_a, grid) - _interp_states(traj_b, grid)
    return float(np.max(np.linalg.norm(gap, axis=-1)))


def control_gap(traj_a: Trajectory, traj_b: Trajectory, t_from: float = 0.0) -> float:
    grid = np.union1d(traj_a.times, traj_b.times)
    grid = grid[grid >= t_from]
    return float(np.max(np.abs(_interp_controls(traj_a, grid) - _interp_controls(traj_b, grid))))


def saturation_intervals(traj: Trajectory, u_max: float, tol: float = 1e-12):
    """Maximal runs of recorded samples with ``|u| >= u_max``, as ``(t_start, t_end)`` pairs."""
    sat = np.abs(traj.controls) >= u_max - tol
    out = []
    i = 0
    m = sat.size
    while i < m:
        if sat[i]:
            j = i
            while j + 1 < m and sat[j + 1]:
                j += 1
            out.append((float(traj.times[i]), float(traj.times[j])))
            i = j + 1
        else:
            i += 1
    return out
