"""Grid level sets and backward reachable tubes.

Sign convention: every ``LevelSetField`` is negative inside the set it
represents, positive outside. Box fields are exact signed distances; unions,
intersections and complements are only level-set representatives.

The tube solver evolves ``phi_tau = min(0, H(x, grad phi))`` with
``H = grad phi . f(x)`` (plus ``+/- v_max |grad phi . B|`` when the reference
is free), so ``phi(x, tau) = min_{s <= tau} phi0(x(s))`` and the negative
region is everything that touches the failure set within ``tau``. Space is
discretised with one-sided differences inside a local Lax-Friedrichs flux
(dissipation ``|f_i(x)|`` per node, which reduces to upwinding for a fixed
reference), time with two-stage TVD Runge-Kutta. A global dissipation
coefficient would smear the set inward without bound, because ``min(0, .)``
only ever lets values decrease.
"""

from __future__ import annotations

import csv
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import CFLError, GridMismatchError, NonConvergenceError, NumericalError
from .plant import (
    ConstraintSets,
    LinearizingController,
    NormalFormSystem,
    companion_matrices,
    plant_rhs,
)
from .sim import IntegratorConfig, rk4_step


class EmptySetWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Grid:
    mins: tuple
    maxs: tuple
    counts: tuple

    def __post_init__(self):
        mins = tuple(float(v) for v in np.atleast_1d(self.mins))
        maxs = tuple(float(v) for v in np.atleast_1d(self.maxs))
        counts = tuple(int(v) for v in np.atleast_1d(self.counts))
        if not len(mins) == len(maxs) == len(counts):
            raise ValueError("grid mins, maxs and counts must have equal length")
        if any(c < 3 for c in counts):
            raise ValueError("need at least 3 nodes per dimension")
        if any(lo >= hi for lo, hi in zip(mins, maxs)):
            raise ValueError("grid requires min < max in every dimension")
        object.__setattr__(self, "mins", mins)
        object.__setattr__(self, "maxs", maxs)
        object.__setattr__(self, "counts", counts)

    @classmethod
    def around(cls, box, counts=101, inflate: float = 0.25) -> "Grid":
        """Grid over ``box`` widened by ``inflate`` times its width on every side."""
        box = np.asarray(box, dtype=float).reshape(-1, 2)
        width = box[:, 1] - box[:, 0]
        counts = np.broadcast_to(counts, (box.shape[0],))
        return cls(tuple(box[:, 0] - inflate * width), tuple(box[:, 1] + inflate * width), tuple(counts))

    @property
    def ndim(self) -> int:
        return len(self.counts)

    @property
    def spacing(self) -> np.ndarray:
        return (np.array(self.maxs) - np.array(self.mins)) / (np.array(self.counts) - 1)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def axes(self) -> list[np.ndarray]:
        return [np.linspace(lo, hi, c) for lo, hi, c in zip(self.mins, self.maxs, self.counts)]

    def points(self) -> np.ndarray:
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"), axis=-1)

    def covers(self, box, cells: int = 2) -> bool:
        box = np.asarray(box, dtype=float).reshape(-1, 2)
        h = self.spacing
        return bool(np.all(np.array(self.mins) <= box[:, 0] - cells * h + 1e-12)
                    and np.all(np.array(self.maxs) >= box[:, 1] + cells * h - 1e-12))


@dataclass(frozen=True)
class LevelSetField:
    grid: Grid
    values: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != self.grid.counts:
            raise ValueError(f"field shape {vals.shape} does not match grid {self.grid.counts}")
        if not np.all(np.isfinite(vals)):
            raise NumericalError("level-set field has non-finite values")
        object.__setattr__(self, "values", vals)

    def inside(self) -> np.ndarray:
        return self.values < 0

    @property
    def is_empty(self) -> bool:
        return not np.any(self.values < 0)

    def to_csv(self, path) -> None:
        g = self.grid
        with open(path, "w", newline="") as fh:
            fh.write(f"# dim {g.ndim}\n")
            for i, (lo, hi, c) in enumerate(zip(g.mins, g.maxs, g.counts), start=1):
                fh.write(f"# axis {i} {lo!r} {hi!r} {c}\n")
            w = csv.writer(fh)
            w.writerow([f"x{i}" for i in range(1, g.ndim + 1)] + ["phi"])
            pts = g.points().reshape(-1, g.ndim)
            for p, v in zip(pts, self.values.reshape(-1)):
                w.writerow([repr(float(t)) for t in p] + [repr(float(v))])


def read_field_csv(path) -> LevelSetField:
    mins, maxs, counts = [], [], []
    rows = []
    with open(path) as fh:
        for line in fh:
            if line.startswith("# axis"):
                _, _, _, lo, hi, c = line.split()
                mins.append(float(lo))
                maxs.append(float(hi))
                counts.append(int(c))
            elif line.startswith("#") or line.startswith("x1"):
                continue
            elif line.strip():
                rows.append(float(line.rsplit(",", 1)[1]))
    grid = Grid(tuple(mins), tuple(maxs), tuple(counts))
    return LevelSetField(grid, np.array(rows).reshape(grid.counts))


def _same_grid(a: LevelSetField, b: LevelSetField) -> None:
    if a.grid != b.grid:
        raise GridMismatchError("fields live on different grids")


def sdf_box(grid: Grid, box) -> LevelSetField:
    """Exact Euclidean signed distance to an axis-aligned box."""
    box = np.asarray(box, dtype=float).reshape(-1, 2)
    center = box.mean(axis=1)
    half = 0.5 * (box[:, 1] - box[:, 0])
    q = np.abs(grid.points() - center) - half
    outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
    inside = np.minimum(np.max(q, axis=-1), 0.0)
    return LevelSetField(grid, outside + inside)


def erode(fld: LevelSetField, xi: float) -> LevelSetField:
    """Shrink the set to points at depth >= xi (exact for signed-distance input)."""
    if xi < 0:
        raise ValueError("erosion depth must be nonnegative")
    out = LevelSetField(fld.grid, fld.values + xi, dict(fld.meta))
    if xi > 0 and out.is_empty:
        depth = max(0.0, -float(np.min(fld.values)))
        warnings.warn(f"erosion by {xi:g} exceeds the interior depth {depth:g}: the set is empty",
                      EmptySetWarning, stacklevel=2)
    return out


def union_fields(a: LevelSetField, b: LevelSetField) -> LevelSetField:
    _same_grid(a, b)
    return LevelSetField(a.grid, np.minimum(a.values, b.values))


def intersect_fields(a: LevelSetField, b: LevelSetField) -> LevelSetField:
    _same_grid(a, b)
    return LevelSetField(a.grid, np.maximum(a.values, b.values))


def complement_field(a: LevelSetField) -> LevelSetField:
    return LevelSetField(a.grid, -a.values)


def saturation_field(grid: Grid, sys: NormalFormSystem, ctrl: LinearizingController, sets: ConstraintSets,
                     v: float = 0.0) -> LevelSetField:
    """Approximate signed distance to ``{|gbar(x)| > u_max}`` (negative inside).

    ``(u_max - |gbar|) / |grad |gbar||`` is exact when ``gbar`` is affine.
    Nodes where ``a(x) <= 0`` count as violating; inside ``X_safe`` that is
    an assumption failure and raises.
    """
    from .errors import AssumptionViolation

    pts = grid.points()
    a = sys.a(pts)
    bad = ~(a > 0) | ~np.isfinite(a)
    if np.any(bad & sets.contains(pts)):
        raise AssumptionViolation("a(x) <= 0 at a grid node inside X_safe")
    with np.errstate(all="ignore"):
        signed = (-sys.b(pts) + pts @ ctrl.K + v) / a
    slack = sets.u_max - np.abs(signed)
    # |grad |g|| = |grad g| away from g = 0; the signed form avoids the kink
    grads = np.gradient(np.where(bad, 0.0, signed), *grid.axes(), edge_order=1)
    gnorm = np.sqrt(sum(g * g for g in grads))
    scale = np.maximum(gnorm, 1e-9)
    dist = np.where(bad, -np.max(grid.spacing), slack / scale)
    # keep magnitudes comparable to the box distance
    diam = float(np.linalg.norm(np.array(grid.maxs) - np.array(grid.mins)))
    return LevelSetField(grid, np.clip(dist, -diam, diam))


def failure_set(grid: Grid, sets: ConstraintSets, sys: NormalFormSystem, ctrl: LinearizingController,
                xi: float = 0.0, include_saturation: bool = True) -> LevelSetField:
    """``(X_safe - xi)^c``, united with the input-saturation region unless disabled."""
    safe = erode(sdf_box(grid, sets.x_box), xi) if xi > 0 else sdf_box(grid, sets.x_box)
    F = complement_field(safe)
    if include_saturation:
        F = union_fields(F, saturation_field(grid, sys, ctrl, sets, ctrl.v_nominal))
    return F


@dataclass(frozen=True)
class ReachConfig:
    cfl: float = 0.5
    dt: float | None = None
    tol: float = 1e-4  # converged mode: sup-norm change per unit time
    max_steps: int = 1_000_000
    include_saturation: bool = True
    debug: bool = False
    threads: int = 0


def linear_dynamics(ctrl: LinearizingController, v: float = 0.0):
    M = ctrl.closed_loop_matrix()
    _, B, _ = companion_matrices(ctrl.K.size)

    def f(points):
        return points @ M.T + v * B

    return f


def _one_sided(phi: np.ndarray, axis: int, h: float):
    d = np.diff(phi, axis=axis) / h
    n = phi.shape[axis]
    first = [slice(None)] * phi.ndim
    last = [slice(None)] * phi.ndim
    first[axis] = slice(0, 1)
    last[axis] = slice(n - 2, n - 1)
    back = np.concatenate([d[tuple(first)], d], axis=axis)
    fwd = np.concatenate([d, d[tuple(last)]], axis=axis)
    return back, fwd


class TubeSolver:
    """Frozen backward-reachable-tube integrator on a fixed grid."""

    def __init__(self, grid: Grid, velocity: np.ndarray, v_mode: str = "fixed", v_max: float = 0.0,
                 cfg: ReachConfig | None = None):
        if v_mode not in ("fixed", "helpful", "adversarial"):
            raise ValueError(f"unknown v_mode {v_mode!r}")
        if not np.all(np.isfinite(velocity)):
            raise NumericalError("dynamics produced non-finite velocities on the grid")
        self.grid = grid
        self.cfg = cfg or ReachConfig()
        self.f = velocity
        self.h = grid.spacing
        self.sign = {"fixed": 0.0, "helpful": 1.0, "adversarial": -1.0}[v_mode]
        self.v_max = float(v_max) if v_mode != "fixed" else 0.0
        # node-local dissipation; for a linear Hamiltonian this is exact upwinding
        self.alpha = np.abs(velocity).astype(float)
        self.alpha[..., -1] += self.v_max
        rate = float(np.max(np.sum(self.alpha / self.h, axis=-1)))
        self.dt_max = self.cfg.cfl / rate if rate > 0 else math.inf
        if self.cfg.dt is not None and self.cfg.dt > self.dt_max * (1 + 1e-12):
            raise CFLError(f"dt = {self.cfg.dt:g} exceeds the CFL limit {self.dt_max:g}")

    def rate(self, phi: np.ndarray) -> np.ndarray:
        n = self.grid.ndim
        H = np.zeros_like(phi)
        diss = np.zeros_like(phi)
        p_last = None
        for i in range(n):
            back, fwd = _one_sided(phi, i, self.h[i])
            p = 0.5 * (back + fwd)
            H += p * self.f[..., i]
            diss += 0.5 * self.alpha[..., i] * (fwd - back)
            if i == n - 1:
                p_last = p
        if self.sign:
            H += self.sign * self.v_max * np.abs(p_last)
        return np.minimum(0.0, H + diss)

    def step(self, phi: np.ndarray, dt: float) -> np.ndarray:
        phi1 = phi + dt * self.rate(phi)
        phi2 = phi1 + dt * self.rate(phi1)
        new = 0.5 * (phi + phi2)
        if self.cfg.debug and np.any(new > phi + 1e-12):
            raise AssertionError("tube monotonicity violated")
        if not np.all(np.isfinite(new)):
            raise NumericalError("NaN or inf in level-set update")
        return new

    def run(self, phi0: np.ndarray, T: float, callback=None) -> np.ndarray:
        if T <= 0:
            return phi0.copy()
        dt_cap = self.cfg.dt or self.dt_max
        steps = max(1, int(math.ceil(T / dt_cap - 1e-9)))
        dt = T / steps
        phi = phi0.copy()
        for k in range(steps):
            phi = self.step(phi, dt)
            if callback is not None:
                callback((k + 1) * dt, phi)
        return phi

    def run_converged(self, phi0: np.ndarray, window: float = 1.0) -> tuple[np.ndarray, float]:
        dt = self.cfg.dt or self.dt_max
        per_window = max(1, int(math.ceil(window / dt)))
        phi = phi0.copy()
        steps = 0
        while steps < self.cfg.max_steps:
            ref = phi
            for _ in range(per_window):
                phi = self.step(phi, dt)
            steps += per_window
            change = float(np.max(np.abs(phi - ref))) / (per_window * dt)
            if change < self.cfg.tol:
                return phi, steps * dt
        raise NonConvergenceError(f"level set did not converge within {self.cfg.max_steps} steps")


def solve_backward_tube(field0: LevelSetField, ctrl: LinearizingController, v_mode: str = "fixed",
                        T: float | str = 1.0, cfg: ReachConfig | None = None, dynamics=None,
                        callback=None) -> LevelSetField:
    """Grow the failure set backward through the closed loop for ``T`` seconds.

    ``T="converged"`` iterates to a fixed point. ``dynamics`` maps node
    coordinates to velocities and defaults to ``(A + BK) x + B v``.
    """
    cfg = cfg or ReachConfig()
    grid = field0.grid
    f = dynamics or linear_dynamics(ctrl, ctrl.v_nominal if v_mode == "fixed" else 0.0)
    solver = TubeSolver(grid, f(grid.points()), v_mode, ctrl.v_max, cfg)
    meta = {"dt_max": solver.dt_max, "v_mode": v_mode}
    if T == "converged":
        phi, t_end = solver.run_converged(field0.values)
        meta.update(converged=True, t_end=t_end)
    else:
        phi = solver.run(field0.values, float(T), callback)
        meta.update(converged=False, t_end=float(T))
    return LevelSetField(grid, phi, meta)


def invariant_set(grid: Grid, sys: NormalFormSystem, ctrl: LinearizingController, sets: ConstraintSets,
                  horizon: float | str = "converged", xi: float = 0.0, v_mode: str = "fixed",
                  cfg: ReachConfig | None = None) -> LevelSetField:
    """Safety-invariant set for the eroded box ``X_safe - xi`` (negative inside)."""
    cfg = cfg or ReachConfig()
    if xi < 0:
        raise ValueError("xi must be nonnegative")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EmptySetWarning)
        safe = erode(sdf_box(grid, sets.x_box), xi)
    if safe.is_empty:
        warnings.warn(f"X_safe eroded by {xi:g} is empty; the invariant set is empty",
                      EmptySetWarning, stacklevel=2)
        return LevelSetField(grid, np.maximum(safe.values, grid.spacing.min()),
                             {"empty": True, "xi": xi, "horizon": horizon})
    F = failure_set(grid, sets, sys, ctrl, xi, cfg.include_saturation)
    tube = solve_backward_tube(F, ctrl, v_mode, horizon, cfg)
    delta = intersect_fields(complement_field(tube), safe)
    meta = dict(tube.meta)
    meta.update(xi=xi, horizon=horizon, empty=delta.is_empty)
    if delta.is_empty:
        warnings.warn("the invariant set is empty", EmptySetWarning, stacklevel=2)
    return LevelSetField(grid, delta.values, meta)


def set_area(fld: LevelSetField) -> float:
    """Cell volume times the number of nodes inside the set."""
    return fld.grid.cell_volume * int(np.count_nonzero(fld.values < 0))


@dataclass(frozen=True)
class QuadraticSet:
    """``{x : x^T Q x <= c}``."""

    Q: np.ndarray
    c: float

    def member(self, points) -> np.ndarray:
        Q = np.asarray(self.Q, dtype=float)
        return np.einsum("...i,ij,...j->...", points, Q, points) <= self.c


def contains(inner, outer: LevelSetField) -> bool:
    """True iff every member node of ``inner`` is strictly inside ``outer``."""
    if isinstance(inner, LevelSetField):
        _same_grid(inner, outer)
        member = inner.values <= 0
    else:
        member = inner.member(outer.grid.points())
    return bool(np.all(outer.values[member] < 0))


@dataclass
class SweepResult:
    betas: list
    areas: list
    fields: list
    errors: dict

    @property
    def best_beta(self):
        ok = [(a, b) for a, b in zip(self.areas, self.betas) if a is not None]
        if not ok:
            return None
        return max(ok, key=lambda t: t[0])[1]


def beta_sweep(betas, sys: NormalFormSystem, sets: ConstraintSets, grid: Grid,
               horizon: float | str = "converged", xi: float = 0.0, cfg: ReachConfig | None = None,
               ctrl_kw: dict | None = None) -> SweepResult:
    """Invariant-set area for each gain ``K = (-beta, ..., -beta)``; failures are collected."""
    cfg = cfg or ReachConfig()
    ctrl_kw = ctrl_kw or {}

    def one(beta):
        ctrl = LinearizingController.from_beta(beta, sys.n, **ctrl_kw)
        if horizon == "converged":
            from .numkit import is_hurwitz

            if not is_hurwitz(ctrl.closed_loop_matrix()):
                raise NumericalError(f"A + BK is not Hurwitz for beta = {beta:g}")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", EmptySetWarning)
            return invariant_set(grid, sys, ctrl, sets, horizon, xi, "fixed", cfg)

    results = {}
    errors = {}
    workers = cfg.threads if cfg.threads > 0 else (os.cpu_count() or 1)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = {beta: pool.submit(one, beta) for beta in betas}
        for beta, fut in futures.items():
            try:
                results[beta] = fut.result()
            except NumericalError as exc:
                errors[beta] = str(exc)
    areas = [set_area(results[b]) if b in results else None for b in betas]
    fields = [results.get(b) for b in betas]
    return SweepResult(list(betas), areas, fields, errors)


def brute_force_invariant(grid: Grid, sys: NormalFormSystem, ctrl: LinearizingController,
                          sets: ConstraintSets, T: float, xi: float = 0.0,
                          sim_cfg: IntegratorConfig | None = None) -> np.ndarray:
    """Per-node safety by direct simulation; ``True`` marks a safe initial state.

    Every node of ``X_safe - xi`` is integrated under the saturated
    controller; it stays safe while the state remains in the eroded box and
    ``|gbar| <= u_max`` at every step.
    """
    sim_cfg = sim_cfg or IntegratorConfig(base_step=1e-2)
    pts = grid.points().reshape(-1, grid.ndim)
    lo = sets.x_box[:, 0] + xi
    hi = sets.x_box[:, 1] - xi
    safe = np.all((pts >= lo) & (pts <= hi), axis=-1)
    idx = np.flatnonzero(safe)
    x = pts[idx]

    def gbar(z):
        with np.errstate(all="ignore"):
            return (-sys.b(z) + z @ ctrl.K + ctrl.v_nominal) / sys.a(z)

    def ok(z):
        g = gbar(z)
        a = sys.a(z)
        return np.all((z >= lo) & (z <= hi), axis=-1) & (np.abs(g) <= sets.u_max) & (a > 0) & np.isfinite(g)

    def f(t, z):
        with np.errstate(all="ignore"):
            return plant_rhs(sys, z, np.clip(gbar(z), -sets.u_max, sets.u_max))

    alive = ok(x)
    steps = max(1, int(math.ceil(T / sim_cfg.base_step - 1e-9)))
    h = T / steps
    for k in range(steps):
        if not np.any(alive):
            break
        live = np.flatnonzero(alive)
        z = rk4_step(f, k * h, x[live], h)
        x[live] = z
        alive[live] = ok(z)
    safe[idx] = alive
    return safe.reshape(grid.counts)


def zero_contours(fld: LevelSetField) -> list[np.ndarray]:
    """Zero level-set polylines of a 2-D field (marching squares)."""
    if fld.grid.ndim != 2:
        raise ValueError("contours are only extracted for 2-D fields")
    import contourpy

    x, y = fld.grid.axes()
    gen = contourpy.contour_generator(x, y, fld.values.T, line_type="Separate")
    return [np.asarray(line) for line in gen.lines(0.0)]


def write_contours_csv(fld: LevelSetField, path) -> int:
    lines = zero_contours(fld)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["contour", "x1", "x2"])
        for i, line in enumerate(lines):
            for p in line:
                w.writerow([i, repr(float(p[0])), repr(float(p[1]))])
    return len(lines)
