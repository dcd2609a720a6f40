"""End-to-end certification of output-feedback safety-invariant sets.

Finite horizon: sample constants, bound the output/state-feedback distance
``xi`` over ``[0, T]`` without any stability assumption, then compute the
invariant set of the eroded box ``X_safe - xi``.

Infinite horizon (stabilizing gain): compute the state-feedback set ``Delta``
to convergence, fit the largest Lyapunov sublevel set ``x^T Q x <= c`` inside
it, take the entry time ``T1`` as the horizon, bound ``xi`` with the
stable-mode bound and compute ``Delta~`` over ``[0, T1]``.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import numkit
from .bounds import (
    BoundReport,
    epsilon_caps,
    largest_c,
    t1_horizon,
    xi_for_epsilon,
)
from .errors import AssumptionViolation, CapViolationError, NotHurwitzError
from .observer import ObserverDesign
from .plant import (
    ConstantsReport,
    ConstraintSets,
    LinearizingController,
    NormalFormSystem,
    estimate_constants,
)
from .reach import (
    EmptySetWarning,
    Grid,
    LevelSetField,
    QuadraticSet,
    ReachConfig,
    contains,
    erode,
    invariant_set,
    sdf_box,
    set_area,
    write_contours_csv,
)
from .sim import IntegratorConfig, simulate_output_feedback

STABILITY_NOTE = (
    "With a stabilizing gain and epsilon below the caps, the origin remains asymptotically "
    "stable under output feedback. This is a cited guarantee; it is only checked empirically "
    "through the soundness sample."
)


@dataclass(frozen=True)
class PipelineConfig:
    grid: Grid | None = None  # None -> X_safe inflated 25% per side, 101 nodes per axis
    reach: ReachConfig = field(default_factory=ReachConfig)
    grid_density: int = 41
    safety_factor: float = 1.1
    c: float | None = None  # fixed sublevel value; None -> largest_c
    x0_norm_sq: float | None = None  # None -> max |x|^2 over X_safe
    strict_caps: bool = False
    literal_c2hat: bool = False
    force_xi: float | None = None  # debugging: bypass the bound
    soundness_samples: int = 0
    seed: int = 0
    sim: IntegratorConfig = field(default_factory=IntegratorConfig)


@dataclass
class VerificationReport:
    mode: str
    inputs: dict
    constants: ConstantsReport
    bound: BoundReport
    delta_tilde_field: LevelSetField
    areas: dict
    verdicts: dict
    delta_field: LevelSetField | None = None
    c: float | None = None
    c_largest: float | None = None
    T1: float | None = None
    Q: np.ndarray | None = None
    notes: list = field(default_factory=list)
    soundness: dict | None = None

    @property
    def xi(self) -> float:
        return self.bound.xi

    def to_dict(self) -> dict:
        out = {
            "mode": self.mode,
            "inputs": self.inputs,
            "constants": self.constants.to_dict(),
            "bound": self.bound.to_dict(),
            "xi": self.bound.xi,
            "xi_label": "xi (paper: delta)",
            "areas": self.areas,
            "verdicts": self.verdicts,
            "notes": list(self.notes),
        }
        if self.mode == "infinite":
            out.update(c=self.c, c_largest=self.c_largest, T1=self.T1, Q=np.asarray(self.Q).tolist())
        if self.soundness is not None:
            out["soundness"] = self.soundness
        return _jsonable(out)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def write(self, out_dir, label: str, contours: bool = True) -> list[Path]:
        """Write ``<label>_report.json`` plus field CSVs (and zero contours for 2-D)."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        written = []
        path = out / f"{label}_report.json"
        path.write_text(self.to_json())
        written.append(path)
        fields = {"delta_tilde": self.delta_tilde_field}
        if self.delta_field is not None:
            fields["delta"] = self.delta_field
        for name, fld in fields.items():
            p = out / f"{label}_{name}.csv"
            fld.to_csv(p)
            written.append(p)
            if contours and fld.grid.ndim == 2:
                p = out / f"{label}_{name}_contour.csv"
                write_contours_csv(fld, p)
                written.append(p)
        return written


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return obj


def inputs_snapshot(sys, ctrl, design, sets, **extra) -> dict:
    snap = {
        "system": {"n": sys.n, "a": sys.a_text, "b": sys.b_text, "a0": sys.a0},
        "controller": {"K": ctrl.K.tolist(), "beta": ctrl.beta, "v_mode": ctrl.v_mode, "v": ctrl.v},
        "observer": {"alphas": design.alphas.tolist(), "epsilon": design.epsilon, "rho": design.rho,
                     "rho_is_default": design.rho_is_default},
        "sets": {"x_box": sets.x_box.tolist(), "u_max": sets.u_max},
    }
    snap.update(extra)
    return _jsonable(snap)


def _grid_for(sets: ConstraintSets, cfg: PipelineConfig) -> Grid:
    grid = cfg.grid or Grid.around(sets.x_box, 101)
    if not grid.covers(sets.x_box):
        raise ValueError("grid must cover X_safe with at least two cells of margin")
    return grid


def _quiet_invariant_set(*args, **kw):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EmptySetWarning)
        return invariant_set(*args, **kw)


def _subset(inner: LevelSetField, outer: LevelSetField) -> bool:
    return bool(np.all(~inner.inside() | outer.inside()))


def _cap_verdict(epsilon: float, caps, strict: bool, notes: list) -> bool:
    ok = epsilon < caps.eps_hat
    if not ok:
        msg = f"epsilon = {epsilon:g} is not below eps_hat = {caps.eps_hat:.6g} (binding cap: {caps.binding()})"
        if strict:
            raise CapViolationError(msg, caps.binding())
        notes.append(msg)
    return ok


def _finish(report: VerificationReport, sys, ctrl, design, sets, cfg: PipelineConfig, horizon: float):
    if report.delta_tilde_field.is_empty:
        report.notes.append("Delta~ is empty: xi consumes the safe set or no state is certified")
        warnings.warn("the certified output-feedback set is empty", EmptySetWarning, stacklevel=3)
    if cfg.soundness_samples > 0:
        report.soundness = soundness_check(report.delta_tilde_field, sys, ctrl, design, sets, horizon,
                                           cfg.soundness_samples, cfg.seed, cfg.sim)
        report.verdicts["soundness_ok"] = report.soundness["safety_violations"] == 0
    return report


def finite_horizon_pipeline(sys: NormalFormSystem, ctrl: LinearizingController, observer_design: ObserverDesign,
                            sets: ConstraintSets, T: float, cfg: PipelineConfig | None = None) -> VerificationReport:
    """Certify ``Delta~`` over ``[0, T]`` using the general (stability-free) bound."""
    cfg = cfg or PipelineConfig()
    if not T > 0 or not math.isfinite(T):
        raise ValueError("finite horizon T must be positive and finite")
    grid = _grid_for(sets, cfg)
    eps = observer_design.epsilon
    notes = []
    constants = estimate_constants(sys, ctrl, sets, cfg.grid_density, safety_factor=cfg.safety_factor)
    caps = epsilon_caps(constants, observer_design)
    caps_ok = _cap_verdict(eps, caps, cfg.strict_caps, notes)
    bound = xi_for_epsilon(eps, T, constants, ctrl, observer_design, "general", caps, enforce_caps=False)
    xi = bound.xi if cfg.force_xi is None else float(cfg.force_xi)
    delta = _quiet_invariant_set(grid, sys, ctrl, sets, T, 0.0, "fixed", cfg.reach)
    delta_tilde = _quiet_invariant_set(grid, sys, ctrl, sets, T, xi, "fixed", cfg.reach)
    report = _assemble("finite", sys, ctrl, observer_design, sets, constants, bound, delta, delta_tilde, xi,
                       caps_ok, notes, {"T": T})
    return _finish(report, sys, ctrl, observer_design, sets, cfg, T)


def infinite_horizon_pipeline(sys: NormalFormSystem, ctrl: LinearizingController, observer_design: ObserverDesign,
                              sets: ConstraintSets, cfg: PipelineConfig | None = None) -> VerificationReport:
    """Certify ``Delta~`` for all time for a stabilizing gain."""
    cfg = cfg or PipelineConfig()
    M = ctrl.closed_loop_matrix()
    if not numkit.is_hurwitz(M):
        roots = numkit.eigenvalues_general(M)
        raise NotHurwitzError("A + BK is not Hurwitz; the infinite-horizon procedure needs a stabilizing gain",
                              roots[roots.real >= -numkit.HURWITZ_MARGIN])
    grid = _grid_for(sets, cfg)
    eps = observer_design.epsilon
    notes = [STABILITY_NOTE]

    delta = _quiet_invariant_set(grid, sys, ctrl, sets, "converged", 0.0, "fixed", cfg.reach)
    Q = numkit.solve_lyapunov(M)
    c_big = largest_c(Q, delta)
    c = c_big if cfg.c is None else float(cfg.c)
    omega_inside = contains(QuadraticSet(Q, c), delta)
    if not omega_inside:
        raise AssumptionViolation(f"the sublevel set x^T Q x <= {c:g} is not contained in Delta")

    constants = estimate_constants(sys, ctrl, sets, cfg.grid_density, safety_factor=cfg.safety_factor, Q=Q, c=c)
    x0_sq = constants.x_max if cfg.x0_norm_sq is None else float(cfg.x0_norm_sq)
    T1 = t1_horizon(Q, c, x0_sq)
    caps = epsilon_caps(constants, observer_design, Q, c, ctrl)
    caps_ok = _cap_verdict(eps, caps, cfg.strict_caps, notes)
    bound = xi_for_epsilon(eps, T1, constants, ctrl, observer_design, "stable", caps,
                           literal=cfg.literal_c2hat, enforce_caps=False)
    xi = bound.xi if cfg.force_xi is None else float(cfg.force_xi)
    delta_tilde = _quiet_invariant_set(grid, sys, ctrl, sets, T1, xi, "fixed", cfg.reach)

    report = _assemble("infinite", sys, ctrl, observer_design, sets, constants, bound, delta, delta_tilde, xi,
                       caps_ok, notes, {"tolerance": cfg.reach.tol, "x0_norm_sq": x0_sq})
    report.c, report.c_largest, report.T1, report.Q = c, c_big, T1, Q
    report.verdicts["omega_c_in_delta"] = omega_inside
    return _finish(report, sys, ctrl, observer_design, sets, cfg, T1)


def _assemble(mode, sys, ctrl, design, sets, constants, bound, delta, delta_tilde, xi, caps_ok, notes, horizon):
    grid = delta.grid
    safe = sdf_box(grid, sets.x_box)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EmptySetWarning)
        eroded = erode(safe, xi)
    areas = {
        "x_safe": set_area(safe),
        "x_safe_eroded": set_area(eroded),
        "delta": set_area(delta),
        "delta_tilde": set_area(delta_tilde),
    }
    verdicts = {
        "caps_ok": caps_ok,
        "delta_tilde_empty": delta_tilde.is_empty,
        "delta_empty": delta.is_empty,
        "delta_tilde_in_eroded_safe": _subset(delta_tilde, eroded),
        "delta_tilde_in_delta": _subset(delta_tilde, delta),
        "delta_in_safe": _subset(delta, safe),
    }
    grid_info = {"mins": list(grid.mins), "maxs": list(grid.maxs), "counts": list(grid.counts)}
    inputs = inputs_snapshot(sys, ctrl, design, sets, horizon=horizon, grid=grid_info, xi_used=xi)
    return VerificationReport(mode=mode, inputs=inputs, constants=constants, bound=bound,
                              delta_tilde_field=delta_tilde, delta_field=delta, areas=areas,
                              verdicts=verdicts, notes=notes)


def sample_inside(fld: LevelSetField, count: int, seed: int = 0) -> np.ndarray:
    """``count`` nodes drawn uniformly (with a fixed seed) from the field's interior."""
    pts = fld.grid.points()[fld.inside()]
    if pts.shape[0] == 0:
        return np.empty((0, fld.grid.ndim))
    rng = np.random.default_rng(seed)
    idx = rng.choice(pts.shape[0], size=min(count, pts.shape[0]), replace=False)
    return pts[np.sort(idx)]


def soundness_check(fld: LevelSetField, sys, ctrl, design, sets, T: float, samples: int = 20, seed: int = 0,
                    sim_cfg: IntegratorConfig | None = None) -> dict:
    """Simulate output feedback from certified states; count constraint violations.

    The estimate starts at the centre of ``X_safe``. A safety violation is any
    recorded state outside ``X_safe``; a control violation is any applied
    ``|u| > u_max``.
    """
    x0 = sample_inside(fld, samples, seed)
    if x0.shape[0] == 0:
        return {"samples": 0, "safety_violations": 0, "control_violations": 0, "max_box_excess": 0.0}
    trajs = simulate_output_feedback(sys, ctrl, design, sets, x0, None, max(T, 1e-3), sim_cfg)
    safety = control = 0
    excess = -math.inf
    for tr in trajs:
        lo = tr.states - sets.x_box[:, 0]
        hi = sets.x_box[:, 1] - tr.states
        worst = float(-np.min(np.minimum(lo, hi)))
        excess = max(excess, worst)
        safety += int(worst > 0)
        control += int(np.any(np.abs(tr.controls) > sets.u_max * (1 + 1e-12)))
    return {"samples": int(x0.shape[0]), "seed": seed, "safety_violations": safety,
            "control_violations": control, "max_box_excess": excess}
