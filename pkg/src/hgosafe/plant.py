"""Normal-form plant, feedback-linearizing controller and its constants.

The plant is the chain of integrators ``x' = A x + B [b(x) + a(x) u]`` with
``y = x1``. The controller ``g(x) = (-b(x) + K x + v) / a(x)`` cancels the
nonlinearity and is clipped to ``[-u_max, u_max]``.

All state-valued functions accept arrays of shape ``(..., n)``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import AssumptionViolation
from .expr import compile_expression

SAFETY_FACTOR = 1.1


@dataclass(frozen=True)
class NormalFormSystem:
    n: int
    a: Callable[[np.ndarray], np.ndarray]
    b: Callable[[np.ndarray], np.ndarray]
    a0: float
    a_text: str = ""
    b_text: str = ""

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("state dimension must be >= 1")
        if not self.a0 > 0:
            raise ValueError("a0 must be positive")

    @classmethod
    def from_expressions(cls, n: int, a: str, b: str, a0: float) -> "NormalFormSystem":
        return cls(n, compile_expression(a, n), compile_expression(b, n), float(a0), a, b)


@dataclass(frozen=True)
class ConstraintSets:
    """``X_safe`` as a box (rows are ``[lo, hi]``) and ``U_safe = [-u_max, u_max]``."""

    x_box: np.ndarray
    u_max: float

    def __post_init__(self):
        box = np.asarray(self.x_box, dtype=float).reshape(-1, 2)
        if not np.all(np.isfinite(box)) or np.any(box[:, 0] > box[:, 1]):
            raise ValueError("every x_box interval must be finite and nonempty")
        if not self.u_max > 0:
            raise ValueError("u_max must be positive")
        object.__setattr__(self, "x_box", box)

    @property
    def n(self) -> int:
        return self.x_box.shape[0]

    @property
    def center(self) -> np.ndarray:
        return self.x_box.mean(axis=1)

    def contains(self, x, margin: float = 0.0) -> np.ndarray:
        x = np.asarray(x)
        lo = self.x_box[:, 0] + margin
        hi = self.x_box[:, 1] - margin
        return np.all((x >= lo) & (x <= hi), axis=-1)


@dataclass(frozen=True)
class LinearizingController:
    """Linear gain ``K`` plus reference ``v``.

    ``v_mode`` is ``"constant"`` (``v`` is the value) or ``"interval"``
    (``v`` is ``v_max`` and the reference ranges over ``[-v_max, v_max]``).
    """

    K: np.ndarray
    beta: float | None = None
    v_mode: str = "constant"
    v: float = 0.0

    def __post_init__(self):
        K = np.asarray(self.K, dtype=float).ravel()
        if not np.all(np.isfinite(K)):
            raise ValueError("K must be finite")
        if self.v_mode not in ("constant", "interval"):
            raise ValueError(f"unknown v_mode {self.v_mode!r}")
        if self.v_mode == "interval" and self.v < 0:
            raise ValueError("v_max must be nonnegative")
        object.__setattr__(self, "K", K)

    @classmethod
    def from_beta(cls, beta: float, n: int, **kw) -> "LinearizingController":
        return cls(np.full(n, -float(beta)), beta=float(beta), **kw)

    @property
    def v_nominal(self) -> float:
        return self.v if self.v_mode == "constant" else 0.0

    @property
    def v_max(self) -> float:
        return self.v if self.v_mode == "interval" else abs(self.v)

    def closed_loop_matrix(self) -> np.ndarray:
        A, B, _ = companion_matrices(self.K.size)
        return A + np.outer(B, self.K)


@dataclass(frozen=True)
class ConstantsReport:
    M1: float
    M2: float
    gamma: float
    L: float
    C1: float
    k: float
    x_max: float
    omega_boundary_min_sq: float | None
    grid_density: int
    safety_factor: float
    M1_raw: float
    gamma_raw: float
    C1_raw: float
    a_min: float
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "M1": self.M1,
            "M2": self.M2,
            "gamma": self.gamma,
            "L": self.L,
            "C1": self.C1,
            "k": self.k,
            "x_max": self.x_max,
            "omega_boundary_min_sq": self.omega_boundary_min_sq,
            "grid_density": self.grid_density,
            "safety_factor": self.safety_factor,
            "M1_raw": self.M1_raw,
            "gamma_raw": self.gamma_raw,
            "C1_raw": self.C1_raw,
            "a_min": self.a_min,
        }
        out.update(self.extras)
        return out


def companion_matrices(n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Chain-of-integrators ``(A, B, C)``: superdiagonal ones, ``B = e_n``, ``C = e_1^T``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    A = np.eye(n, k=1)
    B = np.zeros(n)
    B[-1] = 1.0
    C = np.zeros(n)
    C[0] = 1.0
    return A, B, C


def _a_checked(sys: NormalFormSystem, x) -> np.ndarray:
    a = sys.a(x)
    bad = ~(a > 0)
    if np.any(bad):
        first = np.asarray(x).reshape(-1, sys.n)[np.ravel(bad)][0]
        raise AssumptionViolation(f"a(x) <= 0 at x = {first.tolist()}")
    return a


def unsaturated_control(sys: NormalFormSystem, ctrl: LinearizingController, x, v=None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    v = ctrl.v_nominal if v is None else v
    a = _a_checked(sys, x)
    return (-sys.b(x) + x @ ctrl.K + v) / a


def saturated_control(sys, ctrl, sets: ConstraintSets, x, v=None) -> np.ndarray:
    g = unsaturated_control(sys, ctrl, x, v)
    return np.clip(g, -sets.u_max, sets.u_max)


def plant_rhs(sys: NormalFormSystem, x, u) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    dx = np.empty_like(x)
    dx[..., :-1] = x[..., 1:]
    dx[..., -1] = sys.b(x) + sys.a(x) * u
    return dx


def closed_loop_rhs(ctrl: LinearizingController, x, v=None) -> np.ndarray:
    """Ideal linearised dynamics ``(A + B K) x + B v``."""
    x = np.asarray(x, dtype=float)
    v = ctrl.v_nominal if v is None else v
    dx = np.empty_like(x)
    dx[..., :-1] = x[..., 1:]
    dx[..., -1] = x @ ctrl.K + v
    return dx


def box_grid(box: np.ndarray, density: int) -> tuple[list[np.ndarray], np.ndarray]:
    axes = [np.linspace(lo, hi, density) for lo, hi in box]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    return axes, mesh


def _neighbor_offsets(n: int):
    # one representative per +/- pair of the 3^n - 1 neighbour directions
    for off in itertools.product((-1, 0, 1), repeat=n):
        first = next((o for o in off if o != 0), 0)
        if first > 0:
            yield off


def max_lipschitz_quotient(values: np.ndarray, mesh: np.ndarray) -> float:
    """Largest ``|f(x) - f(x')| / |x - x'|`` over adjacent grid nodes (axis and diagonal)."""
    n = mesh.shape[-1]
    best = 0.0
    for off in _neighbor_offsets(n):
        src = tuple(slice(0, -1) if o > 0 else slice(1, None) if o < 0 else slice(None) for o in off)
        dst = tuple(slice(1, None) if o > 0 else slice(0, -1) if o < 0 else slice(None) for o in off)
        df = np.abs(values[dst] - values[src])
        dx = np.linalg.norm(mesh[dst] - mesh[src], axis=-1)
        if df.size:
            best = max(best, float(np.max(df / dx)))
    return best


def estimate_constants(
    sys: NormalFormSystem,
    ctrl: LinearizingController,
    sets: ConstraintSets,
    grid_density: int = 41,
    x0_region=None,
    k: float | None = None,
    safety_factor: float = SAFETY_FACTOR,
    Q=None,
    c: float | None = None,
) -> ConstantsReport:
    """Grid-sampled constants for the trajectory-distance bounds.

    ``M1``, ``gamma`` and ``C1`` are multiplied by ``safety_factor`` to offset
    the under-approximation inherent in sampling; the raw values are kept.
    ``L`` and ``omega_boundary_min_sq`` need the sublevel set ``x^T Q x <= c``
    and are only filled in when ``Q`` and ``c`` are given (``L`` falls back to
    ``M2``, which dominates it whenever that set lies inside ``X_safe``).
    """
    if grid_density < 2:
        raise ValueError("grid_density must be >= 2")
    box = sets.x_box
    _, mesh = box_grid(box, grid_density)
    a = sys.a(mesh)
    b = sys.b(mesh)
    if not np.all(np.isfinite(a)) or not np.all(np.isfinite(b)):
        raise AssumptionViolation("a(x) or b(x) is not finite on X_safe")
    a_min = float(np.min(a))
    if a_min < sys.a0:
        idx = np.unravel_index(int(np.argmin(a)), a.shape)
        raise AssumptionViolation(
            f"a(x) = {a_min:.6g} < a0 = {sys.a0:g} at x = {mesh[idx].tolist()}"
        )

    u_ends = (-sets.u_max, sets.u_max)  # b + a u is affine in u
    M1_raw = max(max_lipschitz_quotient(b + a * u, mesh) for u in u_ends)
    M2 = float(np.max(np.abs(a)))

    vs = (-ctrl.v, ctrl.v) if ctrl.v_mode == "interval" else (ctrl.v,)
    Kx = mesh @ ctrl.K
    gamma_raw = max(max_lipschitz_quotient((-b + Kx + v) / a, mesh) for v in vs)

    C1_raw = 0.0
    for u in u_ends:
        rhs = plant_rhs(sys, mesh, u)
        C1_raw = max(C1_raw, float(np.max(np.linalg.norm(rhs, axis=-1))))

    x_max = float(np.sum(np.max(box ** 2, axis=1)))

    if k is None:
        region = box if x0_region is None else np.asarray(x0_region, dtype=float).reshape(-1, 2)
        span = np.maximum(np.abs(region[:, 1] - box[:, 0]), np.abs(box[:, 1] - region[:, 0]))
        k = float(np.linalg.norm(span))

    L = M2
    omega_min = None
    extras = {}
    if Q is not None and c is not None:
        L, omega_min = omega_constants(sys, Q, c)
        extras["c"] = float(c)

    return ConstantsReport(
        M1=safety_factor * M1_raw,
        M2=M2,
        gamma=safety_factor * gamma_raw,
        L=L,
        C1=safety_factor * C1_raw,
        k=float(k),
        x_max=x_max,
        omega_boundary_min_sq=omega_min,
        grid_density=int(grid_density),
        safety_factor=float(safety_factor),
        M1_raw=M1_raw,
        gamma_raw=gamma_raw,
        C1_raw=C1_raw,
        a_min=a_min,
        extras=extras,
    )


def omega_constants(sys: NormalFormSystem, Q, c: float, samples: int = 64) -> tuple[float, float]:
    """``L = max |a|`` over ``{x^T Q x <= c}`` and ``min |x|^2`` over its boundary.

    The boundary minimum is exact (``c / lambda_max(Q)``); ``L`` is sampled on
    scaled copies of the ellipsoid boundary.
    """
    from .numkit import eigen_extrema_symmetric

    Q = np.asarray(Q, dtype=float)
    lam_min, lam_max = eigen_extrema_symmetric(Q)
    n = Q.shape[0]
    # map unit-sphere samples onto x^T Q x = r^2 c via Q^{-1/2}
    w, V = np.linalg.eigh(Q)
    root_inv = V @ np.diag(1.0 / np.sqrt(w)) @ V.T
    if n == 1:
        dirs = np.array([[1.0], [-1.0]])
    elif n == 2:
        t = np.linspace(0, 2 * math.pi, samples, endpoint=False)
        dirs = np.stack([np.cos(t), np.sin(t)], axis=-1)
    else:
        dirs = np.random.default_rng(0).standard_normal((samples * n * n, n))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    pts = []
    for r in np.linspace(0.0, 1.0, 9):
        pts.append(r * math.sqrt(c) * dirs @ root_inv.T)
    pts = np.concatenate(pts)
    L = float(np.max(np.abs(sys.a(pts))))
    return L, float(c / lam_max)
