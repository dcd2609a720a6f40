"""Trajectory-distance bounds between state and output feedback.

``xi(eps)`` bounds ``|x(t) - xbar(t)|`` on ``[0, T]``, where ``x`` is driven by
``g(xhat)`` and ``xbar`` by ``g(x)``. It is the larger of a transient term,
valid until the scaled observer error enters ``W(eta) <= rho eps^2`` at time
``T(eps)``, and a main term valid afterwards. The main term comes in a
general form (growth ``C2 = exp((1 + M1)(T - T(eps)))``) and a sharper form
for stabilizing gains (growth ``|exp((A + BK)(T - T(eps)))|_2``).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import numkit
from .errors import CapViolationError, EmptySetError, InfeasibleError, NotHurwitzError
from .observer import ObserverDesign
from .plant import ConstantsReport, LinearizingController

MODES = ("general", "stable")


@dataclass(frozen=True)
class EpsilonCaps:
    eps_bar: float
    eps3: float
    eps4: float
    eps_hat: float

    def binding(self) -> str:
        caps = {"eps_bar": self.eps_bar, "eps3": self.eps3, "eps4": self.eps4}
        return min(caps, key=caps.get)


@dataclass(frozen=True)
class BoundReport:
    epsilon: float
    T: float
    T_eps: float
    xi_transient: float
    xi_main: float
    xi: float
    mode: str
    constants: ConstantsReport
    C2_or_C2hat: float
    eps_caps: EpsilonCaps
    lambda_min_P: float
    lambda_max_P: float
    rho: float
    D_norm: float
    c2hat_literal: bool = False
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        out = {
            "epsilon": self.epsilon,
            "T": self.T,
            "T_eps": self.T_eps,
            "xi_transient": self.xi_transient,
            "xi_main": self.xi_main,
            "xi": self.xi,
            "mode": self.mode,
            "C2_or_C2hat": self.C2_or_C2hat,
            "c2hat_literal": self.c2hat_literal,
            "lambda_min_P": self.lambda_min_P,
            "lambda_max_P": self.lambda_max_P,
            "rho": self.rho,
            "D_norm": self.D_norm,
            "notes": list(self.notes),
        }
        out.update({k: v for k, v in asdict(self.eps_caps).items()})
        out.update({f"const_{k}": v for k, v in self.constants.to_dict().items()})
        return out


def _log_ratio(k: float, epsilon: float, n: int) -> float:
    # ln(k^2 / eps^(2n)), clamped at 0 once eps^n >= k
    if k <= 0:
        return 0.0
    return max(0.0, 2.0 * math.log(k) - 2.0 * n * math.log(epsilon))


def _exp(x: float) -> float:
    return math.exp(x) if x < 709.0 else math.inf


def d_norm(epsilon: float, n: int) -> float:
    return max(1.0, float(epsilon) ** (n - 1))


def transient_time(design: ObserverDesign, k: float, n: int | None = None) -> float:
    """Time for the scaled error to enter ``W(eta) <= rho eps^2``.

    From ``W(0) <= lambda_max(P) k^2 / eps^(2(n-1))`` and
    ``dW/dtau <= -W / lambda_max(P)`` with ``tau = t / eps``:
    ``T(eps) = eps lambda_max(P) ln(lambda_max(P) k^2 / (rho eps^(2n)))``,
    clamped at 0.
    """
    n = design.n if n is None else n
    eps = design.epsilon
    lam = design.lambda_max_P
    if k <= 0:
        return 0.0
    log_arg = math.log(lam) + 2.0 * math.log(k) - math.log(design.rho) - 2.0 * n * math.log(eps)
    if log_arg <= 0:
        return 0.0
    return eps * lam * log_arg


def bound_transient(epsilon: float, constants: ConstantsReport, design: ObserverDesign, n: int) -> float:
    """``C1 lambda_min(P) ln(k^2 / eps^(2n)) eps``, valid on ``[0, T(eps)]``."""
    return constants.C1 * design.lambda_min_P * _log_ratio(constants.k, epsilon, n) * epsilon


def bound_main_general(epsilon, T, constants: ConstantsReport, design: ObserverDesign, n,
                       T_eps: float | None = None) -> float:
    if T_eps is None:
        T_eps = transient_time(design, constants.k, n)
    C2 = _exp((1.0 + constants.M1) * max(T - T_eps, 0.0))
    lead = 4.0 * constants.C1 * design.lambda_min_P * _log_ratio(constants.k, epsilon, n)
    drift = constants.M2 * constants.gamma * d_norm(epsilon, n) / (1.0 + constants.M1)
    value = (lead * C2 + drift * C2 - drift) * epsilon
    return max(0.0, value)


def growth_factor(ctrl: LinearizingController, s: float, literal: bool = False) -> float:
    """``|exp((A+BK) s)|_2``, or with ``literal=True`` the eigenvector form ``|G||G^-1||exp(Theta s)|``."""
    M = ctrl.closed_loop_matrix()
    eig = numkit.eigenvalues_general(M)
    if not np.all(eig.real < -numkit.HURWITZ_MARGIN):
        raise NotHurwitzError("A + BK is not Hurwitz; the stable-mode bound does not apply", eig)
    if not literal:
        return numkit.spectral_norm(numkit.matrix_exponential(M, s))
    vals, G = numkit.eigenvectors(M)
    Ginv = numkit.solve_linear(G, np.eye(G.shape[0], dtype=complex))
    return numkit.spectral_norm(G) * numkit.spectral_norm(Ginv) * math.exp(float(np.max(vals.real)) * s)


def bound_main_stable(epsilon, T, constants: ConstantsReport, ctrl: LinearizingController,
                      design: ObserverDesign, n, T_eps: float | None = None,
                      literal: bool = False) -> float:
    """``[4 C1 lambda_min(P) ln(k^2/eps^(2n)) C2hat + (T - T(eps)) M2 gamma |D(eps)|] eps``."""
    if T_eps is None:
        T_eps = transient_time(design, constants.k, n)
    s = max(T - T_eps, 0.0)
    c2hat = growth_factor(ctrl, s, literal)
    lead = 4.0 * constants.C1 * design.lambda_min_P * _log_ratio(constants.k, epsilon, n)
    return (lead * c2hat + s * constants.M2 * constants.gamma * d_norm(epsilon, n)) * epsilon


def epsilon_bar(constants: ConstantsReport, design: ObserverDesign) -> float:
    if constants.M1 == 0:
        return math.inf
    return 1.0 / (4.0 * constants.M1 * numkit.spectral_norm(design.P))


def epsilon_caps(constants: ConstantsReport, design: ObserverDesign, Q=None, c: float | None = None,
                 ctrl: LinearizingController | None = None) -> EpsilonCaps:
    """Upper limits on ``eps`` for invariance of the observer and state sublevel sets.

    Without ``Q`` and ``c`` only ``eps_bar`` is finite.
    """
    eps_bar = epsilon_bar(constants, design)
    if Q is None or c is None:
        return EpsilonCaps(eps_bar, math.inf, math.inf, eps_bar)
    n = design.n
    lam_max_Q = numkit.eigen_extrema_symmetric(Q)[1]
    boundary_min = constants.omega_boundary_min_sq
    if boundary_min is None:
        boundary_min = c / lam_max_Q
    Lg = constants.L * constants.gamma
    denom3 = 2.0 * lam_max_Q * constants.x_max * Lg
    eps3 = boundary_min / denom3 if denom3 > 0 else math.inf

    # 16 lambda_max(Q)^3 L^2 gamma^2 |D(eps)|^2 eps^2 <= c, with |D(eps)| = max(1, eps^(n-1))
    coef = 16.0 * lam_max_Q ** 3 * Lg ** 2
    if coef == 0:
        eps4 = math.inf
    else:
        eps4 = math.sqrt(c / coef)
        if eps4 > 1.0:
            eps4 = (c / coef) ** (1.0 / (2 * n))
    return EpsilonCaps(eps_bar, eps3, eps4, min(eps_bar, eps3, eps4))


def check_caps(epsilon: float, caps: EpsilonCaps) -> None:
    if not epsilon < caps.eps_hat:
        raise CapViolationError(
            f"epsilon = {epsilon:g} is not below eps_hat = {caps.eps_hat:.6g} (binding cap: {caps.binding()})",
            caps.binding(),
        )


def xi_for_epsilon(epsilon: float, T: float, constants: ConstantsReport, ctrl: LinearizingController,
                   design: ObserverDesign, mode: str = "general", caps: EpsilonCaps | None = None,
                   literal: bool = False, enforce_caps: bool = True) -> BoundReport:
    """Distance bound ``xi`` for a given ``eps`` over ``[0, T]``.

    ``caps`` defaults to ``eps_bar`` only (the finite-horizon requirement).
    When ``T <= T(eps)`` the whole horizon lies in the transient phase and
    the main term is zero.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if design.epsilon != epsilon:
        design = design.with_epsilon(epsilon)
    n = design.n
    caps = caps or epsilon_caps(constants, design)
    if enforce_caps:
        check_caps(epsilon, caps)
    T_eps = transient_time(design, constants.k, n)
    xi_t = bound_transient(epsilon, constants, design, n)
    notes = []
    if T <= T_eps:
        xi_m, growth = 0.0, 1.0
        notes.append("horizon ends inside the observer transient; main term not used")
    elif mode == "general":
        xi_m = bound_main_general(epsilon, T, constants, design, n, T_eps)
        growth = _exp((1.0 + constants.M1) * (T - T_eps))
    else:
        xi_m = bound_main_stable(epsilon, T, constants, ctrl, design, n, T_eps, literal)
        growth = growth_factor(ctrl, T - T_eps, literal)
    return BoundReport(
        epsilon=float(epsilon),
        T=float(T),
        T_eps=T_eps,
        xi_transient=xi_t,
        xi_main=xi_m,
        xi=max(xi_t, xi_m),
        mode=mode,
        constants=constants,
        C2_or_C2hat=growth,
        eps_caps=caps,
        lambda_min_P=design.lambda_min_P,
        lambda_max_P=design.lambda_max_P,
        rho=design.rho,
        D_norm=d_norm(epsilon, n),
        c2hat_literal=literal,
        notes=notes,
    )


def epsilon_for_xi(xi_target: float, T: float, constants: ConstantsReport, ctrl: LinearizingController,
                   design: ObserverDesign, mode: str = "general", caps: EpsilonCaps | None = None,
                   eps_max: float = 1.0, rtol: float = 1e-6, literal: bool = False) -> float:
    """Largest ``eps`` below the caps with ``xi(eps) <= xi_target``.

    ``xi`` vanishes as ``eps -> 0`` but need not be monotone, so a geometric
    scan downward from the cap brackets the first feasible value and
    bisection refines it.
    """
    if not xi_target > 0:
        raise ValueError("xi_target must be positive")
    caps = caps or epsilon_caps(constants, design)
    top = min(caps.eps_hat, eps_max) * (1.0 - 1e-9)

    def xi(e):
        return xi_for_epsilon(e, T, constants, ctrl, design, mode, caps, literal, enforce_caps=False).xi

    if xi(top) <= xi_target:
        return top
    prev = top
    e = top / 2.0
    while e >= 1e-12:
        if xi(e) <= xi_target:
            lo, hi = e, prev
            while hi - lo > rtol * lo:
                mid = 0.5 * (lo + hi)
                if xi(mid) <= xi_target:
                    lo = mid
                else:
                    hi = mid
            return lo
        prev = e
        e /= 2.0
    raise InfeasibleError(f"no epsilon in [1e-12, {top:.6g}] achieves xi <= {xi_target:g}")


def t1_horizon(Q, c: float, x0_norm_sq: float) -> float:
    """``(lambda_max(Q) / 2) ln(lambda_max(Q) |x0|^2 / c)``, clamped at 0."""
    if not c > 0:
        raise ValueError("c must be positive")
    lam = numkit.eigen_extrema_symmetric(Q)[1]
    arg = lam * x0_norm_sq / c
    if arg <= 1.0:
        return 0.0
    return 0.5 * lam * math.log(arg)


def quadratic_form(Q, points) -> np.ndarray:
    return np.einsum("...i,ij,...j->...", points, np.asarray(Q, dtype=float), points)


def largest_c(Q, delta_field, rtol: float = 1e-3) -> float:
    """Largest ``c`` such that every grid node with ``x^T Q x <= c`` lies in ``Delta``.

    ``delta_field`` follows the negative-inside convention. Bisection on
    ``(0, c_upper]`` with ``c_upper`` the largest ``x^T Q x`` over nodes of
    ``Delta``.
    """
    inside = delta_field.values < 0
    if not np.any(inside):
        raise EmptySetError("Delta has no interior nodes")
    V = quadratic_form(Q, delta_field.grid.points())
    c_upper = float(np.max(V[inside]))

    def fits(c):
        return bool(np.all(inside[V <= c]))

    if fits(c_upper):
        return c_upper
    lo, hi = 0.0, c_upper
    if not fits(rtol * c_upper * 1e-6):
        return 0.0
    while hi - lo > rtol * max(lo, 1e-300):
        mid = 0.5 * (lo + hi)
        if fits(mid):
            lo = mid
        else:
            hi = mid
    return lo
