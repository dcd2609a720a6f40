"""High-gain observer and its scaled error coordinates.

With ``eta_i = (x_i - xhat_i) / eps^(n-i)`` the estimation error obeys
``eps * eta' = Lambda eta + O(eps)``, where ``Lambda`` has ``-alpha`` down its
first column and ones on the superdiagonal. ``W(eta) = eta^T P eta`` with
``Lambda^T P + P Lambda = -I`` certifies the fast subsystem.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numkit
from .errors import NotHurwitzError
from .plant import NormalFormSystem, plant_rhs


@dataclass(frozen=True)
class ObserverDesign:
    alphas: np.ndarray
    epsilon: float
    rho: float
    H: np.ndarray
    Lambda: np.ndarray
    P: np.ndarray
    D: np.ndarray
    roots: np.ndarray
    rho_is_default: bool = True

    @property
    def n(self) -> int:
        return self.alphas.size

    @property
    def lambda_min_P(self) -> float:
        return numkit.eigen_extrema_symmetric(self.P)[0]

    @property
    def lambda_max_P(self) -> float:
        return numkit.eigen_extrema_symmetric(self.P)[1]

    def with_epsilon(self, epsilon: float) -> "ObserverDesign":
        return build_observer(self.alphas, epsilon, None if self.rho_is_default else self.rho)

    def to_dict(self) -> dict:
        return {
            "alphas": self.alphas.tolist(),
            "epsilon": self.epsilon,
            "rho": self.rho,
            "rho_is_default": self.rho_is_default,
            "H": self.H.tolist(),
            "Lambda": self.Lambda.tolist(),
            "P": self.P.tolist(),
            "lambda_min_P": self.lambda_min_P,
            "lambda_max_P": self.lambda_max_P,
            "observer_roots": [[z.real, z.imag] for z in self.roots],
        }


def scaling_matrix(epsilon: float, n: int) -> np.ndarray:
    """``D(eps) = diag(eps^(n-1), ..., eps, 1)``."""
    return np.diag(float(epsilon) ** np.arange(n - 1, -1, -1, dtype=float))


def boundary_layer_matrix(alphas) -> np.ndarray:
    alphas = np.asarray(alphas, dtype=float)
    n = alphas.size
    Lam = np.eye(n, k=1)
    Lam[:, 0] = -alphas
    return Lam


def build_observer(alphas, epsilon: float, rho: float | None = None) -> ObserverDesign:
    """Assemble gains, ``Lambda``, ``P`` and ``D(eps)``.

    ``rho`` defaults to ``lambda_max(P)``: any positive level gives a valid
    target set, so the default only has to be reproducible.
    """
    alphas = np.asarray(alphas, dtype=float).ravel()
    if alphas.size < 1:
        raise ValueError("need at least one observer coefficient")
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if rho is not None and not rho > 0:
        raise ValueError("rho must be positive")
    n = alphas.size
    roots = numkit.eigenvalues_general(numkit.companion(alphas))
    bad = roots[roots.real >= -numkit.HURWITZ_MARGIN]
    if bad.size:
        listed = ", ".join(f"{z.real:.6g}{z.imag:+.6g}j" for z in bad)
        raise NotHurwitzError(f"observer polynomial is not Hurwitz; offending roots: {listed}", bad)
    Lam = boundary_layer_matrix(alphas)
    P = numkit.solve_lyapunov(Lam)
    H = alphas / float(epsilon) ** np.arange(1, n + 1)
    default = rho is None
    if default:
        rho = numkit.eigen_extrema_symmetric(P)[1]
    return ObserverDesign(
        alphas=alphas,
        epsilon=float(epsilon),
        rho=float(rho),
        H=H,
        Lambda=Lam,
        P=P,
        D=scaling_matrix(epsilon, n),
        roots=roots,
        rho_is_default=default,
    )


def observer_rhs(sys: NormalFormSystem, design: ObserverDesign, x_hat, u, y) -> np.ndarray:
    """``xhat' = A xhat + B [b(xhat) + a(xhat) u] + H (y - xhat_1)``."""
    x_hat = np.asarray(x_hat, dtype=float)
    innovation = np.asarray(y, dtype=float) - x_hat[..., 0]
    return plant_rhs(sys, x_hat, u) + design.H * innovation[..., None]


def eta_from_error(x, x_hat, epsilon: float, n: int) -> np.ndarray:
    e = np.asarray(x, dtype=float) - np.asarray(x_hat, dtype=float)
    return e / float(epsilon) ** np.arange(n - 1, -1, -1, dtype=float)


def W(design: ObserverDesign, eta) -> np.ndarray:
    eta = np.asarray(eta, dtype=float)
    return np.einsum("...i,ij,...j->...", eta, design.P, eta)


def omega_rho_contains(design: ObserverDesign, eta) -> np.ndarray:
    """Membership in the closed set ``{eta : W(eta) <= rho eps^2}``."""
    return W(design, eta) <= design.rho * design.epsilon ** 2
