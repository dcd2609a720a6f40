"""Dense linear algebra for the small (n <= 8) matrices used throughout.

Matrices are plain 2-D numpy arrays. The routines here are deliberately
self-contained (Gaussian elimination, Hessenberg-QR, cyclic Jacobi, Kronecker
Lyapunov, Pade scaling-and-squaring) so the test-suite can check them against
LAPACK through numpy/scipy as an independent route.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import (
    AsymmetryError,
    IndefiniteError,
    MatrixOverflowError,
    NonConvergenceError,
    NotHurwitzError,
    SingularMatrixError,
)

PIVOT_TOL = 1e-12
SYMMETRY_TOL = 1e-10
HURWITZ_MARGIN = 1e-9


def _as_square(M) -> np.ndarray:
    M = np.asarray(M)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    return M


def solve_linear(A, b) -> np.ndarray:
    """Solve ``A x = b`` by Gaussian elimination with partial pivoting.

    ``b`` may be a vector or a matrix of right-hand sides. Works for real or
    complex input.
    """
    A = _as_square(A)
    n = A.shape[0]
    b = np.asarray(b)
    vector = b.ndim == 1
    dtype = np.result_type(A, b, float)
    U = A.astype(dtype, copy=True)
    X = b.reshape(n, -1).astype(dtype, copy=True)
    scale = max(float(np.max(np.abs(U))), 1.0) if n else 1.0

    for k in range(n):
        p = k + int(np.argmax(np.abs(U[k:, k])))
        if abs(U[p, k]) <= PIVOT_TOL * scale:
            raise SingularMatrixError(f"pivot {abs(U[p, k]):.3e} in column {k} below tolerance")
        if p != k:
            U[[k, p]] = U[[p, k]]
            X[[k, p]] = X[[p, k]]
        f = U[k + 1:, k] / U[k, k]
        U[k + 1:, k:] -= np.outer(f, U[k, k:])
        X[k + 1:] -= np.outer(f, X[k])

    for k in range(n - 1, -1, -1):
        X[k] = (X[k] - U[k, k + 1:] @ X[k + 1:]) / U[k, k]

    return X[:, 0] if vector else X


def hessenberg(M) -> np.ndarray:
    """Householder reduction to upper Hessenberg form (similarity transform)."""
    H = _as_square(M).astype(complex, copy=True)
    n = H.shape[0]
    for k in range(n - 2):
        x = H[k + 1:, k].copy()
        alpha = np.linalg.norm(x)
        if alpha == 0.0:
            continue
        phase = x[0] / abs(x[0]) if x[0] != 0 else 1.0
        v = x
        v[0] += phase * alpha
        v /= np.linalg.norm(v)
        H[k + 1:, :] -= 2.0 * np.outer(v, v.conj() @ H[k + 1:, :])
        H[:, k + 1:] -= 2.0 * np.outer(H[:, k + 1:] @ v, v.conj())
        H[k + 2:, k] = 0.0
    return H


def _qr_step(B: np.ndarray, mu: complex) -> np.ndarray:
    # one shifted QR sweep on a Hessenberg block using Givens rotations
    m = B.shape[0]
    B = B - mu * np.eye(m)
    rots = []
    for k in range(m - 1):
        a, b = B[k, k], B[k + 1, k]
        r = math.hypot(abs(a), abs(b))
        if r == 0.0:
            G = np.eye(2, dtype=complex)
        else:
            c, s = a / r, b / r
            G = np.array([[c.conjugate(), s.conjugate()], [-s, c]])
        B[k:k + 2, k:] = G @ B[k:k + 2, k:]
        rots.append(G)
    for k, G in enumerate(rots):
        B[: k + 2, k:k + 2] = B[: k + 2, k:k + 2] @ G.conj().T
    return B + mu * np.eye(m)


def eigenvalues_general(M) -> np.ndarray:
    """All eigenvalues of a square matrix, as a complex array.

    Hessenberg reduction followed by Wilkinson-shifted QR with deflation. The
    iteration budget is ``100 * n**2`` sweeps; exceeding it raises
    ``NonConvergenceError``.
    """
    M = _as_square(M)
    n = M.shape[0]
    if n == 0:
        return np.zeros(0, dtype=complex)
    H = hessenberg(M)
    eps = np.finfo(float).eps
    budget = 100 * n * n
    iters = 0
    eigs: list[complex] = []
    hi = n - 1
    since_deflation = 0
    while hi >= 0:
        if hi == 0:
            eigs.append(H[0, 0])
            break
        # locate the start of the unreduced block ending at hi
        lo = hi
        while lo > 0:
            sub = abs(H[lo, lo - 1])
            if sub <= eps * (abs(H[lo, lo]) + abs(H[lo - 1, lo - 1])) or sub < 1e-300:
                H[lo, lo - 1] = 0.0
                break
            lo -= 1
        if lo == hi:
            eigs.append(H[hi, hi])
            hi -= 1
            since_deflation = 0
            continue
        if iters >= budget:
            raise NonConvergenceError(f"QR iteration did not converge in {budget} sweeps")
        a, b = H[hi - 1, hi - 1], H[hi - 1, hi]
        c, d = H[hi, hi - 1], H[hi, hi]
        if since_deflation and since_deflation % 11 == 0:
            mu = d + 0.75 * abs(c)  # exceptional shift breaks cycles
        else:
            tr, det = a + d, a * d - b * c
            disc = np.sqrt(tr * tr / 4 - det)
            l1, l2 = tr / 2 + disc, tr / 2 - disc
            mu = l1 if abs(l1 - d) < abs(l2 - d) else l2
        H[lo:hi + 1, lo:hi + 1] = _qr_step(H[lo:hi + 1, lo:hi + 1], mu)
        iters += 1
        since_deflation += 1
    vals = np.array(eigs[::-1], dtype=complex)
    if not np.all(np.isfinite(vals)):
        raise NonConvergenceError("eigenvalue iteration produced non-finite values")
    if np.isrealobj(M):
        # snap negligible imaginary parts left over from complex arithmetic
        scale = max(1.0, float(np.max(np.abs(vals))))
        vals = np.where(np.abs(vals.imag) < 1e-12 * scale, vals.real + 0j, vals)
    return vals


def is_hurwitz(M, margin: float = HURWITZ_MARGIN) -> bool:
    return bool(np.all(eigenvalues_general(M).real < -margin))


def companion(coeffs) -> np.ndarray:
    """Companion matrix of ``s^n + c1 s^(n-1) + ... + cn``."""
    c = np.asarray(coeffs, dtype=float)
    n = c.size
    C = np.zeros((n, n))
    C[0, :] = -c
    C[1:, :-1] += np.eye(n - 1)
    return C


def _check_symmetric(M) -> np.ndarray:
    M = _as_square(M).astype(float)
    scale = max(1.0, float(np.max(np.abs(M)))) if M.size else 1.0
    if np.max(np.abs(M - M.T), initial=0.0) > SYMMETRY_TOL * scale:
        raise AsymmetryError("matrix is not symmetric within tolerance")
    return 0.5 * (M + M.T)


def eigenvalues_symmetric(M) -> np.ndarray:
    """Eigenvalues of a real symmetric matrix by cyclic Jacobi rotations (ascending)."""
    S = _check_symmetric(M)
    n = S.shape[0]
    total = np.linalg.norm(S)
    tiny = 1e-17 * max(total, 1e-300)
    for _sweep in range(100):
        off = math.sqrt(max(np.sum(np.triu(S, 1) ** 2) * 2.0, 0.0))
        if off <= 1e-15 * max(total, 1e-300):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if abs(S[p, q]) <= tiny:
                    S[p, q] = S[q, p] = 0.0
                    continue
                theta = (S[q, q] - S[p, p]) / (2.0 * S[p, q])
                if abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                R = np.eye(n)
                R[p, p] = R[q, q] = c
                R[p, q], R[q, p] = s, -s
                S = R.T @ S @ R
    else:
        raise NonConvergenceError("Jacobi sweeps did not converge")
    return np.sort(np.diag(S))


def eigen_extrema_symmetric(M) -> tuple[float, float]:
    """(lambda_min, lambda_max) of a symmetric matrix."""
    w = eigenvalues_symmetric(M)
    return float(w[0]), float(w[-1])


def solve_lyapunov(M) -> np.ndarray:
    """Solve ``M^T P + P M = -I`` for symmetric positive-definite P.

    Uses dense Kronecker vectorization; fine for n <= 8.
    """
    M = _as_square(M).astype(float)
    n = M.shape[0]
    eig = eigenvalues_general(M)
    if not np.all(eig.real < -HURWITZ_MARGIN):
        raise NotHurwitzError("Lyapunov equation needs a Hurwitz matrix", eig)
    I = np.eye(n)
    # vec(M^T P + P M) = (I kron M^T + M^T kron I) vec(P), column-major vec
    L = np.kron(I, M.T) + np.kron(M.T, I)
    p = solve_linear(L, -I.flatten(order="F"))
    P = p.reshape((n, n), order="F")
    P = 0.5 * (P + P.T)
    lo, _ = eigen_extrema_symmetric(P)
    if lo <= 0.0:
        raise IndefiniteError(f"Lyapunov solution is not positive definite (lambda_min={lo:.3e})")
    return P


def _pade_coefficients(q: int) -> list[float]:
    f = math.factorial
    return [f(2 * q - k) * f(q) / (f(2 * q) * f(k) * f(q - k)) for k in range(q + 1)]


_PADE8 = _pade_coefficients(8)


def matrix_exponential(M, t: float = 1.0) -> np.ndarray:
    """``exp(M t)`` by scaling and squaring around a [8/8] Pade approximant."""
    A = _as_square(M).astype(float) * float(t)
    n = A.shape[0]
    norm1 = float(np.max(np.sum(np.abs(A), axis=0))) if n else 0.0
    s = 0
    if norm1 > 0.5:
        s = int(math.ceil(math.log2(norm1 / 0.5)))
    if s > 50:
        raise MatrixOverflowError(f"|t|*||M|| = {norm1:.3e} needs {s} squarings (limit 50)")
    A = A / (2.0 ** s)
    I = np.eye(n)
    N = np.zeros_like(A)
    D = np.zeros_like(A)
    power = I
    for k, ck in enumerate(_PADE8):
        if k:
            power = power @ A
        N += ck * power
        D += ck * (-1) ** k * power
    E = solve_linear(D, N)
    for _ in range(s):
        E = E @ E
        if not np.all(np.isfinite(E)):
            raise MatrixOverflowError("matrix exponential overflowed during squaring")
    return E


def spectral_norm(M) -> float:
    """Largest singular value. Complex input is handled through its real embedding."""
    M = np.asarray(M)
    if M.ndim == 1:
        M = M.reshape(-1, 1)
    if np.iscomplexobj(M):
        M = np.block([[M.real, -M.imag], [M.imag, M.real]])
    M = M.astype(float)
    if M.size == 0:
        return 0.0
    G = M.T @ M
    _, hi = eigen_extrema_symmetric(0.5 * (G + G.T))
    return math.sqrt(max(hi, 0.0))


def eigenvectors(M) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues and unit eigenvectors (columns) by inverse iteration.

    Raises ``SingularMatrixError`` if the eigenvectors are numerically
    dependent, i.e. the matrix is defective or close to it.
    """
    M = _as_square(M).astype(float)
    n = M.shape[0]
    vals = eigenvalues_general(M)
    G = np.zeros((n, n), dtype=complex)
    rng = np.random.default_rng(0)
    scale = max(1.0, float(np.max(np.abs(M))))
    for j, lam in enumerate(vals):
        shift = lam + 1e-10 * scale * (1 + 1j)
        v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        for _ in range(3):
            v = solve_linear(M - shift * np.eye(n), v)
            v /= np.linalg.norm(v)
        G[:, j] = v
    # condition check through the smallest singular value of G
    GhG = G.conj().T @ G
    smallest = eigen_extrema_symmetric(np.block([[GhG.real, -GhG.imag], [GhG.imag, GhG.real]]))[0]
    if smallest < 1e-14:
        raise SingularMatrixError("matrix is defective: eigenvectors are dependent")
    return vals, G
