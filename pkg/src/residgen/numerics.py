"""Small dense linear-algebra and ODE kernels.

Everything here works on plain ``numpy`` arrays.  Matrices are always
2-D float arrays; vectors are 1-D.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionError, DivergedSimulation, EvaluationError, InvalidMatrix, NoSolution

DEFAULT_RANK_TOL = 1e-9
EPS = np.finfo(float).eps


def as_matrix(M, name="matrix") -> np.ndarray:
    """Coerce ``M`` to a finite 2-D float array."""
    A = np.array(M, dtype=float)
    if A.ndim == 0:
        A = A.reshape(1, 1)
    elif A.ndim == 1:
        A = A.reshape(1, -1)
    elif A.ndim != 2:
        raise InvalidMatrix(f"{name} must be 2-D, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise InvalidMatrix(f"{name} has non-finite entries")
    return A


def _svd_rank(s: np.ndarray, rank_tol: float) -> int:
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > rank_tol * s[0]))


def null_space(M, rank_tol: float = DEFAULT_RANK_TOL) -> np.ndarray:
    """Orthonormal basis (as columns) of the right null space of ``M``.

    Singular values below ``rank_tol * sigma_max`` count as zero.  The result
    may have zero columns.
    """
    if rank_tol <= 0:
        raise ValueError("rank_tol must be positive")
    A = as_matrix(M)
    n = A.shape[1]
    if A.shape[0] == 0:
        return np.eye(n)
    _, s, Vh = np.linalg.svd(A, full_matrices=True)
    r = _svd_rank(s, rank_tol)
    return Vh[r:].T.copy()


@dataclass(frozen=True)
class AffineSolution:
    particular: np.ndarray
    homogeneous_basis: np.ndarray
    residual: float


def solve_affine(M, b, rank_tol: float = DEFAULT_RANK_TOL) -> AffineSolution:
    """Minimum-norm solution of ``M x = b`` plus a basis of the solution family.

    Raises :class:`NoSolution` when ``b`` is outside the column space of ``M``
    at tolerance ``rank_tol * ||[M b]||``.
    """
    A = as_matrix(M)
    rhs = np.array(b, dtype=float).reshape(-1)
    if rhs.shape[0] != A.shape[0]:
        raise DimensionError(f"M has {A.shape[0]} rows but b has length {rhs.shape[0]}")
    if not np.all(np.isfinite(rhs)):
        raise InvalidMatrix("b has non-finite entries")
    n = A.shape[1]
    if A.shape[0] == 0:
        return AffineSolution(np.zeros(n), np.eye(n), 0.0)

    U, s, Vh = np.linalg.svd(A, full_matrices=True)
    r = _svd_rank(s, rank_tol)
    coeffs = U[:, :r].T @ rhs
    x = Vh[:r].T @ (coeffs / s[:r])
    residual = float(np.linalg.norm(A @ x - rhs))
    scale = np.linalg.norm(np.column_stack([A, rhs]), 2)
    if residual > rank_tol * scale:
        raise NoSolution("right-hand side outside column space", residual=residual)
    return AffineSolution(x, Vh[r:].T.copy(), residual)


def companion_matrix(alpha: Sequence[float]) -> np.ndarray:
    """Observer-canonical companion of ``l^s + a1 l^(s-1) + ... + as``.

    Ones on the subdiagonal, ``-as, ..., -a1`` down the last column.
    """
    a = np.asarray(alpha, dtype=float).reshape(-1)
    s = a.size
    if s < 1:
        raise ValueError("need at least one characteristic coefficient")
    if not np.all(np.isfinite(a)):
        raise InvalidMatrix("non-finite characteristic coefficient")
    A = np.zeros((s, s))
    A[1:, :-1] = np.eye(s - 1)
    A[:, -1] = -a[::-1]
    return A


def companion_eigenvalues(alpha: Sequence[float]) -> np.ndarray:
    return np.linalg.eigvals(companion_matrix(alpha)).astype(complex)


def is_hurwitz(alpha: Sequence[float]) -> bool:
    return bool(np.all(companion_eigenvalues(alpha).real < 0))


def poly_from_roots(roots: Sequence[complex]) -> np.ndarray:
    """Characteristic coefficients ``a1..as`` of the monic polynomial with ``roots``."""
    c = np.array([1.0 + 0j])
    for r in roots:
        c = np.convolve(c, [1.0, -r])
    if np.max(np.abs(c.imag)) > 1e-9 * max(1.0, np.max(np.abs(c.real))):
        raise ValueError("roots do not form conjugate pairs")
    return c.real[1:]


# Pade [6/6] coefficients for exp.
_PADE6 = (1.0, 1 / 2, 5 / 44, 1 / 66, 1 / 792, 1 / 15840, 1 / 665280)


def matrix_exponential(M, t: float = 1.0) -> np.ndarray:
    """``exp(M t)`` by scaling and squaring with a diagonal Pade [6/6] approximant."""
    A = as_matrix(M) * float(t)
    n, m = A.shape
    if n != m:
        raise DimensionError(f"matrix exponential needs a square matrix, got {A.shape}")
    norm = np.linalg.norm(A, np.inf)
    k = 0
    if norm > 0.5:
        k = int(math.ceil(math.log2(norm / 0.5)))
    A = A / (2.0 ** k)

    ident = np.eye(n)
    A2 = A @ A
    c = _PADE6
    even = c[0] * ident + c[2] * A2
    odd = c[1] * ident + c[3] * A2
    P = A2
    P = P @ A2
    even = even + c[4] * P
    odd = odd + c[5] * P
    P = P @ A2
    even = even + c[6] * P
    odd = A @ odd
    E = np.linalg.solve(even - odd, even + odd)
    for _ in range(k):
        E = E @ E
    return E


def rk4_step(f: Callable, t: float, x: np.ndarray, h: float) -> np.ndarray:
    k1 = f(t, x)
    k2 = f(t + 0.5 * h, x + 0.5 * h * k1)
    k3 = f(t + 0.5 * h, x + 0.5 * h * k2)
    k4 = f(t + h, x + h * k3)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate_rk4(f: Callable, x0, t0: float, t1: float, dt: float):
    """Classical fixed-step RK4 for ``dx/dt = f(t, x)`` on ``[t0, t1]``.

    The last step is shortened so the final sample lands on ``t1``.  Returns
    ``(times, states)`` with one row per step, initial point included.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    x = np.array(x0, dtype=float).reshape(-1)
    times = [float(t0)]
    states = [x.copy()]
    t = float(t0)
    while t1 - t > 1e-12 * max(1.0, abs(t1)):
        h = min(dt, t1 - t)
        x_new = rk4_step(f, t, x, h)
        if not np.all(np.isfinite(x_new)):
            raise DivergedSimulation("non-finite state in RK4", last_time=t)
        x = x_new
        t = t + h
        if t1 - t <= 1e-12 * max(1.0, abs(t1)):
            t = float(t1)
        times.append(t)
        states.append(x.copy())
    return np.array(times), np.array(states)


def default_fd_step(p) -> float:
    return EPS ** (1.0 / 3.0) * (1.0 + float(np.linalg.norm(p)))


def directional_derivative(phi: Callable, p, d, h: float | None = None):
    """Central-difference estimate of ``grad phi(p) . d``.

    Works for scalar- or vector-valued ``phi``.
    """
    p = np.asarray(p, dtype=float)
    d = np.asarray(d, dtype=float)
    if h is None:
        h = default_fd_step(p)
    plus = np.asarray(phi(p + h * d), dtype=float)
    minus = np.asarray(phi(p - h * d), dtype=float)
    if not (np.all(np.isfinite(plus)) and np.all(np.isfinite(minus))):
        raise EvaluationError(f"non-finite field value near p={p}")
    out = (plus - minus) / (2.0 * h)
    return float(out) if out.ndim == 0 else out
