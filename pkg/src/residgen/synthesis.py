"""Parity-vector synthesis and residual-generator construction.

The residual generator is the functional observer

    dz/dt = A z + B y,    fhat = C z + D y

with ``A`` in observer-canonical (companion) form built from the
characteristic coefficients ``alpha`` and ``B``, ``D`` built from the parity
vectors ``v_0 .. v_s``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionError, InvalidSpec, NoSolution, UnsupportedOrder
from .exo import ExoSystem, apply_char_poly, char_poly_partial
from .lie import LieEngine
from .numerics import (DEFAULT_RANK_TOL, companion_eigenvalues, companion_matrix, is_hurwitz,
                       poly_from_roots, solve_affine)
from .plant import ExtendedSystem, LinearPlant


@dataclass(frozen=True)
class ParitySolution:
    v: np.ndarray          # (s+1, p), rows v_0 .. v_s
    alpha: np.ndarray      # (s,), alpha_1 .. alpha_s
    mode: str = "alpha_fixed"
    residual: float = 0.0
    kind: str | None = None

    def __post_init__(self):
        v = np.array(self.v, dtype=float)
        if v.ndim == 1:
            v = v.reshape(1, -1)
        a = np.array(self.alpha, dtype=float).reshape(-1)
        if a.size < 1 or v.shape[0] != a.size + 1:
            raise DimensionError(f"need s+1 parity vectors for s={a.size}, got {v.shape[0]}")
        if not is_hurwitz(a):
            raise InvalidSpec(f"characteristic coefficients {a.tolist()} are not Hurwitz")
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "alpha", a)

    @property
    def s(self):
        return self.alpha.size

    @property
    def p(self):
        return self.v.shape[1]

    @property
    def eigenvalues(self):
        return companion_eigenvalues(self.alpha)

    def to_dict(self):
        eig = self.eigenvalues
        return {
            "s": self.s, "mode": self.mode, "kind": self.kind,
            "v": self.v.tolist(), "alpha": self.alpha.tolist(),
            "eigenvalues": [[float(e.real), float(e.imag)] for e in eig],
            "residual": self.residual,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["v"], dtype=float), np.array(d["alpha"], dtype=float),
                   d.get("mode", "alpha_fixed"), d.get("residual", 0.0), d.get("kind"))


@dataclass(frozen=True)
class InjectionSolution:
    """Parity *functions* ``v_j(y)`` for the output-injection observer."""
    v_fns: tuple
    alpha: np.ndarray

    def __post_init__(self):
        a = np.array(self.alpha, dtype=float).reshape(-1)
        if len(self.v_fns) != a.size + 1:
            raise DimensionError("need s+1 parity functions")
        if not is_hurwitz(a):
            raise InvalidSpec("characteristic coefficients are not Hurwitz")
        object.__setattr__(self, "alpha", a)
        object.__setattr__(self, "v_fns", tuple(self.v_fns))

    @property
    def s(self):
        return self.alpha.size


class ResidualGenerator:
    """Linear functional observer, optionally with output injection.

    With ``beta``/``delta`` set the observer is ``dz/dt = A z + beta(y)``,
    ``fhat = C z + delta(y)`` and ``B``/``D`` are ``None``.
    """

    def __init__(self, A, B=None, C=None, D=None, beta=None, delta=None, name="observer"):
        self.A = np.array(A, dtype=float)
        s = self.A.shape[0]
        self.C = np.array(C, dtype=float).reshape(1, s)
        linear = B is not None or D is not None
        if linear and (beta is not None or delta is not None):
            raise InvalidSpec("B/D and beta/delta are mutually exclusive")
        if linear:
            self.B = np.array(B, dtype=float).reshape(s, -1)
            self.D = np.array(D, dtype=float).reshape(1, -1)
        else:
            self.B = self.D = None
        self.beta, self.delta = beta, delta
        self.name = name
        if not self.observable():
            raise InvalidSpec("(C, A) is not observable")
        if not np.all(np.linalg.eigvals(self.A).real < 0):
            raise InvalidSpec("A is not Hurwitz")

    @property
    def s(self):
        return self.A.shape[0]

    @property
    def injection(self):
        return self.B is None

    def observable(self):
        s = self.s
        rows = [self.C]
        for _ in range(s - 1):
            rows.append(rows[-1] @ self.A)
        return np.linalg.matrix_rank(np.vstack(rows)) == s

    def input_term(self, y):
        if self.injection:
            return np.asarray(self.beta(y), dtype=float).reshape(self.s)
        return self.B @ y

    def feedthrough(self, y) -> float:
        if self.injection:
            return float(self.delta(y))
        return float((self.D @ y)[0])

    def deriv(self, z, y):
        return self.A @ z + self.input_term(y)

    def estimate(self, z, y) -> float:
        return float((self.C @ z)[0]) + self.feedthrough(y)

    def to_dict(self):
        if self.injection:
            raise InvalidSpec("output-injection observers have no matrix form")
        return {"name": self.name, "A": self.A.tolist(), "B": self.B.tolist(),
                "C": self.C.tolist(), "D": self.D.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["A"], d["B"], d["C"], d["D"], name=d.get("name", "observer"))


# ---------------------------------------------------------------------------
# Linear systems


@dataclass(frozen=True)
class Gamma:
    o: np.ndarray
    f: np.ndarray
    w: np.ndarray


def _markov(plant: LinearPlant, s: int, col: np.ndarray):
    """``[H col, H F col, ..., H F^(s-1) col]``."""
    out, v = [], col
    for _ in range(s):
        out.append(plant.H @ v)
        v = plant.F @ v
    return out


def build_gamma(plant: LinearPlant, exo: ExoSystem, s: int) -> Gamma:
    if s < 1:
        raise ValueError("observer order s must be >= 1")
    if plant.G.shape[1] != 1 or exo.Q.shape[0] != 1:
        raise DimensionError("scalar fault channel required")
    p, m = plant.p, plant.m
    rows, M = [], plant.H
    for _ in range(s + 1):
        rows.append(M)
        M = M @ plant.F
    Go = np.vstack(rows)

    mg = _markov(plant, s, plant.G)
    Tf = np.zeros(((s + 1) * p, s + 1))
    for i in range(s + 1):
        for j in range(i + 1):
            Tf[i * p:(i + 1) * p, j] = (plant.J if i == j else mg[i - j - 1])[:, 0]
    QR = [exo.Q]
    for _ in range(s):
        QR.append(QR[-1] @ exo.R)
    Gf = Tf @ np.vstack(QR)

    Gw = np.zeros(((s + 1) * p, (s + 1) * m))
    if m:
        me = _markov(plant, s, plant.E)
        for i in range(s + 1):
            for j in range(i + 1):
                Gw[i * p:(i + 1) * p, j * m:(j + 1) * m] = plant.K if i == j else me[i - j - 1]
    return Gamma(Go, Gf, Gw)


def _sensor_gamma_f(plant: LinearPlant, exo: ExoSystem, s: int):
    # G = 0: sum_k v_k J Q R^k, i.e. block row k is J Q R^k
    blocks, QR = [], exo.Q
    for _ in range(s + 1):
        blocks.append(plant.J @ QR)
        QR = QR @ exo.R
    return np.vstack(blocks)


def _rhs_f(exo, alpha):
    return -(exo.Q @ apply_char_poly(exo, alpha))[0]


def _system(plant, exo, s, gamma: Gamma):
    Gf = _sensor_gamma_f(plant, exo, s) if not np.any(plant.G) else gamma.f
    return np.hstack([gamma.o, Gf, gamma.w])


def _no_solution_reason(gamma: Gamma):
    if not np.any(gamma.f):
        return "fault channel outside output span"
    return "parity equations inconsistent at tolerance"


def solve_parity_linear(plant: LinearPlant, exo: ExoSystem, s: int, alpha=None, *,
                        eigenvalues=None, rank_tol: float = DEFAULT_RANK_TOL,
                        budget: int = 10_000, seed: int = 0) -> ParitySolution:
    """Solve ``[v_0 .. v_s][G_o G_f G_w] = [0, -Q P_A(R), 0]``.

    With ``alpha`` (or ``eigenvalues``) given, only ``v`` is unknown.
    Otherwise ``alpha`` joins the unknowns and the solution family is
    searched for a Hurwitz point.  Raises :class:`NoSolution`.
    """
    if eigenvalues is not None:
        if alpha is not None:
            raise InvalidSpec("give alpha or eigenvalues, not both")
        alpha = poly_from_roots(eigenvalues)
    gamma = build_gamma(plant, exo, s)
    M = _system(plant, exo, s, gamma)
    p, no, n, nw = plant.p, exo.n_o, plant.n, gamma.w.shape[1]

    if alpha is not None:
        a = np.asarray(alpha, dtype=float).reshape(-1)
        if a.size != s:
            raise InvalidSpec(f"need {s} characteristic coefficients, got {a.size}")
        if not is_hurwitz(a):
            raise InvalidSpec(f"alpha={a.tolist()} is not Hurwitz")
        b = np.concatenate([np.zeros(n), _rhs_f(exo, a), np.zeros(nw)])
        try:
            sol = solve_affine(M.T, b, rank_tol)
        except NoSolution as exc:
            raise NoSolution(_no_solution_reason(gamma), residual=exc.residual) from None
        v = sol.particular.reshape(s + 1, p)
        return ParitySolution(v, a, "alpha_fixed", sol.residual, exo.kind)

    # alpha free: unknowns u = [v, alpha]; the alpha terms Q R^(s-j) move left
    QR = [exo.Q[0]]
    for _ in range(s):
        QR.append(QR[-1] @ exo.R)
    Acoef = np.zeros((n + no + nw, s))
    for j in range(1, s + 1):
        Acoef[n:n + no, j - 1] = QR[s - j]
    Mfull = np.hstack([M.T, Acoef])
    b = np.concatenate([np.zeros(n), -QR[s], np.zeros(nw)])
    try:
        fam = solve_affine(Mfull, b, rank_tol)
    except NoSolution as exc:
        raise NoSolution(_no_solution_reason(gamma), residual=exc.residual) from None

    a_p = fam.particular[-s:]
    N_a = fam.homogeneous_basis[-s:, :]
    # drop directions that leave alpha unchanged
    if N_a.size:
        U, sv, _ = np.linalg.svd(N_a, full_matrices=False)
        N_a = U[:, sv > rank_tol * max(1.0, sv.max(initial=0.0))] if sv.size else N_a[:, :0]
    candidates = _alpha_candidates(a_p, N_a, budget, seed)
    best = None
    for a in candidates:
        if not is_hurwitz(a):
            continue
        bb = np.concatenate([np.zeros(n), _rhs_f(exo, a), np.zeros(nw)])
        try:
            sol = solve_affine(M.T, bb, rank_tol)
        except NoSolution:
            continue
        slowest = float(np.max(companion_eigenvalues(a).real))
        key = (round(float(np.linalg.norm(sol.particular)), 12), slowest)
        if best is None or key < best[0]:
            best = (key, a, sol)
    if best is None:
        raise NoSolution("no Hurwitz alpha in solution family", candidates=len(candidates),
                         family_dim=N_a.shape[1])
    _, a, sol = best
    return ParitySolution(sol.particular.reshape(s + 1, p), a, "alpha_free", sol.residual, exo.kind)


def _alpha_candidates(a_p, N_a, budget, seed):
    d = N_a.shape[1]
    if d == 0:
        return [a_p]
    scale = max(1.0, float(np.linalg.norm(a_p)))
    n_grid = budget // 2
    per = max(2, int(np.floor(n_grid ** (1.0 / d))))
    axis = np.linspace(-scale, scale, per)
    cands = []
    for c in itertools.islice(itertools.product(axis, repeat=d), n_grid):
        cands.append(a_p + N_a @ np.array(c))
    rng = np.random.default_rng(seed)
    for c in rng.standard_normal((budget - len(cands), d)) * scale:
        cands.append(a_p + N_a @ c)
    return cands


def parity_residual(plant: LinearPlant, exo: ExoSystem, sol: ParitySolution) -> float:
    """``|| v [G_o G_f G_w] - [0, -Q P_A(R), 0] ||``."""
    g = build_gamma(plant, exo, sol.s)
    lhs = sol.v.reshape(1, -1) @ np.hstack([g.o, g.f, g.w])
    rhs = np.concatenate([np.zeros(plant.n), _rhs_f(exo, sol.alpha), np.zeros(g.w.shape[1])])
    return float(np.linalg.norm(lhs[0] - rhs))


def alpha_from_eigenvalues(eigenvalues) -> np.ndarray:
    return poly_from_roots(eigenvalues)


def ramp_ratio_residual(alpha) -> float:
    """Relative mismatch of ``sum 1/lambda_j = -alpha_(s-1)/alpha_s`` (alpha_0 = 1)."""
    a = np.concatenate([[1.0], np.asarray(alpha, dtype=float).reshape(-1)])
    lam = companion_eigenvalues(a[1:])
    lhs = np.sum(1.0 / lam)
    rhs = -a[-2] / a[-1]
    return float(abs(lhs - rhs) / max(1.0, abs(rhs)))


def rescale_step_solution(sol: ParitySolution, new_alpha) -> ParitySolution:
    """Step faults: ``v' = v * alpha'_s / alpha_s`` solves the problem for any Hurwitz ``alpha'``."""
    a = np.asarray(new_alpha, dtype=float).reshape(-1)
    return ParitySolution(sol.v * (a[-1] / sol.alpha[-1]), a, sol.mode, kind=sol.kind)


# ---------------------------------------------------------------------------
# Observer construction


def build_observer(sol: ParitySolution, name="observer") -> ResidualGenerator:
    s = sol.s
    A = companion_matrix(sol.alpha)
    B = sol.alpha[::-1].reshape(s, 1) * sol.v[s] - sol.v[:s]
    C = np.zeros((1, s))
    C[0, -1] = 1.0
    D = -sol.v[s].reshape(1, -1)
    return ResidualGenerator(A, B, C, D, name=name)


def build_observer_injection(v_fns: Sequence[Callable], alpha, name="observer") -> ResidualGenerator:
    sol = InjectionSolution(tuple(v_fns), alpha)
    s = sol.s
    a_rev = sol.alpha[::-1]
    fns = sol.v_fns

    def beta(y):
        vs = float(fns[s](y))
        return np.array([a_rev[k] * vs - float(fns[k](y)) for k in range(s)])

    def delta(y):
        return -float(fns[s](y))

    C = np.zeros((1, s))
    C[0, -1] = 1.0
    gen = ResidualGenerator(companion_matrix(sol.alpha), C=C, beta=beta, delta=delta, name=name)
    gen.solution = sol
    return gen


class TMap:
    """Invariant-manifold map ``T(x, x_o)`` of the canonical observer."""

    def __init__(self, ext: ExtendedSystem, sol, lie: LieEngine):
        self.ext, self.sol, self.lie = ext, sol, lie
        s = sol.s
        self._QP = [ext.exo.Q[0] @ char_poly_partial(ext.exo, sol.alpha, s - k) for k in range(1, s + 1)]
        if isinstance(sol, InjectionSolution):
            if s - 1 > lie.max_order:
                raise UnsupportedOrder(f"T-map needs order {s - 1} Lie derivatives")
        else:
            lie.check_order(ext, s - 1)

    def __call__(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        s = self.sol.s
        xo = X[self.ext.n:]
        out = np.empty(s)
        if isinstance(self.sol, InjectionSolution):
            for k in range(1, s + 1):
                acc = 0.0
                for j in range(k, s + 1):
                    fn = self.sol.v_fns[j]
                    val, _ = self.lie.lie(lambda Z, fn=fn: fn(self.ext.H_e(Z)), [self.ext.F_e] * (j - k), X)
                    acc += float(val)
                out[k - 1] = acc + self._QP[k - 1] @ xo
            return out
        L, _ = self.lie.output_derivatives(self.ext, X, s - 1)
        v = self.sol.v
        for k in range(1, s + 1):
            acc = sum(float(v[j] @ L[j - k]) for j in range(k, s + 1))
            out[k - 1] = acc + self._QP[k - 1] @ xo
        return out


def build_tmap(ext: ExtendedSystem, sol, lie: LieEngine | None = None) -> TMap:
    return TMap(ext, sol, lie or LieEngine())


def linear_tmap_matrix(plant: LinearPlant, exo: ExoSystem, sol: ParitySolution) -> np.ndarray:
    """Matrix ``T`` (s x (n+n_o)) of the linear cascade, row k per the block formula."""
    from .plant import extended_matrices
    Fe, He = extended_matrices(plant, exo)
    s, n = sol.s, plant.n
    powers = [He]
    for _ in range(s):
        powers.append(powers[-1] @ Fe)
    T = np.zeros((s, n + exo.n_o))
    for k in range(1, s + 1):
        row = sum(sol.v[j] @ powers[j - k] for j in range(k, s + 1))
        row = np.array(row, dtype=float)
        row[n:] += (exo.Q @ char_poly_partial(exo, sol.alpha, s - k))[0]
        T[k - 1] = row
    return T
