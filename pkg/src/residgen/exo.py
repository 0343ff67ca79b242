"""Linear exo-systems that generate the fault signal: dx_o/dt = R x_o, f = Q x_o."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, InvalidSpec
from .numerics import as_matrix, matrix_exponential

KINDS = ("step", "ramp", "sine", "custom")


@dataclass(frozen=True)
class ExoSystem:
    R: np.ndarray
    Q: np.ndarray
    kind: str = "custom"
    omega: float | None = None
    expected_magnitude: float = 1.0

    def __post_init__(self):
        R = as_matrix(self.R, "R")
        Q = as_matrix(self.Q, "Q")
        if R.shape[0] != R.shape[1]:
            raise DimensionError(f"R must be square, got {R.shape}")
        if Q.shape != (1, R.shape[0]):
            raise DimensionError(f"Q must be 1x{R.shape[0]}, got {Q.shape}")
        if self.kind not in KINDS:
            raise InvalidSpec(f"unknown exo-system kind {self.kind!r}")
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "Q", Q)
        if self.kind != "custom":
            ref = _canonical(self.kind, self.omega)
            if not (np.array_equal(R, ref.R) and np.array_equal(Q, ref.Q)):
                raise InvalidSpec(f"(R, Q) do not match the canonical {self.kind} form")

    @property
    def n_o(self) -> int:
        return self.R.shape[0]

    def state_box(self) -> np.ndarray:
        """Default sampling box ``|x_o,j| <= 10 * expected magnitude`` as (n_o, 2)."""
        half = 10.0 * abs(self.expected_magnitude)
        return np.tile([-half, half], (self.n_o, 1))

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        if self.kind == "sine":
            out["omega"] = self.omega
        if self.kind == "custom":
            out["R"] = self.R.tolist()
            out["Q"] = self.Q.tolist()
        return out


def _canonical(kind, omega=None):
    if kind == "step":
        return _Raw(np.zeros((1, 1)), np.ones((1, 1)))
    if kind == "ramp":
        return _Raw(np.array([[0.0, 1.0], [0.0, 0.0]]), np.array([[1.0, 0.0]]))
    if kind == "sine":
        if omega is None or not omega > 0:
            raise InvalidSpec("sine exo-system needs omega > 0")
        w = float(omega)
        return _Raw(np.array([[0.0, w], [-w, 0.0]]), np.array([[1.0, 0.0]]))
    raise InvalidSpec(f"no canonical form for {kind!r}")


@dataclass
class _Raw:
    R: np.ndarray
    Q: np.ndarray


def make_step(expected_magnitude: float = 1.0) -> ExoSystem:
    return ExoSystem(np.zeros((1, 1)), np.ones((1, 1)), "step", expected_magnitude=expected_magnitude)


def make_ramp(expected_magnitude: float = 1.0) -> ExoSystem:
    raw = _canonical("ramp")
    return ExoSystem(raw.R, raw.Q, "ramp", expected_magnitude=expected_magnitude)


def make_sine(omega: float, expected_magnitude: float = 1.0) -> ExoSystem:
    raw = _canonical("sine", omega)
    return ExoSystem(raw.R, raw.Q, "sine", omega=float(omega), expected_magnitude=expected_magnitude)


def make_custom(R, Q, expected_magnitude: float = 1.0) -> ExoSystem:
    return ExoSystem(R, Q, "custom", expected_magnitude=expected_magnitude)


def exo_from_dict(spec: dict) -> ExoSystem:
    kind = spec.get("kind")
    mag = spec.get("expected_magnitude", 1.0)
    if kind == "step":
        return make_step(mag)
    if kind == "ramp":
        return make_ramp(mag)
    if kind == "sine":
        return make_sine(spec.get("omega"), mag)
    if kind == "custom":
        return make_custom(spec["R"], spec["Q"], mag)
    raise InvalidSpec(f"unknown exo-system kind {kind!r}")


def exo_state(exo: ExoSystem, t: float, x_o0) -> np.ndarray:
    """``e^{Rt} x_o0``, closed form for tagged kinds."""
    x0 = np.asarray(x_o0, dtype=float).reshape(-1)
    if x0.size != exo.n_o:
        raise DimensionError(f"exo state needs length {exo.n_o}, got {x0.size}")
    if exo.kind == "step":
        return x0.copy()
    if exo.kind == "ramp":
        return np.array([x0[0] + x0[1] * t, x0[1]])
    if exo.kind == "sine":
        c, s = math.cos(exo.omega * t), math.sin(exo.omega * t)
        return np.array([c * x0[0] + s * x0[1], -s * x0[0] + c * x0[1]])
    return matrix_exponential(exo.R, t) @ x0


def fault_signal(exo: ExoSystem, x_o0, t: float) -> float:
    return float((exo.Q @ exo_state(exo, t, x_o0))[0])


def apply_char_poly(exo: ExoSystem, alpha) -> np.ndarray:
    """``R^s + a1 R^(s-1) + ... + as I`` by Horner's rule."""
    a = np.asarray(alpha, dtype=float).reshape(-1)
    if a.size < 1:
        raise ValueError("need s >= 1")
    n = exo.n_o
    P = np.eye(n)
    for coef in a:
        P = P @ exo.R + coef * np.eye(n)
    return P


def char_poly_partial(exo: ExoSystem, alpha, k: int) -> np.ndarray:
    """``R^k + a1 R^(k-1) + ... + ak I``; the identity for ``k = 0``."""
    a = np.asarray(alpha, dtype=float).reshape(-1)
    P = np.eye(exo.n_o)
    for coef in a[:k]:
        P = P @ exo.R + coef * np.eye(exo.n_o)
    return P
