"""Process models and their extension by the fault exo-system.

A plant has drift ``F(x)``, output map ``H(x)`` and an ordered set of scalar
input channels.  Each channel ``c`` enters as ``E_c(x) u_c`` in the dynamics
and ``K_c(x) u_c`` in the outputs.  One channel is designated as *the* fault
(``G``, ``J``); the rest are disturbances (``E_i``, ``K_i``).  The same
physical plant can be relabelled with :meth:`NonlinearPlant.with_fault`,
which is how an isolation bank treats the other faults as disturbances.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DimensionError, InvalidSpec
from .exo import ExoSystem
from .numerics import as_matrix


@dataclass(frozen=True)
class LinearPlant:
    F: np.ndarray
    G: np.ndarray
    E: np.ndarray
    H: np.ndarray
    J: np.ndarray
    K: np.ndarray
    fault_name: str = "f"
    disturbance_names: tuple = ()
    box: np.ndarray | None = None

    def __post_init__(self):
        F = as_matrix(self.F, "F")
        n = F.shape[0]
        if F.shape != (n, n) or n < 1:
            raise DimensionError(f"F must be square with n >= 1, got {F.shape}")
        H = as_matrix(self.H, "H")
        p = H.shape[0]
        if H.shape[1] != n or p < 1:
            raise DimensionError(f"H must be p x {n}, got {H.shape}")
        G = np.array(self.G, dtype=float)
        J = np.array(self.J, dtype=float)
        if G.size != n or J.size != p:
            raise DimensionError(f"G needs {n} entries and J needs {p}, got {G.size} and {J.size}")
        G, J = G.reshape(n, 1), J.reshape(p, 1)
        E = np.array(self.E, dtype=float)
        K = np.array(self.K, dtype=float)
        if E.size == 0:
            E = np.zeros((n, 0))
        if K.size == 0:
            K = np.zeros((p, E.shape[1]))
        E = E.reshape(n, -1)
        K = K.reshape(p, -1)
        if E.shape[1] != K.shape[1]:
            raise DimensionError(f"E has {E.shape[1]} disturbance columns but K has {K.shape[1]}")
        for name, M in (("G", G), ("J", J), ("E", E), ("K", K)):
            if not np.all(np.isfinite(M)):
                raise DimensionError(f"{name} has non-finite entries")
        m = E.shape[1]
        names = tuple(self.disturbance_names) or tuple(f"w{i + 1}" for i in range(m))
        if len(names) != m:
            raise DimensionError(f"{m} disturbance columns but {len(names)} names")
        box = _check_box(self.box, n) if self.box is not None else np.tile([-1.0, 1.0], (n, 1))
        for attr, val in (("F", F), ("G", G), ("E", E), ("H", H), ("J", J), ("K", K),
                          ("disturbance_names", names), ("box", box)):
            object.__setattr__(self, attr, val)

    @property
    def n(self):
        return self.F.shape[0]

    @property
    def p(self):
        return self.H.shape[0]

    @property
    def m(self):
        return self.E.shape[1]

    def to_dict(self) -> dict:
        return {
            "F": self.F.tolist(), "G": self.G.ravel().tolist(), "E": self.E.tolist(),
            "H": self.H.tolist(), "J": self.J.ravel().tolist(), "K": self.K.tolist(),
        }


def _check_box(box, n):
    b = np.array(box, dtype=float)
    if b.shape != (n, 2) or np.any(b[:, 0] > b[:, 1]):
        raise DimensionError(f"operating box must be {n}x2 with lo <= hi")
    return b


def _const(vec):
    v = np.array(vec, dtype=float).reshape(-1)
    v.setflags(write=False)
    return lambda x: v


@dataclass(frozen=True)
class Channel:
    name: str
    E: Callable  # x -> R^n
    K: Callable  # x -> R^p


class NonlinearPlant:
    """``dx/dt = F(x) + sum_c E_c(x) u_c``, ``y = H(x) + sum_c K_c(x) u_c``.

    ``rhs`` / ``out`` may be supplied as fast implementations of the two
    sums taking ``(x, u)`` with ``u`` ordered like :attr:`channels`; they are
    cross-checked against the field callbacks at construction.
    """

    def __init__(self, n, p, F, H, channels, fault, box, name="plant", rhs=None, out=None,
                 linear: LinearPlant | None = None, lie_table=None):
        self.n, self.p = int(n), int(p)
        self.F, self.H = F, H
        self.channels = tuple(channels)
        names = [c.name for c in self.channels]
        if len(set(names)) != len(names):
            raise InvalidSpec(f"duplicate channel names {names}")
        if fault not in names:
            raise InvalidSpec(f"fault channel {fault!r} not among {names}")
        self.fault = fault
        self.box = _check_box(box, self.n)
        self.name = name
        self.linear = linear
        # analytic output-derivative callbacks (see lie.LieEngine)
        self.lie_table = lie_table
        self._rhs, self._out = rhs, out
        self._spot_check()

    # -- channel views -------------------------------------------------
    @property
    def channel_names(self):
        return [c.name for c in self.channels]

    def channel(self, name) -> Channel:
        for c in self.channels:
            if c.name == name:
                return c
        raise KeyError(name)

    @property
    def G(self):
        return self.channel(self.fault).E

    @property
    def J(self):
        return self.channel(self.fault).K

    @property
    def disturbances(self):
        return [c for c in self.channels if c.name != self.fault]

    @property
    def E(self):
        return [c.E for c in self.disturbances]

    @property
    def K(self):
        return [c.K for c in self.disturbances]

    @property
    def m(self):
        return len(self.channels) - 1

    def with_fault(self, fault: str) -> "NonlinearPlant":
        return NonlinearPlant(self.n, self.p, self.F, self.H, self.channels, fault, self.box,
                              name=self.name, rhs=self._rhs, out=self._out,
                              linear=None, lie_table=None)

    # -- evaluation ----------------------------------------------------
    def dynamics(self, x, u) -> np.ndarray:
        if self._rhs is not None:
            return self._rhs(x, u)
        dx = np.array(self.F(x), dtype=float)
        for c, uc in zip(self.channels, u):
            if uc != 0.0:
                dx = dx + np.asarray(c.E(x)) * uc
        return dx

    def output(self, x, u) -> np.ndarray:
        if self._out is not None:
            return self._out(x, u)
        y = np.array(self.H(x), dtype=float)
        for c, uc in zip(self.channels, u):
            if uc != 0.0:
                y = y + np.asarray(c.K(x)) * uc
        return y

    def sample_points(self, k, rng):
        lo, hi = self.box[:, 0], self.box[:, 1]
        return lo + (hi - lo) * rng.random((k, self.n))

    def _spot_check(self):
        rng = np.random.default_rng(0)
        for x in self.sample_points(3, rng):
            f1, f2 = np.asarray(self.F(x), float), np.asarray(self.F(x), float)
            h1, h2 = np.asarray(self.H(x), float), np.asarray(self.H(x), float)
            if f1.shape != (self.n,) or h1.shape != (self.p,):
                raise DimensionError(f"{self.name}: F must return {self.n} values and H {self.p}")
            if not (np.array_equal(f1, f2) and np.array_equal(h1, h2)):
                raise InvalidSpec(f"{self.name}: F/H callbacks are not pure")
            for c in self.channels:
                if np.shape(c.E(x)) != (self.n,) or np.shape(c.K(x)) != (self.p,):
                    raise DimensionError(f"{self.name}: channel {c.name} has wrong field sizes")
            u = rng.standard_normal(len(self.channels))
            if self._rhs is not None:
                ref = np.asarray(self.F(x), float) + sum(np.asarray(c.E(x)) * uc for c, uc in zip(self.channels, u))
                if not np.allclose(self._rhs(x, u), ref, rtol=1e-10, atol=1e-12 * (1 + np.abs(ref).max())):
                    raise InvalidSpec(f"{self.name}: fast rhs disagrees with field callbacks")
            if self._out is not None:
                ref = np.asarray(self.H(x), float) + sum(np.asarray(c.K(x)) * uc for c, uc in zip(self.channels, u))
                if not np.allclose(self._out(x, u), ref, rtol=1e-10, atol=1e-12):
                    raise InvalidSpec(f"{self.name}: fast output disagrees with field callbacks")

    @classmethod
    def from_fields(cls, n, p, F, G, E, H, J, K, box, fault_name="f", disturbance_names=None, **kw):
        """Build from the (F, G, E_i, H, J, K_i) callback lists directly."""
        E, K = list(E), list(K)
        if len(E) != len(K):
            raise DimensionError("E and K lists must have the same length")
        names = disturbance_names or [f"w{i + 1}" for i in range(len(E))]
        chans = [Channel(fault_name, G, J)] + [Channel(nm, e, k) for nm, e, k in zip(names, E, K)]
        return cls(n, p, F, H, chans, fault_name, box, **kw)


def lift_linear(plant: LinearPlant) -> NonlinearPlant:
    """Wrap a :class:`LinearPlant` as callbacks evaluating the affine maps exactly."""
    F, H = plant.F, plant.H
    chans = [Channel(plant.fault_name, _const(plant.G[:, 0]), _const(plant.J[:, 0]))]
    for i, nm in enumerate(plant.disturbance_names):
        chans.append(Channel(nm, _const(plant.E[:, i]), _const(plant.K[:, i])))
    Emat = np.hstack([plant.G, plant.E])
    Kmat = np.hstack([plant.J, plant.K])
    return NonlinearPlant(
        plant.n, plant.p,
        lambda x: F @ x, lambda x: H @ x,
        chans, plant.fault_name, plant.box, name="linear",
        rhs=lambda x, u: F @ x + Emat @ u,
        out=lambda x, u: H @ x + Kmat @ u,
        linear=plant,
    )


class ExtendedSystem:
    """Plant in cascade with the fault exo-system, state ``X = [x, x_o]``."""

    def __init__(self, plant: NonlinearPlant, exo: ExoSystem, exo_box=None):
        self.plant = plant
        self.exo = exo
        self.n = plant.n
        self.n_o = exo.n_o
        self.exo_box = _check_box(exo_box, exo.n_o) if exo_box is not None else exo.state_box()
        self._G, self._J = plant.G, plant.J
        self._Q, self._R = exo.Q[0], exo.R
        self._verify()

    @property
    def dim(self):
        return self.n + self.n_o

    @property
    def box(self):
        return np.vstack([self.plant.box, self.exo_box])

    def split(self, X):
        X = np.asarray(X, dtype=float)
        return X[: self.n], X[self.n:]

    def F_e(self, X) -> np.ndarray:
        x, xo = self.split(X)
        f = self._Q @ xo
        return np.concatenate([np.asarray(self.plant.F(x)) + np.asarray(self._G(x)) * f, self._R @ xo])

    def H_e(self, X) -> np.ndarray:
        x, xo = self.split(X)
        return np.asarray(self.plant.H(x)) + np.asarray(self._J(x)) * (self._Q @ xo)

    def E_e(self, i: int) -> Callable:
        """Disturbance field ``[E_i(x); 0]`` lifted to the extended state."""
        Ei = self.plant.E[i]
        zeros = np.zeros(self.n_o)
        return lambda X: np.concatenate([np.asarray(Ei(X[: self.n])), zeros])

    def K_e(self, i: int) -> Callable:
        Ki = self.plant.K[i]
        return lambda X: np.asarray(Ki(X[: self.n]))

    def fault(self, X) -> float:
        return float(self._Q @ self.split(X)[1])

    def sample_points(self, k, rng):
        b = self.box
        return b[:, 0] + (b[:, 1] - b[:, 0]) * rng.random((k, self.dim))

    def _verify(self):
        rng = np.random.default_rng(1)
        for X in self.sample_points(3, rng):
            x, xo = self.split(X)
            f = self._Q @ xo
            fe = self.F_e(X)
            he = self.H_e(X)
            ref_f = np.concatenate([np.asarray(self.plant.F(x)) + np.asarray(self.plant.G(x)) * f, self.exo.R @ xo])
            ref_h = np.asarray(self.plant.H(x)) + np.asarray(self.plant.J(x)) * f
            if fe.shape != (self.dim,) or he.shape != (self.plant.p,):
                raise DimensionError("extended fields have wrong dimensions")
            if not (np.allclose(fe, ref_f) and np.allclose(he, ref_h)):
                raise InvalidSpec("extended fields disagree with the cascade definition")


def extend(plant, exo: ExoSystem, exo_box=None) -> ExtendedSystem:
    if isinstance(plant, LinearPlant):
        plant = lift_linear(plant)
    if exo.Q.shape[0] != 1:
        raise DimensionError("fault channel must be scalar (Q has one row)")
    return ExtendedSystem(plant, exo, exo_box)


def extended_matrices(plant: LinearPlant, exo: ExoSystem):
    """Block matrices ``[[F, GQ], [0, R]]`` and ``[H, JQ]`` of the linear cascade."""
    n, no = plant.n, exo.n_o
    Fe = np.zeros((n + no, n + no))
    Fe[:n, :n] = plant.F
    Fe[:n, n:] = plant.G @ exo.Q
    Fe[n:, n:] = exo.R
    He = np.hstack([plant.H, plant.J @ exo.Q])
    return Fe, He
