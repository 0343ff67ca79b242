"""Cascade simulation: plant + fault exo-systems + a bank of residual generators.

The stacked state ``[x, x_o(1), ..., x_o(q), z(1), ..., z(r)]`` is advanced
by one fixed-step RK4 integrator.  Exo-system states are held at zero until
their onset time, where they jump to ``x_o0``; steps are split at onsets.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionError, DivergedSimulation, InvalidSpec
from .exo import ExoSystem
from .numerics import matrix_exponential, rk4_step
from .plant import LinearPlant, NonlinearPlant, lift_linear
from .synthesis import ResidualGenerator


@dataclass(frozen=True)
class FaultEvent:
    channel: str
    exo: ExoSystem
    onset: float
    x_o0: np.ndarray

    def __post_init__(self):
        x0 = np.array(self.x_o0, dtype=float).reshape(-1)
        if x0.size != self.exo.n_o:
            raise DimensionError(f"fault {self.channel}: x_o0 needs {self.exo.n_o} entries")
        if not self.onset >= 0:
            raise InvalidSpec(f"fault {self.channel}: onset must be >= 0")
        object.__setattr__(self, "x_o0", x0)
        object.__setattr__(self, "onset", float(self.onset))


class FaultSchedule:
    def __init__(self, events: Sequence[FaultEvent] = ()):
        self.events = list(events)
        chans = [e.channel for e in self.events]
        if len(set(chans)) != len(chans):
            raise InvalidSpec("one active exo-system per fault channel")

    def __iter__(self):
        return iter(self.events)

    def __len__(self):
        return len(self.events)

    def add(self, channel, exo, onset, x_o0):
        self.events.append(FaultEvent(channel, exo, onset, x_o0))
        FaultSchedule(self.events)
        return self

    def get(self, channel):
        for e in self.events:
            if e.channel == channel:
                return e
        return None

    def to_dict(self):
        return [{"channel": e.channel, "exo": e.exo.to_dict(), "onset": e.onset,
                 "x_o0": e.x_o0.tolist()} for e in self.events]


class DisturbanceSignal:
    """Scalar signal ``w_i(t)`` on a named plant channel."""

    def __init__(self, channel: str, fn: Callable[[float], float], desc=None):
        self.channel = channel
        self.fn = fn
        self.desc = desc or {"type": "callback"}

    def __call__(self, t):
        return float(self.fn(t))

    @classmethod
    def constant(cls, channel, value):
        value = float(value)
        if not math.isfinite(value):
            raise InvalidSpec("disturbance must be finite")
        return cls(channel, lambda t: value, {"type": "constant", "value": value})

    @classmethod
    def piecewise(cls, channel, times, values):
        """Piecewise constant: ``values[k]`` on ``[times[k], times[k+1])``, 0 before ``times[0]``."""
        times = np.asarray(times, dtype=float)
        values = np.asarray(values, dtype=float)
        if times.shape != values.shape or np.any(np.diff(times) < 0):
            raise InvalidSpec("piecewise disturbance needs sorted times matching values")
        if not np.all(np.isfinite(values)):
            raise InvalidSpec("disturbance must be finite")

        def fn(t):
            k = int(np.searchsorted(times, t, side="right")) - 1
            return float(values[k]) if k >= 0 else 0.0
        return cls(channel, fn, {"type": "piecewise", "times": times.tolist(), "values": values.tolist()})

    def to_dict(self):
        return {"channel": self.channel, **self.desc}


@dataclass
class SimConfig:
    t_end: float
    dt: float
    x0: np.ndarray | None = None
    z0: list | None = None       # explicit observer states, overrides e0
    e0: list | None = None       # z(0) - T(x(0), x_o(0)) per observer
    substeps: int | None = None  # None: chosen from a spectral estimate at t = 0

    def to_dict(self):
        conv = lambda v: None if v is None else [np.asarray(a, float).tolist() for a in v]
        return {"t_end": self.t_end, "dt": self.dt,
                "x0": None if self.x0 is None else np.asarray(self.x0, float).tolist(),
                "z0": conv(self.z0), "e0": conv(self.e0), "substeps": self.substeps}


@dataclass
class Trajectory:
    t: np.ndarray
    x: np.ndarray
    xo: np.ndarray
    z: np.ndarray
    y: np.ndarray
    f: np.ndarray
    fhat: np.ndarray
    fault_channels: list
    observer_names: list
    meta: dict = field(default_factory=dict)

    def columns(self):
        cols = ["t"] + [f"x{i + 1}" for i in range(self.x.shape[1])]
        cols += [f"xo{i + 1}" for i in range(self.xo.shape[1])]
        cols += [f"z{i + 1}" for i in range(self.z.shape[1])]
        cols += [f"y{i + 1}" for i in range(self.y.shape[1])]
        cols += [f"f_{c}" for c in self.fault_channels]
        cols += [f"fhat_{n}" for n in self.observer_names]
        return cols

    def table(self):
        return np.hstack([self.t[:, None], self.x, self.xo, self.z, self.y, self.f, self.fhat])

    def fhat_of(self, name):
        return self.fhat[:, self.observer_names.index(name)]

    def f_of(self, channel):
        if channel not in self.fault_channels:
            return np.zeros_like(self.t)
        return self.f[:, self.fault_channels.index(channel)]

    def write_csv(self, path, offsets=None):
        """Write the trajectory; ``offsets`` (length n) are re-added to the x columns."""
        tab = self.table()
        if offsets is not None:
            tab = tab.copy()
            tab[:, 1:1 + self.x.shape[1]] += np.asarray(offsets, dtype=float)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.columns())
            for row in tab:
                w.writerow([repr(float(v)) for v in row])

    def write_meta(self, path):
        with open(path, "w") as fh:
            json.dump(self.meta, fh, indent=2, sort_keys=True)


# ---------------------------------------------------------------------------


def _observer_target(gen):
    tm = getattr(gen, "tmap", None)
    if tm is None:
        return None, None
    return tm.ext.plant.fault, tm.ext.exo


def _initial_z(gen, j, plant, schedule, x0, config):
    if config.z0 is not None:
        z = np.array(config.z0[j], dtype=float).reshape(-1)
        if z.size != gen.s:
            raise DimensionError(f"observer {gen.name}: z0 needs {gen.s} entries")
        return z
    e0 = np.zeros(gen.s) if config.e0 is None else np.array(config.e0[j], dtype=float).reshape(-1)
    tm = getattr(gen, "tmap", None)
    if tm is None:
        if np.any(e0) or np.any(x0):
            raise InvalidSpec(f"observer {gen.name} has no T-map; give z0 explicitly")
        return e0
    chan, exo = _observer_target(gen)
    ev = schedule.get(chan)
    xo = ev.x_o0 if ev is not None and ev.onset == 0.0 else np.zeros(exo.n_o)
    return np.asarray(tm(np.concatenate([x0, xo])), dtype=float) + e0


class _Cascade:
    """Stacked right-hand side; every linear piece is folded into one matrix."""

    def __init__(self, plant: NonlinearPlant, schedule: FaultSchedule, disturbances, observers):
        self.plant = plant
        self.n = n = plant.n
        names = plant.channel_names
        for e in schedule:
            if e.channel not in names:
                raise InvalidSpec(f"fault channel {e.channel!r} not in plant channels {names}")
        for d in disturbances:
            if d.channel not in names:
                raise InvalidSpec(f"disturbance channel {d.channel!r} not in plant channels {names}")
        self.events = list(schedule)
        self.dists = [(names.index(d.channel), d) for d in disturbances]
        off = n
        self.xo_sl = []
        for e in self.events:
            self.xo_sl.append(slice(off, off + e.exo.n_o))
            off += e.exo.n_o
        self.observers = list(observers)
        self.z_sl = []
        for g in self.observers:
            self.z_sl.append(slice(off, off + g.s))
            off += g.s
        self.dim = off
        self.n_ch = len(names)
        # u = U S + w(t): fault channels read Q x_o
        self.U = np.zeros((self.n_ch, self.dim))
        self.Fq = np.zeros((len(self.events), self.dim))
        for k, e in enumerate(self.events):
            self.U[names.index(e.channel), self.xo_sl[k]] += e.exo.Q[0]
            self.Fq[k, self.xo_sl[k]] = e.exo.Q[0]
        self.lin = [j for j, g in enumerate(self.observers) if not g.injection]
        self.inj = [j for j, g in enumerate(self.observers) if g.injection]
        self.Mobs = np.zeros((self.dim, self.dim))
        self.B = np.zeros((self.dim, plant.p))
        self.Cz = np.zeros((len(self.observers), self.dim))
        self.Dy = np.zeros((len(self.observers), plant.p))
        for j, g in enumerate(self.observers):
            sl = self.z_sl[j]
            self.Cz[j, sl] = g.C[0]
            if not g.injection:
                self.Mobs[sl, sl] = g.A
                self.B[sl] = g.B
                self.Dy[j] = g.D[0]
        self._has_B = bool(self.lin)

    def inputs(self, t, S):
        u = self.U @ S
        for i, d in self.dists:
            u[i] += d(t)
        return u

    def faults(self, S):
        return self.Fq @ S

    def rhs(self, active):
        plant, n = self.plant, self.n
        M = self.Mobs.copy()
        for k, e in enumerate(self.events):
            if active[k]:
                sl = self.xo_sl[k]
                M[sl, sl] = e.exo.R
        B, has_B = self.B, self._has_B
        inj = [(self.z_sl[j], self.observers[j]) for j in self.inj]
        U, dists = self.U, self.dists
        dyn = plant._rhs or plant.dynamics
        out = plant._out or plant.output

        def f(t, S):
            x = S[:n]
            u = U @ S
            for i, d in dists:
                u[i] += d(t)
            y = out(x, u)
            dS = M @ S
            if has_B:
                dS += B @ y
            dS[:n] = dyn(x, u)
            for sl, g in inj:
                dS[sl] = g.deriv(S[sl], y)
            return dS
        return f

    def record(self, t, S):
        x = S[:self.n]
        u = self.inputs(t, S)
        y = self.plant.output(x, u)
        fh = self.Cz @ S + self.Dy @ y
        for j in self.inj:
            fh[j] += self.observers[j].feedthrough(y)
        return y, self.faults(S), fh


def _spectral_substeps(f, t, S, dt, limit=2.0):
    """RK4 substeps so that ``rho(J) * h <= limit`` for the Jacobian at ``(t, S)``."""
    dim = S.size
    Jm = np.empty((dim, dim))
    f0 = f(t, S)
    for i in range(dim):
        h = 1e-6 * max(1.0, abs(S[i]))
        Sp = S.copy()
        Sp[i] += h
        Jm[:, i] = (f(t, Sp) - f0) / h
    rho = float(np.max(np.abs(np.linalg.eigvals(Jm)))) if dim else 0.0
    return max(1, int(math.ceil(rho * dt / limit)))


def simulate_cascade(plant, schedule: FaultSchedule | None, disturbances, observers: Sequence[ResidualGenerator],
                     config: SimConfig) -> Trajectory:
    """Integrate the full cascade on the uniform grid ``0, dt, ..., t_end``."""
    if isinstance(plant, LinearPlant):
        plant = lift_linear(plant)
    schedule = schedule or FaultSchedule()
    disturbances = list(disturbances or [])
    if not config.dt > 0:
        raise InvalidSpec("dt must be > 0")
    if not config.t_end >= 0:
        raise InvalidSpec("t_end must be >= 0")
    cas = _Cascade(plant, schedule, disturbances, observers)
    n = plant.n
    x0 = np.zeros(n) if config.x0 is None else np.array(config.x0, dtype=float).reshape(-1)
    if x0.size != n:
        raise DimensionError(f"x0 needs {n} entries")
    N = int(round(config.t_end / config.dt))
    times = np.arange(N + 1) * config.dt

    S = np.zeros(cas.dim)
    S[:n] = x0
    active = [False] * len(cas.events)
    for k, e in enumerate(cas.events):
        if e.onset == 0.0:
            S[cas.xo_sl[k]] = e.x_o0
            active[k] = True
    for j, g in enumerate(cas.observers):
        S[cas.z_sl[j]] = _initial_z(g, j, plant, schedule, x0, config)

    sub = config.substeps
    if sub is None:
        sub = _spectral_substeps(cas.rhs([True] * len(active)), 0.0, S, config.dt) if N else 1
    ny, nf, nr = plant.p, len(cas.events), len(cas.observers)
    X = np.empty((N + 1, cas.dim))
    Y = np.empty((N + 1, ny))
    Fv = np.empty((N + 1, nf))
    Fh = np.empty((N + 1, nr))

    def store(i, t):
        X[i] = S
        Y[i], Fv[i], Fh[i] = cas.record(t, S)

    if N == 0:
        X = X[:0]
        Y, Fv, Fh, times = Y[:0], Fv[:0], Fh[:0], times[:0]
    else:
        store(0, 0.0)
    tol_t = 1e-9 * config.dt
    for i in range(N):
        t0, t1 = times[i], times[i + 1]
        # breakpoints: onsets inside (t0, t1]
        cuts = sorted({e.onset for k, e in enumerate(cas.events)
                       if not active[k] and t0 + tol_t < e.onset <= t1 + tol_t})
        a = t0
        for b in cuts + [t1]:
            b = min(b, t1)
            if b - a > tol_t:
                f = cas.rhs(active)
                h = (b - a) / sub
                for m in range(sub):
                    S = rk4_step(f, a + m * h, S, h)
                a = b
            for k, e in enumerate(cas.events):
                if not active[k] and e.onset <= a + tol_t:
                    S[cas.xo_sl[k]] = e.x_o0
                    active[k] = True
        if not np.all(np.isfinite(S)):
            raise DivergedSimulation("non-finite cascade state", float(t0))
        store(i + 1, t1)

    xo_cols = [X[:, sl] for sl in cas.xo_sl]
    z_cols = [X[:, sl] for sl in cas.z_sl]
    meta = {
        "config": config.to_dict(), "substeps": sub,
        "faults": schedule.to_dict(), "disturbances": [d.to_dict() for d in disturbances],
        "observers": [g.name for g in cas.observers], "plant": getattr(plant, "name", "plant"),
    }
    return Trajectory(
        times, X[:, :n],
        np.hstack(xo_cols) if xo_cols else np.zeros((len(times), 0)),
        np.hstack(z_cols) if z_cols else np.zeros((len(times), 0)),
        Y, Fv, Fh, [e.channel for e in cas.events], [g.name for g in cas.observers], meta)


def analytic_error(gen: ResidualGenerator, e0, t):
    """``C e^{At} e0``; ``t`` may be a scalar or an array."""
    e0 = np.asarray(e0, dtype=float).reshape(-1)
    ts = np.atleast_1d(np.asarray(t, dtype=float))
    out = np.array([float((gen.C @ matrix_exponential(gen.A, tk) @ e0)[0]) for tk in ts])
    return out if np.ndim(t) else float(out[0])


# ---------------------------------------------------------------------------
# Detection and isolation


@dataclass
class DetectionRule:
    epsilon: dict          # observer name -> threshold
    dwell: float = 0.0

    def __post_init__(self):
        for k, v in self.epsilon.items():
            if not v > 0:
                raise InvalidSpec(f"threshold for {k} must be > 0")
        if self.dwell < 0:
            raise InvalidSpec("dwell time must be >= 0")

    def exceed(self, traj: Trajectory, name):
        return np.abs(traj.fhat_of(name)) > self.epsilon[name]

    def flagged_at(self, traj: Trajectory, name, t) -> bool:
        """``|fhat|`` above threshold on every sample of ``[t - dwell, t]``."""
        ex = self.exceed(traj, name)
        win = (traj.t >= t - self.dwell - 1e-9) & (traj.t <= t + 1e-9)
        return bool(win.any() and ex[win].all())

    def flags(self, traj: Trajectory, t=None):
        t = traj.t[-1] if t is None else t
        return sorted(n for n in traj.observer_names if self.flagged_at(traj, n, t))

    def first_alarm(self, traj: Trajectory, name, after=0.0):
        """Earliest time after which ``|fhat|`` stays above threshold for ``dwell``."""
        ex = self.exceed(traj, name)
        start = None
        for k, tk in enumerate(traj.t):
            if tk < after:
                continue
            if ex[k]:
                start = tk if start is None else start
                if tk - start >= self.dwell - 1e-9:
                    return float(tk)
            else:
                start = None
        return None


@dataclass
class BankResult:
    trajectory: Trajectory
    rule: DetectionRule
    calibration: dict

    def flags(self, t=None):
        return self.rule.flags(self.trajectory, t)

    def estimates(self, t=None):
        """Latest ``fhat`` of the flagged observers."""
        tr = self.trajectory
        t = tr.t[-1] if t is None else t
        k = int(np.searchsorted(tr.t, t + 1e-9)) - 1
        return {n: float(tr.fhat_of(n)[k]) for n in self.flags(t)}


def run_bank(plant, schedule, disturbances, bank: dict, config: SimConfig, rule: DetectionRule | None = None,
             dwell=None, factor=3.0, floor=1e-6) -> BankResult:
    """Simulate an observer bank and apply a detection rule.

    Without ``rule``, thresholds come from a fault-free calibration run
    started on the manifold with the same disturbances:
    ``eps = max(factor * max|fhat_cal|, floor)``.
    """
    names = list(bank)
    gens = [bank[k] for k in names]
    for k, g in zip(names, gens):
        g.name = k
    traj = simulate_cascade(plant, schedule, disturbances, gens, config)
    calib = {}
    if rule is None:
        cal_cfg = SimConfig(config.t_end, config.dt, config.x0, None, None, traj.meta["substeps"])
        cal = simulate_cascade(plant, FaultSchedule(), disturbances, gens, cal_cfg)
        eps = {}
        for k in names:
            peak = float(np.max(np.abs(cal.fhat_of(k)))) if len(cal.t) else 0.0
            calib[k] = peak
            eps[k] = max(factor * peak, floor)
        rule = DetectionRule(eps, 10 * config.dt if dwell is None else dwell)
    return BankResult(traj, rule, calib)


def decoupling_probe(plant, schedule, disturbances_on, disturbances_off, observer,
                     config: SimConfig):
    """Sup-norm difference of ``fhat`` between two runs that differ only in disturbances.

    ``observer`` may be a single generator (returns a float) or a sequence
    simulated together (returns ``{name: difference}``).
    """
    many = isinstance(observer, (list, tuple))
    gens = list(observer) if many else [observer]
    a = simulate_cascade(plant, schedule, disturbances_on, gens, config)
    cfg = SimConfig(config.t_end, config.dt, config.x0, config.z0, config.e0, a.meta["substeps"])
    b = simulate_cascade(plant, schedule, disturbances_off, gens, cfg)
    diff = np.max(np.abs(a.fhat - b.fhat), axis=0) if len(a.t) else np.zeros(len(gens))
    if not many:
        return float(diff[0])
    return {g.name: float(d) for g, d in zip(gens, diff)}
