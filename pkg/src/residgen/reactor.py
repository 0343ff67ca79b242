"""Pyridine N-oxidation CSTR: model, fault observers and the two-fault scenario.

State ``(c_A, c_B, theta, theta_J)``.  Outputs ``y = (c_A + f1, theta,
theta_J)``; ``f2`` biases the jacket inlet temperature and ``w`` is an
additive error in the fitted reaction rate.

Unit conventions (``time_unit`` / ``paper_literal``):

* ``seconds``: flows given in l/min are divided by 60, rate constants and
  UA stay per second.
* ``minutes``: flows stay per minute, rates and UA are multiplied by 60.
* ``paper_literal``: every number is used verbatim in one unnamed time
  unit, so F/V = 0.02 and F_J/V_J = 33.3 together with per-second kinetics.
"""
from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import InvalidSpec, InvalidState, NoConvergence
from .exo import make_ramp, make_step
from .lie import LieEngine
from .plant import Channel, NonlinearPlant, extend
from .simulation import (DisturbanceSignal, FaultEvent, FaultSchedule, SimConfig, run_bank)
from .synthesis import ParitySolution, build_observer, build_tmap

REPORTED_STEADY_STATE = (1.211, 0.211, 386.20, 300.02)


@dataclass(frozen=True)
class ReactorParams:
    c_Ain: float = 4.0        # mol/l
    c_Bin: float = 3.0        # mol/l
    theta_in: float = 333.0   # K
    theta_Jin: float = 300.0  # K
    F: float = 0.02           # l/min
    F_J: float = 1.0          # l/min
    V: float = 1.0            # l
    V_J: float = 3e-2         # l
    A1: float = math.exp(8.08)
    A2: float = math.exp(28.12)
    A3: float = math.exp(25.12)
    E1: float = 3952.0        # K
    E2: float = 7927.0
    E3: float = 12989.0
    dH_R: float = -160.0      # kJ/mol
    rho: float = 1200.0       # g/l
    rho_J: float = 1200.0
    c_p: float = 3.4          # J/(g K)
    c_pJ: float = 3.4
    UA: float = 0.942         # W/K
    Z: float = 0.0021         # mol/l
    time_unit: str = "seconds"
    paper_literal: bool = False
    w_scale: float = 1.0      # rate units per unit of w

    def __post_init__(self):
        if self.time_unit not in ("seconds", "minutes"):
            raise InvalidSpec(f"time_unit must be seconds or minutes, got {self.time_unit!r}")
        for name in ("c_Ain", "c_Bin", "theta_in", "theta_Jin", "F", "F_J", "V", "V_J", "rho",
                     "rho_J", "c_p", "c_pJ"):
            if not getattr(self, name) > 0:
                raise InvalidSpec(f"{name} must be positive")
        for name in ("A1", "A2", "A3", "E1", "E2", "E3", "UA", "Z"):
            if getattr(self, name) < 0:
                raise InvalidSpec(f"{name} must be non-negative")
        if not self.dH_R < 0:
            raise InvalidSpec("dH_R must be negative (exothermic)")

    # -- coefficients in the active time unit ---------------------------
    @property
    def rate_factor(self):
        return 60.0 if (self.time_unit == "minutes" and not self.paper_literal) else 1.0

    @property
    def flow(self):
        return self.F if (self.paper_literal or self.time_unit == "minutes") else self.F / 60.0

    @property
    def flow_J(self):
        return self.F_J if (self.paper_literal or self.time_unit == "minutes") else self.F_J / 60.0

    @property
    def ua(self):
        return self.UA * self.rate_factor

    @property
    def q(self):
        """F/V."""
        return self.flow / self.V

    @property
    def q_J(self):
        """F_J/V_J."""
        return self.flow_J / self.V_J

    @property
    def heat(self):
        """(-dH_R)/(rho c_p) in K l/mol."""
        return -self.dH_R * 1e3 / (self.rho * self.c_p)

    @property
    def h_R(self):
        """UA/(rho c_p V)."""
        return self.ua / (self.rho * self.c_p * self.V)

    @property
    def h_J(self):
        """UA/(rho_J c_pJ V_J)."""
        return self.ua / (self.rho_J * self.c_pJ * self.V_J)

    def to_dict(self):
        return asdict(self)


def reaction_rate(c_A, c_B, theta, w=0.0, params: ReactorParams | None = None):
    """Empirical rate with additive uncertainty ``w``, in mol/(l time)."""
    p = params or ReactorParams()
    if not theta > 0:
        raise InvalidState(f"temperature must be positive, got {theta}")
    k1 = p.A1 * math.exp(-p.E1 / theta)
    k2 = p.A2 * math.exp(-p.E2 / theta)
    k3 = p.A3 * math.exp(-p.E3 / theta)
    r = k1 * k2 * c_A * c_B * p.Z / (1.0 + k2 * c_B) + k3 * c_A * c_B
    return p.rate_factor * r + p.w_scale * p.rate_factor * w


def _rate_closure(p: ReactorParams):
    # same expression as reaction_rate with the constants hoisted, w excluded
    A1, A2, A3, E1, E2, E3, Z, rf = p.A1, p.A2, p.A3, p.E1, p.E2, p.E3, p.Z, p.rate_factor
    exp = math.exp

    def rate(c_A, c_B, theta):
        if not theta > 0:
            raise InvalidState(f"temperature must be positive, got {theta}")
        k2 = A2 * exp(-E2 / theta)
        return rf * (A1 * exp(-E1 / theta) * k2 * c_A * c_B * Z / (1.0 + k2 * c_B)
                     + A3 * exp(-E3 / theta) * c_A * c_B)
    return rate


def reactor_rhs(state, f2=0.0, w=0.0, params: ReactorParams | None = None) -> np.ndarray:
    """Absolute-coordinate balances for ``(c_A, c_B, theta, theta_J)``."""
    p = params or ReactorParams()
    c_A, c_B, th, thJ = (float(v) for v in state)
    R = reaction_rate(c_A, c_B, th, w, p)
    q = p.q
    return np.array([
        q * (p.c_Ain - c_A) - R,
        q * (p.c_Bin - c_B) - R,
        q * (p.theta_in - th) + p.heat * R - p.h_R * (th - thJ),
        p.q_J * (p.theta_Jin + f2 - thJ) + p.h_J * (th - thJ),
    ])


def deviation_rhs(dev, f2=0.0, w=0.0, params: ReactorParams | None = None, ref=None) -> np.ndarray:
    """Translated balances about the reference point ``ref``."""
    p = params or ReactorParams()
    ref = np.asarray(REPORTED_STEADY_STATE if ref is None else ref, dtype=float)
    c, cb, th, thJ = (float(v) for v in dev)
    dR = reaction_rate(c + ref[0], cb + ref[1], th + ref[2], w, p) - reaction_rate(*ref[:3], 0.0, p)
    q = p.q
    return np.array([
        -q * c - dR,
        -q * cb - dR,
        -q * th + p.heat * dR - p.h_R * (th - thJ),
        p.q_J * (f2 - thJ) + p.h_J * (th - thJ),
    ])


def reactor_output(dev, f1=0.0) -> np.ndarray:
    return np.array([dev[0] + f1, dev[2], dev[3]], dtype=float)


def _balance_scales(x, p: ReactorParams):
    # magnitude of the individual terms in each balance, for relative residuals
    R = abs(reaction_rate(x[0], x[1], x[2], 0.0, p))
    q = p.q
    return np.array([
        q * (p.c_Ain + abs(x[0])) + R,
        q * (p.c_Bin + abs(x[1])) + R,
        q * (p.theta_in + abs(x[2])) + p.heat * R + p.h_R * (abs(x[2]) + abs(x[3])),
        p.q_J * (p.theta_Jin + abs(x[3])) + p.h_J * (abs(x[2]) + abs(x[3])),
    ])


def find_steady_state(params: ReactorParams | None = None, guess=None, damping=0.5,
                      max_iter=200, tol=1e-10) -> np.ndarray:
    """Damped Newton iteration on ``reactor_rhs = 0`` from the inlet state."""
    p = params or ReactorParams()
    x = np.array(guess if guess is not None else [p.c_Ain, p.c_Bin, p.theta_in, p.theta_Jin], dtype=float)
    f = lambda z: reactor_rhs(z, 0.0, 0.0, p)
    for it in range(max_iter):
        r = f(x)
        if np.all(np.abs(r) <= tol * _balance_scales(x, p)):
            return x
        Jm = np.empty((4, 4))
        for i in range(4):
            h = 1e-7 * max(1.0, abs(x[i]))
            e = np.zeros(4)
            e[i] = h
            Jm[:, i] = (f(x + e) - f(x - e)) / (2 * h)
        try:
            dx = np.linalg.solve(Jm, -r)
        except np.linalg.LinAlgError:
            raise NoConvergence("singular Jacobian in steady-state search") from None
        # full steps once the residual is small; damped otherwise
        rel = float(np.max(np.abs(r) / _balance_scales(x, p)))
        step = 1.0 if rel < 1e-6 else damping
        x = x + step * dx
        if x[2] <= 0 or x[3] <= 0 or not np.all(np.isfinite(x)):
            raise NoConvergence(f"Newton left the physical region at iteration {it}")
    raise NoConvergence(f"no steady state within {max_iter} iterations")


# ---------------------------------------------------------------------------
# Plant in deviation form


def default_box():
    return np.array([[-0.1, 0.1], [-0.1, 0.1], [-5.0, 5.0], [-5.0, 5.0]])


def reference_state(params: ReactorParams):
    """Linearisation point: reported steady state under paper_literal, computed otherwise."""
    if params.paper_literal:
        return np.array(REPORTED_STEADY_STATE, dtype=float)
    return find_steady_state(params)


def reactor_plant(params: ReactorParams | None = None, ref=None, fault="f1", box=None) -> NonlinearPlant:
    p = params or ReactorParams()
    ref = reference_state(p) if ref is None else np.asarray(ref, dtype=float)
    rate = _rate_closure(p)
    r0, r1, r2 = (float(v) for v in ref[:3])
    R0 = rate(r0, r1, r2)
    q, qJ, heat, hR, hJ = p.q, p.q_J, p.heat, p.h_R, p.h_J
    gw = p.w_scale * p.rate_factor
    E_w = np.array([-1.0, -1.0, heat, 0.0]) * gw
    E_f2 = np.array([0.0, 0.0, 0.0, qJ])
    K_f1 = np.array([1.0, 0.0, 0.0])
    zn, zp = np.zeros(4), np.zeros(3)
    for a in (E_w, E_f2, K_f1, zn, zp):
        a.setflags(write=False)

    def drift(x):
        c, cb, th, thJ = x
        dR = rate(c + r0, cb + r1, th + r2) - R0
        return np.array([-q * c - dR, -q * cb - dR,
                         -q * th + heat * dR - hR * (th - thJ), -qJ * thJ + hJ * (th - thJ)])

    def H(x):
        return np.array([x[0], x[2], x[3]], dtype=float)

    def rhs(x, u):
        c, cb, th, thJ = x.tolist() if isinstance(x, np.ndarray) else map(float, x)
        _, f2, w = u.tolist() if isinstance(u, np.ndarray) else map(float, u)
        dR = rate(c + r0, cb + r1, th + r2) - R0 + gw * w
        return np.array([-q * c - dR, -q * cb - dR,
                         -q * th + heat * dR - hR * (th - thJ), qJ * (f2 - thJ) + hJ * (th - thJ)])

    def out(x, u):
        return np.array([x[0] + u[0], x[2], x[3]], dtype=float)

    chans = [
        Channel("f1", lambda x: zn, lambda x: K_f1),
        Channel("f2", lambda x: E_f2, lambda x: zp),
        Channel("w", lambda x: E_w, lambda x: zp),
    ]
    plant = NonlinearPlant(4, 3, drift, H, chans, fault, default_box() if box is None else box,
                           name="cstr", rhs=rhs, out=out)
    plant.reference = ref
    plant.params = p
    return plant


# ---------------------------------------------------------------------------
# Observers


def observer1_solution(params: ReactorParams | None = None) -> ParitySolution:
    """Sensor ramp fault f1; decoupled from f2 and w; alpha_1 is forced to F/V."""
    p = params or ReactorParams()
    k = p.rho * p.c_p / (-p.dH_R * 1e3)
    q = p.q
    ua_v = p.ua / (-p.dH_R * 1e3 * p.V)
    v0 = [-q, -k * (q + p.ua / (p.rho * p.c_p * p.V)), ua_v]
    v1 = [-1.0, -k, 0.0]
    return ParitySolution(np.array([v0, v1]), np.array([q]), "registered", 0.0, "ramp")


def observer2_solution(params: ReactorParams | None = None, alpha1: float = 0.01) -> ParitySolution:
    """Jacket inlet step fault f2; decoupled from f1 and w; any alpha_1 > 0."""
    p = params or ReactorParams()
    if not alpha1 > 0:
        raise InvalidSpec("alpha1 must be positive")
    u = p.ua / (p.rho_J * p.c_pJ * p.flow_J)
    v0 = -alpha1 * np.array([0.0, -u, 1.0 + u])
    v1 = -alpha1 * np.array([0.0, 0.0, p.V_J / p.flow_J])
    return ParitySolution(np.array([v0, v1]), np.array([alpha1]), "registered", 0.0, "step")


def observer1_extended(params=None, plant=None):
    plant = plant or reactor_plant(params)
    return extend(plant.with_fault("f1") if plant.fault != "f1" else plant, make_ramp(1.0))


def observer2_extended(params=None, plant=None):
    plant = plant or reactor_plant(params)
    return extend(plant.with_fault("f2"), make_step(10.0))


def observer1(params=None, plant=None):
    sol = observer1_solution(params or (plant.params if plant is not None else None))
    gen = build_observer(sol, name="observer1")
    gen.solution = sol
    gen.tmap = build_tmap(observer1_extended(params, plant), sol, LieEngine())
    return gen


def observer2(params=None, alpha1: float = 0.01, plant=None):
    sol = observer2_solution(params or (plant.params if plant is not None else None), alpha1)
    gen = build_observer(sol, name="observer2")
    gen.solution = sol
    gen.tmap = build_tmap(observer2_extended(params, plant), sol, LieEngine())
    return gen


def symbolic_filters(params: ReactorParams | None = None, alpha1: float = 0.01):
    """Closed-form filter coefficients written out term by term."""
    p = params or ReactorParams()
    q = p.q
    ua_dh_v = p.ua / (-p.dH_R * 1e3 * p.V)
    rcp_dh = p.rho * p.c_p / (-p.dH_R * 1e3)
    u = p.ua / (p.rho_J * p.c_pJ * p.flow_J)
    vj_fj = p.V_J / p.flow_J
    obs1 = {"A": [[-q]], "B": [[0.0, ua_dh_v, -ua_dh_v]], "C": [[1.0]], "D": [[1.0, rcp_dh, 0.0]]}
    obs2 = {"A": [[-alpha1]], "B": [[0.0, -alpha1 * u, -alpha1 * (alpha1 * vj_fj - 1.0 - u)]],
            "C": [[1.0]], "D": [[0.0, 0.0, alpha1 * vj_fj]]}
    return obs1, obs2


# ---------------------------------------------------------------------------
# Scenario


@dataclass
class ScenarioConfig:
    paper_literal: bool = False
    time_unit: str = "seconds"
    t_end: float = 8000.0
    dt: float = 0.1
    w: float = 1e5
    w_scale: float = 1e-8
    disturbance: bool = True
    init_error: float = 1.0
    alpha2: float = 0.01
    ramp_onset: float = 2000.0
    ramp_x_o0: tuple = (1.0, 0.001)
    step_onset: float = 5000.0
    step_value: float = 10.0
    substeps: int | None = None
    params: dict = field(default_factory=dict)

    def reactor_params(self) -> ReactorParams:
        return ReactorParams(**{**self.params, "paper_literal": self.paper_literal,
                                "time_unit": self.time_unit, "w_scale": self.w_scale})


OPEN_QUESTIONS = [
    "alpha_1 = 0.01 is applied to observer 2; observer 1 has alpha_1 = F/V forced by the conditions",
    "F/V for observer 1 is taken in the active time unit (see params.q)",
    "w enters the rate as w * w_scale; the literal w = 1e5 in rate units diverges within 1e-4 time units",
]


@dataclass
class ScenarioResult:
    bank: object
    report: dict
    plant: NonlinearPlant
    observers: dict

    @property
    def trajectory(self):
        return self.bank.trajectory


def build_scenario(cfg: ScenarioConfig):
    p = cfg.reactor_params()
    plant = reactor_plant(p)
    obs = {"observer1": observer1(p, plant=plant), "observer2": observer2(p, cfg.alpha2, plant=plant)}
    sched = FaultSchedule([
        FaultEvent("f1", make_ramp(1.0), cfg.ramp_onset, cfg.ramp_x_o0),
        FaultEvent("f2", make_step(cfg.step_value), cfg.step_onset, [cfg.step_value]),
    ])
    dist = [DisturbanceSignal.constant("w", cfg.w)] if cfg.disturbance else []
    sim = SimConfig(cfg.t_end, cfg.dt, np.zeros(4), None, [[cfg.init_error], [cfg.init_error]], cfg.substeps)
    return p, plant, obs, sched, dist, sim


def run_paper_scenario(cfg: ScenarioConfig | None = None, **overrides) -> ScenarioResult:
    cfg = replace(cfg or ScenarioConfig(), **overrides)
    t0 = time.perf_counter()
    p, plant, obs, sched, dist, sim = build_scenario(cfg)
    bank = run_bank(plant, sched, dist, obs, sim)
    report = scenario_metrics(bank, cfg, p, obs)
    report["runtime_s"] = time.perf_counter() - t0
    report["reference_state"] = plant.reference.tolist()
    return ScenarioResult(bank, report, plant, obs)


def scenario_metrics(bank, cfg: ScenarioConfig, p: ReactorParams, obs) -> dict:
    tr = bank.trajectory
    t = tr.t
    a1 = float(obs["observer1"].solution.alpha[0])
    a2 = float(obs["observer2"].solution.alpha[0])
    f1h, f2h = tr.fhat_of("observer1"), tr.fhat_of("observer2")
    f1 = tr.f_of("f1")
    m: dict = {"alpha1_observer1": a1, "alpha1_observer2": a2,
               "thresholds": dict(bank.rule.epsilon), "dwell": bank.rule.dwell,
               "substeps": tr.meta.get("substeps"), "open_questions": OPEN_QUESTIONS,
               "params": p.to_dict(), "config": {k: v for k, v in asdict(cfg).items() if k != "params"}}

    def decay(fh, a):
        seg = t < min(cfg.ramp_onset, cfg.step_onset)
        ref = cfg.init_error * np.exp(-a * t[seg])
        big = np.abs(ref) >= 1e-6 * abs(cfg.init_error)
        rel = float(np.max(np.abs(fh[seg][big] - ref[big]) / np.abs(ref[big]))) if big.any() else 0.0
        small = ~big
        ab = float(np.max(np.abs(fh[seg][small] - ref[small]))) if small.any() else 0.0
        return rel, ab

    for name, fh, a in (("observer1", f1h, a1), ("observer2", f2h, a2)):
        rel, ab = decay(fh, a)
        m[f"{name}_decay_max_rel_err"] = rel
        m[f"{name}_decay_tail_abs_err"] = ab
    w2 = t >= cfg.step_onset + 5.0 / a2
    m["step_window_start"] = cfg.step_onset + 5.0 / a2
    m["step_tracking_max_err"] = float(np.max(np.abs(f2h[w2] - cfg.step_value))) if w2.any() else None
    w1 = t >= cfg.ramp_onset + 7.0 / a1
    m["ramp_window_start"] = cfg.ramp_onset + 7.0 / a1
    m["ramp_tracking_max_err"] = float(np.max(np.abs(f1h[w1] - f1[w1]))) if w1.any() else None
    pre = (t >= cfg.ramp_onset) & (t < cfg.step_onset)
    m["observer2_sup_before_step"] = float(np.max(np.abs(f2h[pre]))) if pre.any() else None
    probe_t = 0.5 * (cfg.ramp_onset + cfg.step_onset)
    if len(t) and t[-1] >= probe_t:
        m["flags_between_onsets"] = bank.flags(probe_t)
    if len(t):
        m["flags_at_end"] = bank.flags()
        m["estimates_at_end"] = bank.estimates()
        m["alarm_observer1"] = bank.rule.first_alarm(tr, "observer1", cfg.ramp_onset)
        m["alarm_observer2"] = bank.rule.first_alarm(tr, "observer2", cfg.step_onset)
    return m
