"""Sampling-based verification of the existence and decoupling conditions."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from .errors import InvalidSpec, UnsupportedOrder
from .exo import ExoSystem, apply_char_poly
from .lie import LieEngine
from .plant import ExtendedSystem, extend
from .synthesis import InjectionSolution, ParitySolution, ResidualGenerator, TMap

DEFAULT_SAMPLES = 200


@dataclass
class CheckReport:
    condition: str
    samples: int
    max_residual: float
    argmax: list | None
    passed: bool
    tolerance: float
    noise_floor: float
    parts: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    def to_dict(self):
        return {
            "condition": self.condition, "samples": self.samples,
            "max_residual": self.max_residual, "argmax": self.argmax,
            "passed": self.passed, "tolerance": self.tolerance,
            "noise_floor": self.noise_floor,
            "parts": [p.to_dict() for p in self.parts], "notes": list(self.notes),
        }

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        line = (f"{status} {self.condition}: max|residual|={self.max_residual:.3e} "
                f"(tol {self.tolerance:.1e}, noise {self.noise_floor:.1e}, {self.samples} samples)")
        if not self.passed and self.argmax is not None:
            line += f" at {np.array2string(np.asarray(self.argmax), precision=6)}"
        lines = [line] + ["  " + p.summary().replace("\n", "\n  ") for p in self.parts]
        lines += [f"  note: {n}" for n in self.notes]
        return "\n".join(lines)


def sample_box(box, k: int, seed: int = 0) -> np.ndarray:
    """``k`` scrambled-Halton points in the axis-aligned ``box`` (d x 2)."""
    box = np.asarray(box, dtype=float)
    if k <= 0:
        return np.zeros((0, box.shape[0]))
    gen = qmc.Halton(d=box.shape[0], scramble=True, seed=seed)
    return qmc.scale(gen.random(k), box[:, 0], np.maximum(box[:, 1], box[:, 0] + 1e-300)) \
        if np.all(box[:, 1] > box[:, 0]) else _degenerate(gen.random(k), box)


def _degenerate(u, box):
    return box[:, 0] + u * (box[:, 1] - box[:, 0])


def _reduce(condition, residuals, floors, points, tol, extra=None):
    """Per-sample pass rule ``|r_i| <= tol + floor_i``, lowest index wins ties."""
    r = np.asarray(residuals, dtype=float)
    f = np.asarray(floors, dtype=float)
    k = len(r)
    if k == 0:
        return CheckReport(condition, 0, 0.0, None, True, tol, 0.0)
    i = int(np.argmax(r))
    passed = bool(np.all(r <= tol + f))
    rep = CheckReport(condition, k, float(r[i]), np.asarray(points[i]).tolist(), passed, tol, float(f.max()))
    if extra is not None:
        rep.notes.extend(extra)
    return rep


def _points(ext: ExtendedSystem, samples, seed):
    if isinstance(samples, int):
        return sample_box(ext.box, samples, seed)
    return np.atleast_2d(np.asarray(samples, dtype=float))


def default_tolerance(ext: ExtendedSystem, points) -> float:
    scale = max(1.0, max(float(np.max(np.abs(ext.H_e(X)))) for X in points[:20]))
    return 1e-6 * scale


def _as_ext(ext_or_plant, exo=None):
    if isinstance(ext_or_plant, ExtendedSystem):
        return ext_or_plant
    return extend(ext_or_plant, exo)


def check_existence(ext: ExtendedSystem, sol, samples=DEFAULT_SAMPLES, tol=None,
                    lie: LieEngine | None = None, seed: int = 0) -> CheckReport:
    """Residual of ``sum_k L^k(v_k H_e) + Q P_A(R) x_o`` over the sampled box."""
    lie = lie or LieEngine()
    s = sol.s
    pts = _points(ext, samples, seed)
    tol = default_tolerance(ext, pts) if tol is None else tol
    qp = (ext.exo.Q @ apply_char_poly(ext.exo, sol.alpha))[0]
    res, floors = [], []
    if isinstance(sol, InjectionSolution):
        if s > lie.max_order:
            raise UnsupportedOrder(f"order {s} exceeds max_order={lie.max_order}")
        for X in pts:
            total, err = qp @ X[ext.n:], 0.0
            for k, fn in enumerate(sol.v_fns):
                val, e = lie.lie(lambda Z, fn=fn: fn(ext.H_e(Z)), [ext.F_e] * k, X)
                total += float(val)
                err += float(e)
            res.append(abs(total))
            floors.append(err)
        return _reduce("existence", res, floors, pts, tol)
    lie.check_order(ext, s)
    for X in pts:
        L, E = lie.output_derivatives(ext, X, s)
        total = float(np.sum(sol.v * L)) + qp @ X[ext.n:]
        res.append(abs(total))
        floors.append(float(np.sum(np.abs(sol.v) * E)))
    return _reduce("existence", res, floors, pts, tol)


def check_decoupling(ext: ExtendedSystem, sol: ParitySolution, samples=DEFAULT_SAMPLES, tol=None,
                     lie: LieEngine | None = None, seed: int = 0, channels=None) -> CheckReport:
    """Rows ``v_(k-1) K_i + sum_(mu>=k) L_Ei L^(mu-k)(v_mu H_e)`` and ``v_s K_i`` for every disturbance."""
    lie = lie or LieEngine()
    s = sol.s
    pts = _points(ext, samples, seed)
    tol = default_tolerance(ext, pts) if tol is None else tol
    names = [c.name for c in ext.plant.disturbances]
    idx = range(len(names)) if channels is None else [names.index(c) for c in channels]
    parts = []
    for i in idx:
        res, floors = [], []
        Ki = ext.K_e(i)
        for X in pts:
            L, E = lie.disturbance_derivatives(ext, i, X, s - 1)
            K = Ki(X)
            worst, werr = abs(float(sol.v[s] @ K)), 0.0
            for kappa in range(1, s + 1):
                val = float(sol.v[kappa - 1] @ K)
                err = 0.0
                for mu in range(kappa, s + 1):
                    val += float(sol.v[mu] @ L[mu - kappa])
                    err += float(np.abs(sol.v[mu]) @ E[mu - kappa])
                if abs(val) - err > worst - werr:
                    worst, werr = abs(val), err
            res.append(worst)
            floors.append(werr)
        parts.append(_reduce(f"decoupling[{names[i]}]", res, floors, pts, tol))
    return _combine("decoupling", parts, tol)


def _combine(condition, parts, tol, notes=()):
    if not parts:
        return CheckReport(condition, 0, 0.0, None, True, tol, 0.0, notes=list(notes))
    worst = max(parts, key=lambda p: p.max_residual)
    return CheckReport(condition, max(p.samples for p in parts), worst.max_residual, worst.argmax,
                       all(p.passed for p in parts), tol, max(p.noise_floor for p in parts),
                       parts=list(parts), notes=list(notes))


def check_manifold(ext: ExtendedSystem, sol, tmap: TMap, gen: ResidualGenerator,
                   samples=DEFAULT_SAMPLES, tol=None, lie: LieEngine | None = None, seed: int = 0) -> CheckReport:
    """Invariance ``L_Fe T = A T + B H_e`` and output consistency ``C T + D H_e = Q x_o``."""
    lie = lie or LieEngine(max_order=max(2, sol.s + 1))
    pts = _points(ext, samples, seed)
    tol = default_tolerance(ext, pts) if tol is None else tol
    inv, inv_err, out = [], [], []
    for X in pts:
        T = tmap(X)
        y = ext.H_e(X)
        dT, err = _lie_of_tmap(lie, tmap, ext, X)
        inv.append(float(np.max(np.abs(dT - (gen.A @ T + gen.input_term(y))))))
        inv_err.append(float(np.max(err)))
        out.append(abs(float((gen.C @ T)[0]) + gen.feedthrough(y) - ext.fault(X)))
    p1 = _reduce("invariance", inv, inv_err, pts, tol)
    p2 = _reduce("output", out, np.zeros(len(out)), pts, tol)
    return _combine("manifold", [p1, p2], tol)


def _lie_of_tmap(lie, tmap, ext, X):
    # T already holds s-1 nested derivatives; one more level on top
    eng = LieEngine(max_order=99, mode="numeric", step_scale=lie.step_scale)
    return eng.lie(tmap, [ext.F_e], X)


# ---------------------------------------------------------------------------
# Specialised structures


def _is_zero_field(fn, pts, n):
    return all(not np.any(np.asarray(fn(x[:n]))) for x in pts)


def _is_const_field(fn, pts, n):
    ref = np.asarray(fn(pts[0][:n]))
    return all(np.array_equal(np.asarray(fn(x[:n])), ref) for x in pts)


def detect_structure(ext: ExtendedSystem, sol) -> str:
    pts = sample_box(ext.box, 16, 7)
    n = ext.n
    if isinstance(sol, InjectionSolution):
        return "injection"
    G_zero = _is_zero_field(ext.plant.G, pts, n)
    J_const = _is_const_field(ext.plant.J, pts, n)
    if G_zero and J_const:
        return "additive_sensor"
    if sol.s == 1 and _is_zero_field(ext.plant.J, pts, n):
        return "process_fault"
    if sol.s == 1:
        return "scalar"
    raise InvalidSpec("no specialised structure applies (need G=0 with constant J, or s=1)")


def check_special_cases(plant, exo: ExoSystem, sol, tol: float = 1e-6, case: str = "auto",
                        samples=DEFAULT_SAMPLES, lie: LieEngine | None = None, seed: int = 0) -> CheckReport:
    """Evaluate the split conditions that apply to the plant's structure.

    ``case`` is one of ``additive_sensor`` (G = 0, J constant),
    ``process_fault`` (J = 0, s = 1), ``scalar`` (s = 1), ``injection``
    (output-injection parity functions, s = 1) or ``auto``.
    """
    ext = plant if isinstance(plant, ExtendedSystem) else extend(plant, exo)
    lie = lie or LieEngine()
    detected = detect_structure(ext, sol) if case == "auto" else case
    pts_check = sample_box(ext.box, 16, 7)
    n = ext.n
    if detected == "additive_sensor":
        if not (_is_zero_field(ext.plant.G, pts_check, n) and _is_const_field(ext.plant.J, pts_check, n)):
            raise InvalidSpec("additive_sensor case needs G = 0 and constant J")
        parts = _additive_sensor(ext, sol, tol, samples, lie, seed)
    elif detected == "process_fault":
        if sol.s != 1 or not _is_zero_field(ext.plant.J, pts_check, n):
            raise InvalidSpec("process_fault case needs s = 1 and J = 0")
        parts = _process_fault(ext, sol, tol, samples, lie, seed)
    elif detected == "scalar":
        if sol.s != 1:
            raise InvalidSpec("scalar case needs s = 1")
        parts = _scalar(ext, sol, tol, samples, lie, seed)
    elif detected == "injection":
        if not isinstance(sol, InjectionSolution) or sol.s != 1:
            raise InvalidSpec("injection case needs s = 1 parity functions")
        if not _is_zero_field(ext.plant.J, pts_check, n):
            raise InvalidSpec("injection split conditions assume J = 0")
        parts = _injection(ext, sol, tol, samples, lie, seed)
    else:
        raise InvalidSpec(f"unknown case {case!r}")
    if ext.exo.kind == "ramp" and not isinstance(sol, InjectionSolution):
        parts.append(_ramp_form(ext, sol, tol, samples, lie, seed))
    return _combine(f"special[{detected}]", parts, tol)


def _x_points(ext, samples, seed):
    return sample_box(ext.plant.box, samples, seed) if isinstance(samples, int) else np.atleast_2d(samples)[:, :ext.n]


def _lie_F(ext, lie, phi, extra_fields, x):
    return lie.lie(phi, extra_fields, x)


def _additive_sensor(ext, sol, tol, samples, lie, seed):
    plant, exo, s = ext.plant, ext.exo, sol.s
    pts = _x_points(ext, samples, seed)
    F, H = plant.F, plant.H
    res, fl = [], []
    for x in pts:
        total, err = 0.0, 0.0
        for k in range(s + 1):
            vk = sol.v[k]
            val, e = lie.lie(lambda z, vk=vk: vk @ H(z), [F] * k, x)
            total += float(val)
            err += float(e)
        res.append(abs(total))
        fl.append(err)
    p_out = _reduce("parity_free (G=0)", res, fl, pts, tol)

    # exact matrix identity: sum_k (v_k J + alpha_(s-k)) Q R^k = 0 with alpha_0 = 1
    J = np.asarray(plant.J(pts[0]), dtype=float)
    a = np.concatenate([[1.0], sol.alpha])
    M = np.zeros_like(exo.Q[0])
    QR = exo.Q[0].copy()
    for k in range(s + 1):
        M = M + (float(sol.v[k] @ J) + a[s - k]) * QR
        QR = QR @ exo.R
    scale = max(1.0, float(np.max(np.abs(sol.alpha))), float(np.max(np.abs(sol.v))) * float(np.max(np.abs(J))))
    exact = float(np.max(np.abs(M)))
    p_exo = CheckReport("exo_identity", 0, exact, None, exact <= 1e-12 * scale, 1e-12 * scale, 0.0)
    parts = [p_out, p_exo]
    if exo.kind == "step":
        val = abs(float(sol.v[0] @ J) + sol.alpha[-1])
        parts.append(CheckReport("step: v0 J + alpha_s = 0", 0, val, None, val <= 1e-12 * scale,
                                 1e-12 * scale, 0.0))
    parts.append(_plant_decoupling(ext, sol, tol, pts, lie))
    return parts


def _plant_decoupling(ext, sol, tol, pts, lie):
    """Decoupling rows with ``L_F`` in place of ``L_Fe`` (x_o-free form)."""
    plant, s = ext.plant, sol.s
    parts = []
    for c in plant.disturbances:
        res, fl = [], []
        for x in pts:
            K = np.asarray(c.K(x))
            worst, werr = abs(float(sol.v[s] @ K)), 0.0
            for kappa in range(1, s + 1):
                val, err = float(sol.v[kappa - 1] @ K), 0.0
                for mu in range(kappa, s + 1):
                    vm = sol.v[mu]
                    d, e = lie.lie(lambda z, vm=vm: vm @ plant.H(z), [c.E] + [plant.F] * (mu - kappa), x)
                    val += float(d)
                    err += float(e)
                if abs(val) - err > worst - werr:
                    worst, werr = abs(val), err
            res.append(worst)
            fl.append(werr)
        parts.append(_reduce(f"decoupling[{c.name}]", res, fl, pts, tol))
    return _combine("decoupling", parts, tol)


def _process_fault(ext, sol, tol, samples, lie, seed):
    plant, exo = ext.plant, ext.exo
    pts = _x_points(ext, samples, seed)
    v0, v1, a1 = sol.v[0], sol.v[1], sol.alpha[0]
    H, F, G = plant.H, plant.F, plant.G
    phi1 = lambda z: v1 @ H(z)
    r15, f15, r16, f16 = [], [], [], []
    target = exo.Q[0] @ (exo.R + a1 * np.eye(exo.n_o))
    for x in pts:
        d, e = lie.lie(phi1, [F], x)
        r15.append(abs(float(v0 @ H(x)) + float(d)))
        f15.append(float(e))
        g, eg = lie.lie(phi1, [G], x)
        r16.append(float(np.max(np.abs(float(g) * exo.Q[0] + target))))
        f16.append(float(eg) * float(np.max(np.abs(exo.Q[0]))))
    parts = [_reduce("fault-free parity", r15, f15, pts, tol),
             _reduce("fault-gain identity", r16, f16, pts, tol),
             _scalar_decoupling(ext, sol, tol, pts, lie)]
    return parts


def _scalar_decoupling(ext, sol, tol, pts, lie):
    plant = ext.plant
    v0, v1 = sol.v[0], sol.v[1]
    parts = []
    for c in plant.disturbances:
        res, fl = [], []
        for x in pts:
            K = np.asarray(c.K(x))
            d, e = lie.lie(lambda z: v1 @ plant.H(z), [c.E], x)
            res.append(max(abs(float(v0 @ K) + float(d)), abs(float(v1 @ K))))
            fl.append(float(e))
        parts.append(_reduce(f"decoupling[{c.name}]", res, fl, pts, tol))
    return _combine("decoupling", parts, tol)


def _scalar(ext, sol, tol, samples, lie, seed):
    """s = 1 conditions written with the original F, G, H, J."""
    plant, exo = ext.plant, ext.exo
    pts = _points(ext, samples, seed)
    v0, v1, a1 = sol.v[0], sol.v[1], sol.alpha[0]
    Q, R = exo.Q[0], exo.R
    n = ext.n
    res, fl = [], []
    for X in pts:
        x, xo = X[:n], X[n:]
        f = float(Q @ xo)
        he = lambda z: v1 @ (plant.H(z) + plant.J(z) * f)
        dF, eF = lie.lie(he, [plant.F], x)
        dG, eG = lie.lie(he, [plant.G], x)
        total = (float(v0 @ (plant.H(x) + plant.J(x) * f)) + float(dF) + float(dG) * f
                 + float(v1 @ plant.J(x)) * float(Q @ R @ xo) + float(Q @ (R + a1 * np.eye(exo.n_o)) @ xo))
        res.append(abs(total))
        fl.append(float(eF) + abs(f) * float(eG))
    p = _reduce("scalar existence", res, fl, pts, tol)
    dec = []
    for c in plant.disturbances:
        r, f_ = [], []
        for X in pts:
            x, xo = X[:n], X[n:]
            f = float(Q @ xo)
            K = np.asarray(c.K(x))
            d, e = lie.lie(lambda z: v1 @ (plant.H(z) + plant.J(z) * f), [c.E], x)
            r.append(max(abs(float(v0 @ K) + float(d)), abs(float(v1 @ K))))
            f_.append(float(e))
        dec.append(_reduce(f"decoupling[{c.name}]", r, f_, pts, tol))
    return [p, _combine("decoupling", dec, tol)]


def _injection(ext, sol: InjectionSolution, tol, samples, lie, seed):
    plant, exo = ext.plant, ext.exo
    pts = _x_points(ext, samples, seed)
    v0, v1 = sol.v_fns
    a1 = sol.alpha[0]
    H, F, G = plant.H, plant.F, plant.G
    phi1 = lambda z: float(v1(H(z)))
    target = exo.Q[0] @ (exo.R + a1 * np.eye(exo.n_o))
    r30, f30, r31, f31 = [], [], [], []
    for x in pts:
        d, e = lie.lie(phi1, [F], x)
        r30.append(abs(float(v0(H(x))) + float(d)))
        f30.append(float(e))
        g, eg = lie.lie(phi1, [G], x)
        r31.append(float(np.max(np.abs(float(g) * exo.Q[0] + target))))
        f31.append(float(eg))
    parts = [_reduce("injection fault-free parity", r30, f30, pts, tol),
             _reduce("injection fault-gain identity", r31, f31, pts, tol)]
    dec = []
    for c in plant.disturbances:
        r, f_ = [], []
        for x in pts:
            d, e = lie.lie(phi1, [c.E], x)
            r.append(abs(float(d)))
            f_.append(float(e))
        dec.append(_reduce(f"decoupling[{c.name}]", r, f_, pts, tol))
    parts.append(_combine("decoupling", dec, tol))
    return parts


def _ramp_form(ext, sol, tol, samples, lie, seed):
    """Ramp-specialised existence residual with explicit ``alpha_(s-1) x_o2 + alpha_s x_o1``."""
    s = sol.s
    pts = _points(ext, samples, seed)
    a = np.concatenate([[1.0], sol.alpha])
    res, fl = [], []
    for X in pts:
        L, E = lie.output_derivatives(ext, X, s)
        xo = X[ext.n:]
        total = float(np.sum(sol.v * L)) + a[s - 1] * xo[1] + a[s] * xo[0]
        res.append(abs(total))
        fl.append(float(np.sum(np.abs(sol.v) * E)))
    return _reduce("ramp form (alpha_0 = 1)", res, fl, pts, tol)


def detection_only_residuals(ext: ExtendedSystem, sol: ParitySolution, points, lie: LieEngine | None = None):
    """Existence and decoupling residuals computed with ``F``, ``H`` (no exo-system).

    Used to cross-check the extended residuals restricted to ``x_o = 0``.
    """
    lie = lie or LieEngine()
    plant, s = ext.plant, sol.s
    exist, dec = [], []
    for x in np.atleast_2d(points):
        total = 0.0
        for k in range(s + 1):
            vk = sol.v[k]
            val, _ = lie.lie(lambda z, vk=vk: vk @ plant.H(z), [plant.F] * k, x)
            total += float(val)
        exist.append(total)
        rows = []
        for c in plant.disturbances:
            K = np.asarray(c.K(x))
            for kappa in range(1, s + 1):
                val = float(sol.v[kappa - 1] @ K)
                for mu in range(kappa, s + 1):
                    vm = sol.v[mu]
                    d, _ = lie.lie(lambda z, vm=vm: vm @ plant.H(z), [c.E] + [plant.F] * (mu - kappa), x)
                    val += float(d)
                rows.append(val)
        dec.append(rows)
    return np.array(exist), np.array(dec)
