"""Command-line front end: ``design``, ``check``, ``simulate`` and ``reactor``.

Exit codes: 0 ok, 1 check failed, 2 no solution, 3 configuration error,
4 unsupported derivative order.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import reactor as rx
from .checks import (DEFAULT_SAMPLES, check_decoupling, check_existence, check_manifold,
                     check_special_cases, _combine)
from .config import ConfigError, exo_from, linear_plant_from, load_config
from .errors import DimensionError, InvalidSpec, NoSolution, ResidgenError, UnsupportedOrder
from .lie import LieEngine
from .plant import extend, lift_linear
from .simulation import DisturbanceSignal, FaultEvent, FaultSchedule, SimConfig, simulate_cascade
from .synthesis import (ParitySolution, ResidualGenerator, build_observer, build_tmap, ramp_ratio_residual,
                        solve_parity_linear)

log = logging.getLogger("residgen")

EXIT_OK, EXIT_CHECK_FAIL, EXIT_NO_SOLUTION, EXIT_CONFIG, EXIT_UNSUPPORTED = 0, 1, 2, 3, 4
OUTPUT_ENV = "RESIDGEN_OUTPUT_DIR"


def output_dir(args, cfg=None) -> Path:
    out = args.output or (cfg or {}).get("output") or os.environ.get(OUTPUT_ENV) or "residgen_out"
    p = Path(out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Design assembly


class Design:
    def __init__(self, plant, ext, sol, gen, notes=()):
        self.plant, self.ext, self.sol, self.gen = plant, ext, sol, gen
        self.notes = list(notes)


def _lie(cfg):
    c = cfg.get("check", {})
    return LieEngine(max_order=c.get("max_order", 2), mode=c.get("lie_mode", "auto"))


def _reactor_setup(cfg):
    pc = cfg["plant"]
    params = rx.ReactorParams(**{**pc.get("params", {}), "paper_literal": pc.get("paper_literal", False),
                                 "time_unit": pc.get("time_unit", "seconds"), "w_scale": pc.get("w_scale", 1.0)})
    return params, rx.reactor_plant(params)


def design_from_config(cfg, seed=None) -> Design:
    pc = cfg["plant"]
    seed = cfg.get("seed", 0) if seed is None else seed
    if pc["type"] == "builtin":
        params, plant = _reactor_setup(cfg)
        alpha = cfg.get("alpha", {})
        if pc["observer"] == "observer1":
            sol = rx.observer1_solution(params)
            ext = rx.observer1_extended(params, plant)
            notes = ["alpha_1 = F/V is forced by the conditions; other values are falsifiable by `check`,"
                     " uniqueness is not proven"]
            if alpha.get("values") and not np.isclose(alpha["values"][0], params.q, rtol=1e-12):
                notes.append(f"requested alpha {alpha['values']} ignored; using F/V = {params.q!r}")
        else:
            a1 = float(alpha["values"][0]) if alpha.get("values") else 0.01
            sol = rx.observer2_solution(params, a1)
            ext = rx.observer2_extended(params, plant)
            notes = []
        gen = build_observer(sol, name=pc["observer"])
        return Design(plant, ext, sol, gen, notes)

    plant = linear_plant_from(pc)
    exo = exo_from(cfg["exo"])
    s = cfg.get("s", 1)
    alpha = cfg.get("alpha", {"mode": "fixed", "values": [1.0] * s})
    if alpha["mode"] == "fixed":
        sol = solve_parity_linear(plant, exo, s, alpha=alpha["values"])
    elif alpha["mode"] == "eigenvalues":
        eig = [complex(*v) if isinstance(v, list) else complex(v) for v in alpha["values"]]
        sol = solve_parity_linear(plant, exo, s, eigenvalues=eig)
    else:
        sol = solve_parity_linear(plant, exo, s, budget=alpha.get("budget", 10_000), seed=seed)
    notes = []
    if sol.mode == "alpha_free":
        notes.append("alpha selected by minimum ||v||, ties broken by the fastest slowest eigenvalue")
    ext = extend(plant, exo)
    return Design(lift_linear(plant), ext, sol, build_observer(sol, name=cfg.get("name", "observer")), notes)


def design_document(d: Design) -> dict:
    return {"schema": 1, "solution": d.sol.to_dict(), "observer": d.gen.to_dict(), "notes": d.notes}


def design_report(d: Design) -> str:
    sol = d.sol
    eig = sol.eigenvalues
    lines = [f"order s = {sol.s}, mode = {sol.mode}, fault kind = {sol.kind}",
             "alpha = " + ", ".join(repr(float(a)) for a in sol.alpha),
             "eigenvalues = " + ", ".join(f"{e.real:.6g}{e.imag:+.6g}j" for e in eig),
             f"Hurwitz: {bool(np.all(eig.real < 0))}",
             f"defining-equation residual = {sol.residual:.3e}"]
    for k, v in enumerate(sol.v):
        lines.append(f"v_{k} = {np.array2string(v, precision=10)}")
    if sol.kind == "ramp" and sol.s >= 1:
        lines.append(f"ramp ratio check sum(1/lambda) = -alpha_(s-1)/alpha_s: relative mismatch "
                     f"{ramp_ratio_residual(sol.alpha):.2e}")
    g = d.gen
    lines += [f"A = {g.A.tolist()}", f"B = {g.B.tolist()}", f"C = {g.C.tolist()}", f"D = {g.D.tolist()}"]
    lines += [f"note: {n}" for n in d.notes]
    return "\n".join(lines) + "\n"


def load_design(path):
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("schema") != 1:
        raise ConfigError(f"{path}: unsupported design schema {doc.get('schema')!r}")
    return ParitySolution.from_dict(doc["solution"]), ResidualGenerator.from_dict(doc["observer"])


def _resolve(cfg, args) -> Design:
    d = design_from_config(cfg, getattr(args, "seed", None))
    if getattr(args, "design", None):
        sol, gen = load_design(args.design)
        d = Design(d.plant, d.ext, sol, gen, d.notes)
    return d


# ---------------------------------------------------------------------------
# Commands


def cmd_design(args) -> int:
    cfg = load_config(args.config)
    d = design_from_config(cfg, args.seed)
    out = output_dir(args, cfg)
    _write_json(out / "design.json", design_document(d))
    report = design_report(d)
    (out / "design_report.txt").write_text(report)
    print(report, end="")
    print(f"wrote {out / 'design.json'}")
    return EXIT_OK


def run_checks(d: Design, samples, tol, seed, lie) -> list:
    reports = [check_existence(d.ext, d.sol, samples, tol, lie, seed),
               check_decoupling(d.ext, d.sol, samples, tol, lie, seed)]
    tmap = build_tmap(d.ext, d.sol, lie)
    reports.append(check_manifold(d.ext, d.sol, tmap, d.gen, samples, tol, None, seed))
    try:
        reports.append(check_special_cases(d.ext, None, d.sol, tol if tol is not None else 1e-6,
                                           samples=samples, lie=lie, seed=seed))
    except InvalidSpec as exc:
        log.info("special-case split skipped: %s", exc)
    return reports


def cmd_check(args) -> int:
    cfg = load_config(args.config)
    c = cfg.get("check", {})
    samples = args.samples or c.get("samples", DEFAULT_SAMPLES)
    tol = args.tol if args.tol is not None else c.get("tol")
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    d = _resolve(cfg, args)
    reports = run_checks(d, samples, tol, seed, _lie(cfg))
    overall = _combine("all", reports, reports[0].tolerance,
                       notes=d.notes + ["sampling cannot certify conditions off the sampled set"])
    out = output_dir(args, cfg)
    _write_json(out / "check_report.json", overall.to_dict())
    print(overall.summary())
    return EXIT_OK if overall.passed else EXIT_CHECK_FAIL


def _schedule_from(sim_cfg):
    return FaultSchedule([FaultEvent(f["channel"], exo_from(f["exo"]), f["onset"], f["x_o0"])
                          for f in sim_cfg.get("faults", [])])


def _disturbances_from(sim_cfg):
    out = []
    for d in sim_cfg.get("disturbances", []):
        if "value" in d:
            out.append(DisturbanceSignal.constant(d["channel"], d["value"]))
        else:
            out.append(DisturbanceSignal.piecewise(d["channel"], d["times"], d["values"]))
    return out


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    if "simulation" not in cfg:
        raise ConfigError("simulate needs a 'simulation' section")
    sc = cfg["simulation"]
    d = _resolve(cfg, args)
    d.gen.tmap = build_tmap(d.ext, d.sol, _lie(cfg))
    e0 = sc.get("e0")
    if e0 is not None:
        e0 = [np.atleast_1d(np.asarray(e0, dtype=float))]
    sim = SimConfig(sc["t_end"], sc["dt"], sc.get("x0"), None, e0, sc.get("substeps"))
    traj = simulate_cascade(d.plant, _schedule_from(sc), _disturbances_from(sc), [d.gen], sim)
    traj.meta["input_config"] = cfg
    traj.meta["seed"] = args.seed if args.seed is not None else cfg.get("seed", 0)
    out = output_dir(args, cfg)
    traj.write_csv(out / "trajectory.csv")
    traj.write_meta(out / "trajectory.json")
    print(f"wrote {out / 'trajectory.csv'} ({len(traj.t)} samples)")
    return EXIT_OK


def write_figure_data(path, traj):
    """Whitespace-separated columns for a fault-estimate plot."""
    cols = ["t", "f1", "fhat1", "f2", "fhat2"]
    data = np.column_stack([traj.t, traj.f_of("f1"), traj.fhat_of("observer1"),
                            traj.f_of("f2"), traj.fhat_of("observer2")]) if len(traj.t) else np.zeros((0, 5))
    with open(path, "w") as fh:
        fh.write("# " + " ".join(cols) + "\n")
        fh.write("# plot 'reactor_fig3.dat' u 1:3 w l t 'fhat1', '' u 1:5 w l t 'fhat2', "
                 "'' u 1:2 w l dt 2 t 'f1', '' u 1:4 w l dt 2 t 'f2'\n")
        for row in data:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def cmd_reactor(args) -> int:
    over = {"paper_literal": args.paper_literal, "disturbance": not args.no_disturbance}
    if args.t_end is not None:
        over["t_end"] = args.t_end
    if args.dt is not None:
        over["dt"] = args.dt
    if args.alpha2 is not None:
        over["alpha2"] = args.alpha2
    res = rx.run_paper_scenario(**over)
    out = output_dir(args)
    traj = res.trajectory
    traj.write_csv(out / "reactor_trajectory.csv")
    traj.meta["report"] = res.report
    traj.write_meta(out / "reactor_trajectory.json")
    _write_json(out / "reactor_report.json", res.report)
    write_figure_data(out / "reactor_fig3.dat", traj)
    r = res.report
    print(f"alpha (observer1, observer2) = ({r['alpha1_observer1']:.6g}, {r['alpha1_observer2']:.6g}); "
          f"substeps {r['substeps']}; runtime {r['runtime_s']:.1f} s")
    for key in ("step_tracking_max_err", "ramp_tracking_max_err", "observer2_sup_before_step",
                "flags_between_onsets", "flags_at_end"):
        print(f"{key}: {r.get(key)}")
    print(f"wrote {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser():
    ap = argparse.ArgumentParser(prog="residgen", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("config", help="scenario configuration (JSON)")
        p.add_argument("--output", "-o", help=f"output directory (default ${OUTPUT_ENV} or ./residgen_out)")
        p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("design", help="solve for parity vectors and build the observer")
    common(p)
    p.set_defaults(func=cmd_design)

    p = sub.add_parser("check", help="verify the existence and decoupling conditions by sampling")
    common(p)
    p.add_argument("--design", help="design.json to check instead of re-solving")
    p.add_argument("--samples", type=int)
    p.add_argument("--tol", type=float)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("simulate", help="simulate the plant/observer cascade")
    common(p)
    p.add_argument("--design", help="design.json to use instead of re-solving")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("reactor", help="run the two-fault reactor scenario")
    common(p, config=False)
    p.add_argument("--paper-literal", action="store_true", help="use every parameter number verbatim")
    p.add_argument("--t-end", type=float)
    p.add_argument("--dt", type=float)
    p.add_argument("--alpha2", type=float)
    p.add_argument("--no-disturbance", action="store_true")
    p.set_defaults(func=cmd_reactor)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except NoSolution as exc:
        print(f"no solution: {exc.reason}", file=sys.stderr)
        return EXIT_NO_SOLUTION
    except UnsupportedOrder as exc:
        print(f"unsupported: {exc}", file=sys.stderr)
        return EXIT_UNSUPPORTED
    except (ConfigError, InvalidSpec, DimensionError, FileNotFoundError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ResidgenError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CHECK_FAIL


if __name__ == "__main__":
    sys.exit(main())
