"""Command-line front end: validate / synth / simulate / reproduce.

Configuration is a single JSON file with ``plant``, ``synthesis`` and ``sim``
sections (matrices as nested row-major arrays).  Exit codes are a stable
contract: 0 success or feasible, 2 infeasible, 3 oracle undecided, 4 input
error.  ``PARASTAB_THREADS`` caps grid-search parallelism.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import model, sim, synthesis, transform
from .controller import FeedbackGain, build_gain
from .errors import ParastabError, PlantSpecError, SimulationBlowup
from .sdp import UNDECIDED, INFEASIBLE
from .spectral import (BoundaryConditions, actuator_matrix, eigenpairs,
                       make_grid)

EXIT_OK = 0
EXIT_INFEASIBLE = 2
EXIT_UNDECIDED = 3
EXIT_INPUT = 4

DEFAULT_CONFIG = {
    "plant": {"preset": "paper-siv", "l1": 15.0},
    "synthesis": {
        "delta": 1.0, "N": 5,
        "gamma_grid": [5.0, 10.0],
        "rho_grid": [1e-3, 5e-4, 1.24e-4, 1e-4, 1e-5],
        "k0": [-3.708, -26.329, -2.222],
        "eps_margin": 1e-7, "policy": "min_gamma",
    },
    "sim": {"modes": 60, "dt": 1e-4, "t_end": 5.0, "record_stride": 25},
    "seed": 0,
}


class ConfigError(Exception):
    pass


def _load_config(path: str | None) -> dict:
    if path is None:
        return json.loads(json.dumps(DEFAULT_CONFIG))
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}")
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config parse error at line {exc.lineno}, "
                          f"column {exc.colno}: {exc.msg}")


def _plant_from_config(section: dict) -> model.PlantSpec:
    if "preset" in section:
        name = section["preset"]
        if name != "paper-siv":
            raise ConfigError(f"unknown preset {name!r}")
        return model.paper_example(float(section.get("l1", 15.0)))
    try:
        bc_c = section["bc"]
        bc = BoundaryConditions(float(bc_c["gamma11"]), float(bc_c["gamma12"]),
                                float(bc_c["gamma21"]), float(bc_c["gamma22"]))
        L = float(section["length"])
        D = np.asarray(section["diffusion"], dtype=float)
        Q0 = np.zeros((3, 3))
        Q0[1, 0] = float(section["q21"])
        Q0[2, 1] = float(section["q32"])
        Q1 = np.asarray(section.get("Q1", np.zeros((3, 3))), dtype=float)
        nl_c = section.get("nonlinearity", {"kind": "zero"})
        nl = model.make_nonlinearity(nl_c.get("kind", "zero"),
                                     float(nl_c.get("gain", 0.0)),
                                     int(nl_c.get("arg", 3)))
        sh_c = section["shapes"]
        if sh_c["kind"] != "indicator-partition":
            raise ConfigError("config files support indicator-partition shapes; "
                              "custom shapes are available through the library API")
        shapes = model.ShapeFunctionSet.indicator_partition(int(sh_c["count"]), L)
        return model.PlantSpec(L, D, Q0, Q1, bc, nl, shapes)
    except KeyError as exc:
        raise ConfigError(f"plant section missing field {exc.args[0]!r}")
    except PlantSpecError as exc:
        raise ConfigError(f"plant section invalid: {exc}")
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"plant section malformed: {exc}")


def _synth_from_config(section: dict, overrides) -> synthesis.SynthesisConfig:
    kw = {}
    if "delta" in section:
        kw["delta"] = float(section["delta"])
    if "N" in section:
        kw["N"] = int(section["N"])
    if "gamma_grid" in section:
        kw["gamma_grid"] = tuple(float(g) for g in section["gamma_grid"])
    if "rho_grid" in section:
        kw["rho_grid"] = tuple(float(r) for r in section["rho_grid"])
    if "k0_poles" in section:
        kw["K0_poles"] = tuple(
            complex(p[0], p[1]) if isinstance(p, (list, tuple)) else float(p)
            for p in section["k0_poles"])
    if section.get("k0") is not None:
        kw["K0"] = tuple(float(v) for v in section["k0"])
    if "eps_margin" in section:
        kw["eps_margin"] = float(section["eps_margin"])
    if "policy" in section:
        kw["policy"] = section["policy"]
    if overrides.delta is not None:
        kw["delta"] = overrides.delta
    if overrides.gamma_grid is not None:
        kw["gamma_grid"] = tuple(overrides.gamma_grid)
    if getattr(overrides, "rho_grid", None) is not None:
        kw["rho_grid"] = tuple(overrides.rho_grid)
    try:
        return synthesis.SynthesisConfig(**kw)
    except ValueError as exc:
        raise ConfigError(f"synthesis section: {exc}")


def _sim_from_config(section: dict, overrides) -> sim.SimConfig:
    kw = dict(M_modes=int(section.get("modes", 60)),
              dt=float(section.get("dt", 1e-4)),
              t_end=float(section.get("t_end", 5.0)),
              record_stride=int(section.get("record_stride", 25)))
    if overrides.modes is not None:
        kw["M_modes"] = overrides.modes
    if overrides.dt is not None:
        kw["dt"] = overrides.dt
    if overrides.t_end is not None:
        kw["t_end"] = overrides.t_end
    try:
        return sim.SimConfig(**kw)
    except ValueError as exc:
        raise ConfigError(f"sim section: {exc}")


def _setup(config, args):
    plant = _plant_from_config(config.get("plant", {}))
    if getattr(args, "l1", None) is not None:
        plant = plant.with_l1(args.l1)
    scfg = _synth_from_config(config.get("synthesis", {}), args)
    n_modes = max(int(config.get("sim", {}).get("modes", 60)),
                  getattr(args, "modes", None) or 0, 4 * scfg.N, scfg.N + 1)
    basis = eigenpairs(plant.bc, plant.length, n_modes)
    grid = make_grid(plant.length, basis.n_max, plant.shapes.breakpoints)
    return plant, scfg, basis, grid


def _outdir(args) -> Path:
    out = Path(args.out or "out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _save_gain(gain: FeedbackGain, cert, path: Path) -> None:
    payload = {
        "N": gain.N, "gamma": gain.gamma,
        "K0": gain.K0.ravel().tolist(),
        "U_map": gain.U_map.tolist(),
        "rho": cert.rho, "delta": cert.delta, "ell1": cert.ell1,
        "P": cert.P.tolist(), "alpha0": cert.alpha0, "alpha1": cert.alpha1,
    }
    path.write_text(json.dumps(payload, indent=1))


def _load_gain(path: str) -> tuple[FeedbackGain, dict]:
    data = json.loads(Path(path).read_text())
    N = int(data["N"])
    U = np.asarray(data["U_map"], dtype=float)
    if U.shape != (N, 3 * N):
        raise ConfigError("gain file U_map has wrong shape")
    gain = FeedbackGain(N, float(data["gamma"]),
                        np.asarray(data["K0"], float).reshape(1, 3), U,
                        np.zeros((N, N)), np.zeros((N, 3 * N)),
                        np.zeros((N, 3 * N)), np.zeros((3 * N, 3 * N)))
    return gain, data


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_validate(args) -> int:
    config = _load_config(args.config)
    plant, scfg, basis, grid = _setup(config, args)
    n_hi = min(basis.n_max - 1, max(scfg.N + 5, 10))
    report = model.validate(plant, basis, range(2, n_hi + 1))
    lines = [
        f"assumption-1 (chain couplings nonzero) : {'PASS' if report.a1_ok else 'FAIL'}",
        f"assumption-2 (f1 Lipschitz spot check)  : {'PASS' if report.a2_ok else 'FAIL'}",
        f"assumption-3 (actuator invertibility)   : {'PASS' if report.a3_invertible else 'FAIL'}",
        f"fitted eta = {report.eta:.6g}, beta = {report.beta:.6g}",
        "samples (N, tail_mass * |Binv|^2):",
    ]
    for N, v in report.a3_bound_samples:
        lines.append(f"  {N:4d}  {v:.12e}")
    text = "\n".join(lines) + "\n"
    print(text, end="")
    (_outdir(args) / "assumptions.txt").write_text(text)
    return EXIT_OK if report.all_ok else EXIT_INFEASIBLE


def cmd_synth(args) -> int:
    config = _load_config(args.config)
    plant, scfg, basis, grid = _setup(config, args)
    if scfg.N != plant.shapes.N:
        shapes = plant.shapes.family(scfg.N, basis)
        plant = model.PlantSpec(plant.length, plant.D, plant.Q0, plant.Q1,
                                plant.bc, plant.nonlinearity, shapes)
        grid = make_grid(plant.length, basis.n_max, shapes.breakpoints)
    acts = actuator_matrix(plant.shapes, basis, grid)
    cert, log = synthesis.grid_search(plant, basis, acts, scfg)
    out = _outdir(args)
    lines = [f"grid search: {len(log.records)} cells"]
    for r in log.records:
        lines.append(f"  gamma={r['gamma']:<8g} rho={r['rho']:<12g} "
                     f"{r['status']:<10s} margin={r['min_margin']:.3e}")
    print("\n".join(lines))
    if cert is None or not cert.feasible:
        status = UNDECIDED if log.any_undecided() else INFEASIBLE
        print(f"result: {status}")
        (out / "certificate.txt").write_text(
            f"result: {status}\nbest margin {log.best_margin():.6e}\n")
        return EXIT_UNDECIDED if status == UNDECIDED else EXIT_INFEASIBLE
    report = synthesis.certificate_report(cert)
    print(report, end="")
    (out / "certificate.txt").write_text(report)
    K0 = cert.K0
    pack = transform.build(plant, basis, acts, K0, scfg.N, cert.gamma)
    gain = build_gain(acts, pack, K0)
    _save_gain(gain, cert, out / "gain.json")
    print(f"wrote {out / 'certificate.txt'} and {out / 'gain.json'}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    config = _load_config(args.config)
    plant, scfg, basis, grid = _setup(config, args)
    simcfg = _sim_from_config(config.get("sim", {}), args)
    seed = args.seed if args.seed is not None else int(config.get("seed", 0))

    gain = None
    meta = {}
    if not args.open_loop:
        if not args.gain:
            raise ConfigError("closed-loop simulation needs --gain FILE "
                              "(or pass --open-loop)")
        gain, meta = _load_gain(args.gain)
    z0 = sim.smooth_random_state(simcfg.M_modes, seed)
    out = _outdir(args)
    try:
        traj = sim.simulate(plant, basis, gain, z0, simcfg)
    except SimulationBlowup as exc:
        print(f"FAILED run: {exc}")
        traj = exc.trajectory
        sim.trajectory_to_csv(traj, out / "trajectory.csv")
        return 1
    rate, m_fit = sim.fit_decay(
        traj, (min(1.0, 0.2 * simcfg.t_end), 0.8 * simcfg.t_end))
    sim.trajectory_to_csv(traj, out / "trajectory.csv")
    if args.snapshots:
        req = [float(t) for t in args.snapshots.split(",")]
        sim.snapshot_to_csv(traj, basis, grid, req, out / "snapshots.csv")
    delta = scfg.delta
    verdict = "PASS" if rate >= 0.95 * delta else "FAIL"
    summary = (f"fitted rate = {rate:.6g}, M_fit = {m_fit:.6g}, "
               f"{verdict} vs delta = {delta:g}\n")
    print(summary, end="")
    (out / "summary.txt").write_text(summary)
    return EXIT_OK


def cmd_reproduce(args) -> int:
    config = _load_config(args.config)
    explore = args.l1 is not None and args.l1 != 15.0
    stage = "validate"
    try:
        rc = cmd_validate(args)
        if rc != EXIT_OK:
            print(f"stage {stage} failed")
            return rc
        stage = "synth"
        rc = cmd_synth(args)
        if rc != EXIT_OK:
            if explore:
                print(f"exploration: synthesis outcome recorded (exit {rc})")
                return EXIT_OK
            print(f"stage {stage} failed")
            return rc
        stage = "simulate"
        args.gain = str(_outdir(args) / "gain.json")
        args.open_loop = False
        args.snapshots = getattr(args, "snapshots", None)
        rc = cmd_simulate(args)
        if rc != EXIT_OK:
            print(f"stage {stage} failed")
            return rc
    except (ConfigError, ParastabError) as exc:
        print(f"stage {stage} failed: {exc}")
        return EXIT_INPUT if isinstance(exc, ConfigError) else 1
    print("reproduction complete")
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="parastab",
        description="feedback synthesis and simulation for coupled "
                    "reaction-diffusion systems")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, sim_flags=False):
        p.add_argument("--config", default=None, help="JSON config path")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--l1", type=float, default=None,
                       help="override the f1 Lipschitz constant")
        p.add_argument("--gamma-grid", type=lambda s: [float(v) for v in s.split(",")],
                       default=None, dest="gamma_grid")
        p.add_argument("--rho-grid", type=lambda s: [float(v) for v in s.split(",")],
                       default=None, dest="rho_grid")
        p.add_argument("--delta", type=float, default=None)
        if sim_flags:
            p.add_argument("--modes", type=int, default=None)
            p.add_argument("--dt", type=float, default=None)
            p.add_argument("--t-end", type=float, default=None, dest="t_end")
            p.add_argument("--snapshots", default=None,
                           help="comma-separated times for field snapshots")
        else:
            p.set_defaults(modes=None, dt=None, t_end=None, snapshots=None)

    p_val = sub.add_parser("validate", help="check the structural assumptions")
    common(p_val)
    p_val.set_defaults(func=cmd_validate)

    p_syn = sub.add_parser("synth", help="search for a stability certificate")
    common(p_syn)
    p_syn.set_defaults(func=cmd_synth)

    p_sim = sub.add_parser("simulate", help="closed- or open-loop simulation")
    common(p_sim, sim_flags=True)
    p_sim.add_argument("--gain", default=None, help="gain file from synth")
    p_sim.add_argument("--open-loop", action="store_true")
    p_sim.set_defaults(func=cmd_simulate)

    p_rep = sub.add_parser("reproduce",
                           help="validate + synth + simulate on the reference preset")
    common(p_rep, sim_flags=True)
    p_rep.set_defaults(func=cmd_reproduce)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ParastabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
