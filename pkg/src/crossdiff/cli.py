"""Command-line entry point.

Verbs: validate, simulate-ibm, solve-pde, flow, study-large-k, study-dirac,
study-flow, study-uniqueness, report.  Exit codes: 0 success, 1 usage error,
2 numerical failure (CFL violation, blow-up), 3 failed check in study or
validate mode.
"""

from __future__ import annotations

import argparse
import glob
import json
import os
import sys
import time

import numpy as np

from . import ibm, io, pde, studies
from .config import (ConfigError, build_initial, build_model, grid_box,
                     load_config, probe_spec, sim_params, solver_params)
from .flow import (FlowError, FrozenCoefficients, compose_inverse_forward,
                   inverse_flow)
from .ibm import SimulationError
from .initial import project_to_grid
from .model import validate as validate_model
from .pde import CFLError

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_CHECK = 0, 1, 2, 3


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="crossdiff",
        description="Particle / PDE / flow workbench for kernel-interacting "
                    "population models")
    sub = p.add_subparsers(dest="verb", required=True)
    verbs = ["validate", "simulate-ibm", "solve-pde", "flow",
             "study-large-k", "study-dirac", "study-flow",
             "study-uniqueness", "report"]
    for v in verbs:
        q = sub.add_parser(v)
        q.add_argument("--config", required=(v != "report"),
                       help="experiment config (YAML)")
        q.add_argument("--out", default="out", help="output directory")
        q.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        q.add_argument("--workers", type=int, default=1)
        q.add_argument("--resume", action="store_true",
                       help="reuse cached sub-run results")
    return p


def _load(args):
    cfg = load_config(args.config)
    seed = args.seed if args.seed is not None else int(cfg["seed"])
    out = args.out or (cfg.get("outputs") or {}).get("directory", "out")
    os.makedirs(out, exist_ok=True)
    return cfg, seed, out


# ---------------------------------------------------------------------
# verbs

def _cmd_validate(args) -> int:
    cfg, seed, out = _load(args)
    model = build_model(cfg)
    report = validate_model(model, probe_spec(cfg, seed))
    print(report)
    return EXIT_OK if report.passed else EXIT_CHECK


def _cmd_simulate_ibm(args) -> int:
    cfg, seed, out = _load(args)
    started = time.time()
    model = build_model(cfg)
    init = build_initial(cfg)
    K = int((cfg.get("ibm") or {}).get("K", [1000])[0])
    params = sim_params(cfg, K, seed)
    traj = ibm.simulate(model, init, params)
    csv_path = os.path.join(out, "particles.csv")
    io.write_particles_csv(csv_path, traj)
    man_path = os.path.join(out, "ibm_manifest.json")
    io.write_manifest(man_path, config_path=args.config, seed=seed,
                      command="simulate-ibm", started=started,
                      summary={"K": K, "births": traj.births,
                               "deaths": traj.deaths,
                               "final_counts": [int(c) for c in
                                                traj.snapshots[-1][1].counts()],
                               "rng": traj.rng_descriptor},
                      passed=True, files=[csv_path])
    print(f"wrote {csv_path}")
    return EXIT_OK


def _cmd_solve_pde(args) -> int:
    cfg, seed, out = _load(args)
    started = time.time()
    model = build_model(cfg)
    init = build_initial(cfg)
    lo, hi, shape = grid_box(cfg)
    u0 = project_to_grid(init, lo, hi, shape)
    sol = pde.solve(model, u0, solver_params(cfg))
    bound = pde.mass_bound_check(sol, model)
    files = []
    for snap in sol.snapshots:
        tag = f"{snap.time:.6g}".replace(".", "p")
        csv_path = os.path.join(out, f"field_t{tag}.csv")
        dump_path = os.path.join(out, f"field_t{tag}.bin")
        io.write_field_csv(csv_path, snap)
        io.write_field_dump(dump_path, snap)
        files += [csv_path, dump_path]
    man_path = os.path.join(out, "pde_manifest.json")
    io.write_manifest(man_path, config_path=args.config, seed=seed,
                      command="solve-pde", started=started,
                      summary={"masses": sol.masses.tolist(),
                               "clamp_mass": sol.clamp_mass,
                               "max_boundary_fraction":
                                   sol.max_boundary_fraction,
                               "leak_flag": sol.leak_flag,
                               "mass_bound_ok": bound.passed},
                      passed=bound.passed and not sol.leak_flag, files=files)
    for t, masses in zip(sol.times, sol.masses):
        print(f"t={t:g} masses={np.round(masses, 6).tolist()}")
    if sol.leak_flag:
        print("warning: boundary mass fraction exceeded the leak budget")
    return EXIT_OK


def _cmd_flow(args) -> int:
    cfg, seed, out = _load(args)
    started = time.time()
    model = build_model(cfg)
    init = build_initial(cfg)
    lo, hi, shape = grid_box(cfg)
    u0 = project_to_grid(init, lo, hi, shape)
    fcfg = cfg.get("flow") or {}
    t = float(fcfg.get("t", cfg["pde"]["t_end"]))
    dt = float(fcfg.get("dt", 1e-3))
    n_paths = int(fcfg.get("n_paths", 100))
    i = int(fcfg.get("species", 0))

    sp = solver_params(cfg)
    t = round(t / sp.dt) * sp.dt
    sp.t_end = t
    snaps = np.round(np.linspace(0.0, t, max(2, int(np.ceil(t / (10 * dt))) + 1))
                     / sp.dt) * sp.dt
    sp.snapshot_times = tuple(sorted(set(float(v) for v in snaps)))
    sol = pde.solve(model, u0, sp)
    coeffs = FrozenCoefficients.from_pde(model, sol)

    probes = fcfg.get("probes")
    if probes is None:
        axis = sol.snapshots[-1].axis_centers(0)
        probes = np.quantile(axis, [0.35, 0.5, 0.65])[:, None]
    y = np.atleast_2d(np.asarray(probes, dtype=float)).reshape(-1, model.d)
    yy = np.repeat(y, n_paths, axis=0)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed,
                                                       spawn_key=(71,)))
    inv = inverse_flow(coeffs, i, t, yy, dt, rng)
    det_gap = float(np.max(np.abs(inv.det_matrix[-1] - inv.det_sde[-1])
                           / np.abs(inv.det_matrix[-1])))
    rng2 = np.random.default_rng(np.random.SeedSequence(entropy=seed,
                                                        spawn_key=(72,)))
    comp_err = float(np.mean(compose_inverse_forward(coeffs, i, t, yy, dt,
                                                     rng2)))
    rows = [(float(p[0]) if model.d == 1 else str(list(p)),
             float(np.mean(inv.det_matrix[-1].reshape(len(y), n_paths)[j])),
             float(np.mean(inv.det_sde[-1].reshape(len(y), n_paths)[j])))
            for j, p in enumerate(y)]
    csv_path = os.path.join(out, "flow_diagnostics.csv")
    io.write_rows_csv(csv_path, ["y", "mean_det_matrix", "mean_det_sde"], rows)
    io.write_manifest(os.path.join(out, "flow_manifest.json"),
                      config_path=args.config, seed=seed, command="flow",
                      started=started,
                      summary={"det_relative_gap": det_gap,
                               "composition_error": comp_err,
                               "min_det": float(inv.det_matrix.min())},
                      passed=det_gap <= 0.01, files=[csv_path])
    print(f"det gap {det_gap:.3e}, composition error {comp_err:.3e}")
    return EXIT_OK if det_gap <= 0.01 else EXIT_CHECK


def _cmd_study(name):
    def run(args) -> int:
        cfg, seed, out = _load(args)
        started = time.time()
        report = studies.STUDIES[name](cfg, out, seed,
                                       workers=max(1, args.workers),
                                       resume=args.resume)
        io.write_manifest(os.path.join(out, f"study_{name}_manifest.json"),
                          config_path=args.config, seed=seed,
                          command=f"study-{name}", started=started,
                          summary=report.summary, passed=report.passed,
                          files=report.files)
        print(report)
        return EXIT_OK if report.passed else EXIT_CHECK
    return run


def _cmd_report(args) -> int:
    out = args.out or "out"
    manifests = sorted(glob.glob(os.path.join(out, "*manifest*.json")))
    if not manifests:
        print(f"no manifests under {out}", file=sys.stderr)
        return EXIT_USAGE
    all_ok = True
    for path in manifests:
        with open(path) as f:
            m = json.load(f)
        status = {True: "PASS", False: "FAIL", None: "-"}[m.get("passed")]
        all_ok = all_ok and m.get("passed") is not False
        print(f"{status:4s} {m.get('command', '?'):18s} {os.path.basename(path)}")
        for k, v in (m.get("summary") or {}).items():
            print(f"       {k}: {v}")
    return EXIT_OK if all_ok else EXIT_CHECK


_COMMANDS = {
    "validate": _cmd_validate,
    "simulate-ibm": _cmd_simulate_ibm,
    "solve-pde": _cmd_solve_pde,
    "flow": _cmd_flow,
    "study-large-k": _cmd_study("large-k"),
    "study-dirac": _cmd_study("dirac"),
    "study-flow": _cmd_study("flow"),
    "study-uniqueness": _cmd_study("uniqueness"),
    "report": _cmd_report,
}


def main(argv=None) -> int:
    try:
        args = _parser().parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else EXIT_OK
    try:
        return _COMMANDS[args.verb](args)
    except (ConfigError, FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (CFLError, FlowError, SimulationError, FloatingPointError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
