"""The four canonical studies: large-K limit, Dirac-competition rate,
flow/Feynman-Kac consistency and uniqueness perturbation.

Each study writes deterministic CSV tables plus a JSON manifest and caches
finished sub-runs under out/cache keyed by a content hash, so interrupted
sweeps resume without recomputing (--resume).
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import ibm, io, pde
from .config import (build_initial, build_model, grid_box, mollified_C,
                     sim_params, solver_params)
from .flow import FrozenCoefficients, density_estimate, feynman_kac_functional
from .initial import project_to_grid
from .metrics import (DiscreteMeasure, bl_distance, bl_distance_fields,
                      rate_fit)


@dataclass
class StudyReport:
    name: str
    passed: bool
    summary: dict
    files: list = field(default_factory=list)

    def __str__(self):
        lines = [f"study {self.name}: {'PASS' if self.passed else 'FAIL'}"]
        for k, v in self.summary.items():
            lines.append(f"  {k}: {v}")
        return "\n".join(lines)


# ---------------------------------------------------------------------
# sub-run cache

def _cache_key(*parts) -> str:
    blob = json.dumps(parts, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()


def _cache_path(out_dir: str, key: str) -> str:
    return os.path.join(out_dir, "cache", key + ".json")


def _cache_load(out_dir: str, key: str, resume: bool):
    path = _cache_path(out_dir, key)
    if resume and os.path.exists(path):
        with open(path) as f:
            return json.load(f)
    return None


def _cache_store(out_dir: str, key: str, obj):
    io.write_text(_cache_path(out_dir, key), json.dumps(obj, sort_keys=True))


def _cfg_hash(cfg: dict) -> str:
    return _cache_key(cfg)


def _sub_seed(seed: int, *key: int) -> int:
    ss = np.random.SeedSequence(entropy=int(seed),
                                spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


# ---------------------------------------------------------------------
# large-K limit

def study_large_k(cfg: dict, out_dir: str, seed: int, workers: int = 1,
                  resume: bool = False) -> StudyReport:
    """IBM vs PDE bounded-Lipschitz distance across the configured K list."""
    icfg = cfg.get("ibm") or {}
    K_list = [int(k) for k in icfg.get("K") or []]
    if not K_list:
        raise ValueError("ibm.K list must be nonempty for study-large-k")
    replicas = int(icfg.get("replicas", 10))
    model = build_model(cfg)
    init = build_initial(cfg)
    lo, hi, shape = grid_box(cfg)

    snap_times = tuple(icfg.get("snapshot_times")
                       or [float(icfg["t_end"])])
    sp = solver_params(cfg)
    sp.snapshot_times = tuple(sorted(set(snap_times)))
    u0 = project_to_grid(init, lo, hi, shape)
    sol = pde.solve(model, u0, sp)
    grid_measures = {t: [DiscreteMeasure.from_grid(sol.at_time(t), i)
                         for i in range(model.M)] for t in sp.snapshot_times}
    h = _cfg_hash(cfg)

    def one(K, rep):
        key = _cache_key("large-k", h, seed, K, rep)
        hit = _cache_load(out_dir, key, resume)
        if hit is not None:
            return hit
        params = sim_params(cfg, K, _sub_seed(seed, K_list.index(K), rep))
        params.snapshot_times = sp.snapshot_times
        traj = ibm.simulate(model, init, params)
        dists = {}
        for t, state in traj.snapshots:
            if t not in grid_measures:
                continue
            total = 0.0
            for i in range(model.M):
                emp = DiscreteMeasure.from_empirical(state.measure(i))
                total += bl_distance(emp, grid_measures[t][i],
                                     seed=params.seed).value
            dists[f"{t:.12g}"] = total
        _cache_store(out_dir, key, dists)
        return dists

    jobs = [(K, rep) for K in K_list for rep in range(replicas)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda kr: one(*kr), jobs))
    else:
        results = [one(*kr) for kr in jobs]

    rows, means = [], {}
    for t in sp.snapshot_times:
        tkey = f"{t:.12g}"
        for K in K_list:
            vals = np.array([res[tkey] for (Kj, _), res in zip(jobs, results)
                             if Kj == K])
            m = float(vals.mean())
            band = float(1.96 * vals.std(ddof=1) / math.sqrt(len(vals))) \
                if len(vals) > 1 else 0.0
            rows.append((K, float(t), m, band))
            means[(K, t)] = m
    t_last = sp.snapshot_times[-1]
    final = [means[(K, t_last)] for K in K_list]
    if len(K_list) >= 3:
        fit = rate_fit(list(zip(K_list, final)), seed=seed)
        slope, band = fit.slope, fit.band
    else:    # slope is informational only; skip the fit on short sweeps
        slope, band = math.nan, (math.nan, math.nan)
    monotone = all(a > b for a, b in zip(final, final[1:]))

    csv_path = os.path.join(out_dir, "large_k.csv")
    io.write_rows_csv(csv_path, ["K", "t", "mean_bl_distance", "band95"], rows)
    return StudyReport(
        "large-k", monotone,
        {"slope": round(slope, 4),
         "slope_band": [round(v, 4) for v in band],
         "monotone_decreasing": monotone,
         "final_distances": {str(K): round(v, 6)
                             for K, v in zip(K_list, final)}},
        [csv_path])


# ---------------------------------------------------------------------
# Dirac-competition rate

def study_dirac(cfg: dict, out_dir: str, seed: int, workers: int = 1,
                resume: bool = False) -> StudyReport:
    """Mollified vs local competition: sup-time BL distance per epsilon.

    The epsilon list parametrizes a centered Gaussian competition kernel of
    variance epsilon (bandwidth sqrt(epsilon)); distances then scale
    linearly in epsilon for symmetric kernels.
    """
    pcfg = cfg.get("pde") or {}
    eps_list = [float(e) for e in pcfg.get("eps") or []]
    if not eps_list:
        raise ValueError("pde.eps list must be nonempty for study-dirac")
    init = build_initial(cfg)
    lo, hi, shape = grid_box(cfg)
    u0 = project_to_grid(init, lo, hi, shape)
    h = _cfg_hash(cfg)

    model_loc = build_model(cfg)
    sol_loc = pde.solve(model_loc, u0, solver_params(cfg, mode="local"))

    def one(eps):
        key = _cache_key("dirac", h, eps)
        hit = _cache_load(out_dir, key, resume)
        if hit is not None:
            return float(hit)
        C = mollified_C(cfg, math.sqrt(eps))
        model = build_model(cfg, C_kernels=C)
        sol = pde.solve(model, u0, solver_params(cfg, mode="kernel"))
        sup = 0.0
        for snap_loc, snap in zip(sol_loc.snapshots, sol.snapshots):
            sup = max(sup, bl_distance_fields(snap, snap_loc, seed=seed))
        _cache_store(out_dir, key, sup)
        return sup

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            sups = list(pool.map(one, eps_list))
    else:
        sups = [one(e) for e in eps_list]

    fit = rate_fit(list(zip(eps_list, sups)), seed=seed)
    ok = abs(fit.slope - 1.0) <= 0.3
    csv_path = os.path.join(out_dir, "dirac.csv")
    io.write_rows_csv(csv_path, ["eps", "sup_bl_distance"],
                      list(zip(eps_list, sups)))
    return StudyReport(
        "dirac", ok,
        {"slope": round(fit.slope, 4),
         "slope_band": [round(v, 4) for v in fit.band],
         "distances": {f"{e:g}": round(s, 6)
                       for e, s in zip(eps_list, sups)}},
        [csv_path])


# ---------------------------------------------------------------------
# flow / Feynman-Kac consistency

def study_flow(cfg: dict, out_dir: str, seed: int, workers: int = 1,
               resume: bool = False) -> StudyReport:
    """Density and functional estimates from the flow against the PDE."""
    fcfg = cfg.get("flow") or {}
    model = build_model(cfg)
    init = build_initial(cfg)
    lo, hi, shape = grid_box(cfg)
    u0 = project_to_grid(init, lo, hi, shape)

    t = float(fcfg.get("t", cfg["pde"]["t_end"]))
    dt = float(fcfg.get("dt", 1e-3))
    n_paths = int(fcfg.get("n_paths", 200))
    i = int(fcfg.get("species", 0))

    sp = solver_params(cfg)
    t = round(t / sp.dt) * sp.dt          # land t on the pde step grid
    sp.t_end = t
    n_snap = max(2, int(math.ceil(t / (10.0 * dt))) + 1)
    extra = np.round(np.linspace(0.0, t, n_snap) / sp.dt) * sp.dt
    sp.snapshot_times = tuple(sorted(set([float(v) for v in extra] + [t])))
    sol = pde.solve(model, u0, sp)
    coeffs = FrozenCoefficients.from_pde(model, sol)
    u_t = sol.at_time(t)

    probes = fcfg.get("probes")
    if probes is None:
        axis = u_t.axis_centers(0)
        probes = np.quantile(axis, [0.3, 0.4, 0.5, 0.6, 0.7])[:, None]
    y = np.atleast_2d(np.asarray(probes, dtype=float))
    if y.shape[1] != model.d:
        y = y.reshape(-1, model.d)

    rng = np.random.default_rng(np.random.SeedSequence(entropy=int(seed),
                                                       spawn_key=(41,)))
    vals, errs = density_estimate(coeffs, model, i, y, t, n_paths, dt, rng,
                                  density0=lambda X: sum(
                                      s.mass * s.density(X) for s in [init[i]]))
    pde_vals = u_t.interpolate(i, y)
    h_grid = float(np.max(u_t.spacing))
    budget = float(np.max(np.abs(pde_vals))) * (h_grid ** 2 + sp.dt) \
        + h_grid ** 2 + dt
    ok_pts = np.abs(vals - pde_vals) <= 3.0 * errs + budget

    fk = feynman_kac_functional(coeffs, model, lambda X: np.ones(X.shape[0]),
                                i, t, n_paths, dt, rng)
    mass_pde = float(u_t.mass(i))
    fk_ok = abs(fk.value - mass_pde) <= 3.0 * fk.stderr + budget

    rows = [(float(yv[0]) if model.d == 1 else str(list(yv)),
             float(v), float(e), float(p), bool(o))
            for yv, v, e, p, o in zip(y, vals, errs, pde_vals, ok_pts)]
    csv_path = os.path.join(out_dir, "flow_density.csv")
    io.write_rows_csv(csv_path,
                      ["y", "estimate", "stderr", "pde_value", "ok"], rows)
    passed = bool(np.all(ok_pts)) and fk_ok
    return StudyReport(
        "flow", passed,
        {"density_points_ok": int(np.sum(ok_pts)), "n_points": len(ok_pts),
         "fk_mass": round(fk.value, 6), "fk_stderr": round(fk.stderr, 6),
         "pde_mass": round(mass_pde, 6), "budget": round(budget, 6)},
        [csv_path])


# ---------------------------------------------------------------------
# uniqueness perturbation

def study_uniqueness(cfg: dict, out_dir: str, seed: int, workers: int = 1,
                     resume: bool = False) -> StudyReport:
    """Gronwall-type stability of the PDE under initial perturbations."""
    ucfg = cfg.get("uniqueness") or {}
    deltas = [float(d) for d in ucfg.get("deltas", (0.2, 0.1, 0.05))]
    axis = int(ucfg.get("shift_axis", 0))
    model = build_model(cfg)
    init = build_initial(cfg)
    lo, hi, shape = grid_box(cfg)
    sp = solver_params(cfg)
    u0 = project_to_grid(init, lo, hi, shape)
    sol0 = pde.solve(model, u0, sp)

    # identical data run twice: distances must vanish to solver tolerance
    sol_same = pde.solve(model, u0, sp)
    d_same = max(bl_distance_fields(a, b, seed=seed)
                 for a, b in zip(sol0.snapshots, sol_same.snapshots))

    rows, ratios = [], []
    for delta in deltas:
        shift = np.zeros(model.d)
        shift[axis] = delta
        u0p = project_to_grid([s.shifted(shift) for s in init], lo, hi, shape)
        solp = pde.solve(model, u0p, sp)
        d0 = bl_distance_fields(sol0.snapshots[0], solp.snapshots[0],
                                seed=seed)
        dist_t = [bl_distance_fields(a, b, seed=seed)
                  for a, b in zip(sol0.snapshots, solp.snapshots)]
        for snap, dval in zip(sol0.snapshots, dist_t):
            rows.append((delta, float(snap.time), float(dval)))
        ratios.append(max(dist_t) / d0)

    ratio_spread = max(ratios) / min(ratios)
    passed = d_same <= 1e-8 and ratio_spread <= 2.0
    csv_path = os.path.join(out_dir, "uniqueness.csv")
    io.write_rows_csv(csv_path, ["delta", "t", "bl_distance"], rows)
    return StudyReport(
        "uniqueness", passed,
        {"identical_run_distance": f"{d_same:.3g}",
         "stability_ratios": [round(rv, 4) for rv in ratios],
         "ratio_spread": round(ratio_spread, 4)},
        [csv_path])


STUDIES = {
    "large-k": study_large_k,
    "dirac": study_dirac,
    "flow": study_flow,
    "uniqueness": study_uniqueness,
}
