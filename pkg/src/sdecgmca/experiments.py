"""
Monte-Carlo experiments on simulated scenes.

* ``bench_strategies``: non-blind source estimation (A fixed at the truth,
  no thresholding) with every regularization strategy at its best
  hyperparameter, along several scene parameter axes;
* ``run_grid``: full solver over a (c_wu, c_ref) grid given as multiples of
  the non-blind optima;
* ``run_comparison``: the solver against its strategy-#2 variant and
  against plain separation of channels degraded to the worst resolution.

Seeds are dispatched to a process pool whose size is capped by the
``SDEC_THREADS`` environment variable; results are merged in seed order so
outputs do not depend on the number of workers.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from functools import partial
import logging
import os

import numpy as np

from .metrics import align, ca_db, degrade_to_worst, nmse_db
from .simulate import (SceneConfig, best_channel, normalize_to_best_channel, simulate,
                       worst_channel)
from .solver import (RegStrategy, SolverConfig, Strategy, gmca_baseline, solve,
                     update_s_tikhonov)
from .sphere import convolve, power_spectrum

log = logging.getLogger(__name__)

C_GRID = 10.0 ** np.arange(-6.0, 2.01, 0.5)

C_WU_FACTORS = ((10 ** 0.5, 10 ** -0.5), (10 ** 1.0, 10 ** 0.0), (10 ** 1.5, 10 ** 0.5))
C_REF_FACTORS = tuple(10 ** np.array([-1.0, -0.5, 0.0, 0.5, 1.0]))

BENCH_COLUMNS = ("axis", "axis_value", "strategy", "mean_nmse_db", "degradation_db")
GRID_COLUMNS = ("c_wu_start_factor", "c_wu_end_factor", "c_ref_factor", "c_wu_start",
                "c_wu_end", "c_ref", "mean_nmse_db", "mean_ca_db", "n_seeds")
METRICS_COLUMNS = ("seed", "strategy", "c_wu", "c_ref", "nmse_best_db", "nmse_worse_db",
                   "ca_db", "iters", "wallclock_s")

# Solver settings used by the experiments. At desk scale the MAD of the
# coarse wavelet scales is dominated by the (dense) sources themselves, so
# k = 3 removes most of the signal; k = 1 keeps the threshold near the noise.
EXPERIMENT_SOLVER = dict(k_mad=1.0, max_iters=150)


def default_axes(lmax):
    """Parameter values swept by ``bench_strategies`` (desk-scale analogues
    of SNR -20..40 dB, 4..25 channels, cond 1.5..14, minimum resolution
    from a few degrees up to close to lmax)."""
    return {
        "snr": (-10.0, 0.0, 10.0, 20.0, 40.0),
        "n_channels": (4, 8, 16, 25),
        "cond": (1.5, 2.0, 5.0, 14.0),
        "min_resolution": tuple(float(f * lmax) for f in (1 / 32, 1 / 8, 1 / 2, 7 / 8)),
    }


_AXIS_FIELD = {"snr": "snr_db", "n_channels": "n_channels", "cond": "cond_target",
               "min_resolution": "beam_lmin"}


def scene_config_for(base, axis=None, value=None, seed=None):
    changes = {}
    if axis is not None:
        if axis not in _AXIS_FIELD:
            raise KeyError(f"unknown axis {axis!r}")
        field = _AXIS_FIELD[axis]
        changes[field] = int(value) if field == "n_channels" else float(value)
    if seed is not None:
        changes["seed"] = int(seed)
    return replace(base, **changes)


def worker_count(n_tasks):
    env = os.environ.get("SDEC_THREADS")
    cap = int(env) if env else (os.cpu_count() or 1)
    return max(1, min(cap, n_tasks))


def map_seeds(fn, seeds, workers=None):
    """``[fn(seed) for seed in seeds]``, possibly in worker processes."""
    seeds = list(seeds)
    workers = worker_count(len(seeds)) if workers is None else workers
    if workers <= 1:
        return [fn(s) for s in seeds]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, seeds))


# --- non-blind estimation ---------------------------------------------------

def oracle_spectra(scene):
    """Power spectra of the true sources seen at the best resolution."""
    hb = scene.beams[best_channel(scene.beams)]
    return power_spectrum(convolve(scene.sources, hb))


def nonblind_nmse(scene, strategy, c_values=C_GRID):
    """NMSE (dB) of the regularized estimate with A = A* for every c."""
    strategy = Strategy(strategy)
    nb = normalize_to_best_channel(scene.beams)
    hb = scene.beams[best_channel(scene.beams)]
    spectra = oracle_spectra(scene) if strategy is Strategy.SNR else None
    out = []
    for c in c_values:
        reg = RegStrategy(strategy, float(c), spectra,
                          scene.noise_sigma ** 2 if spectra is not None else None)
        s = update_s_tikhonov(scene.channels, scene.mixing, nb, reg)
        out.append(nmse_db(s, scene.sources, hb))
    return np.array(out)


def _nonblind_seed(seed, base, strategies, c_values):
    scene = simulate(scene_config_for(base, seed=seed))
    return np.stack([nonblind_nmse(scene, k, c_values) for k in strategies])


def nonblind_table(base, seeds, strategies=tuple(Strategy), c_values=C_GRID, workers=None):
    """NMSE array of shape (n_seeds, n_strategies, n_c)."""
    fn = partial(_nonblind_seed, base=base, strategies=tuple(strategies),
                 c_values=np.asarray(c_values))
    return np.stack(map_seeds(fn, seeds, workers))


def best_c(table, c_values=C_GRID):
    """Hyperparameter maximizing the seed-averaged NMSE, per strategy.

    Returns ``(c_opt, mean_nmse_at_opt)``, each of length n_strategies.
    """
    mean = table.mean(axis=0)
    idx = np.argmax(mean, axis=-1)
    return np.asarray(c_values)[idx], mean[np.arange(mean.shape[0]), idx]


def bench_point(base, seeds, c_values=C_GRID, workers=None):
    """Mean NMSE at the optimal c for every strategy, at one scene setting.

    Returns a dict strategy -> (c_opt, mean_nmse_db).
    """
    strategies = tuple(Strategy)
    table = nonblind_table(base, seeds, strategies, c_values, workers)
    c_opt, nmse = best_c(table, c_values)
    return {k: (float(c), float(v)) for k, c, v in zip(strategies, c_opt, nmse)}


def bench_strategies(base, seeds, axes=None, c_values=C_GRID, workers=None):
    """Rows (dicts with ``BENCH_COLUMNS``) of the strategy benchmark."""
    axes = default_axes(base.lmax) if axes is None else axes
    rows = []
    for axis, values in axes.items():
        for value in values:
            cfg = scene_config_for(base, axis, value)
            res = bench_point(cfg, seeds, c_values, workers)
            ref = res[Strategy.SNR][1]
            for k in Strategy:
                rows.append({"axis": axis, "axis_value": value, "strategy": k.value,
                             "mean_nmse_db": res[k][1], "degradation_db": res[k][1] - ref})
            log.info("bench %s=%s done", axis, value)
    return rows


def nonblind_optima(base, seeds, c_values=C_GRID, workers=None):
    """Mean-optimal non-blind c for strategies #3, #4 and #2 (used to
    express the blind hyperparameters as multiples of them)."""
    strategies = (Strategy.EIG_FLOOR, Strategy.SNR, Strategy.EIG_MAX)
    table = nonblind_table(base, seeds, strategies, c_values, workers)
    c_opt, _ = best_c(table, c_values)
    return dict(zip(strategies, (float(c) for c in c_opt)))


# --- blind runs --------------------------------------------------------------

def metrics_row(seed, label, c_wu, c_ref, state, scene, s_worse=None):
    al = align(state.a, scene.mixing)
    hb = scene.beams[best_channel(scene.beams)]
    hw = scene.beams[worst_channel(scene.beams)]
    if s_worse is None:
        best = nmse_db(state.s, scene.sources, hb, al)
        worse = nmse_db(degrade_to_worst(state.s, scene.beams), scene.sources, hw, al)
    else:
        best = float("nan")
        worse = nmse_db(s_worse, scene.sources, hw, al)
    return {"seed": int(seed), "strategy": label, "c_wu": c_wu, "c_ref": float(c_ref),
            "nmse_best_db": best, "nmse_worse_db": worse, "ca_db": ca_db(state.a, scene.mixing),
            "iters": state.iter, "wallclock_s": state.wallclock_s}


def _grid_seed(seed, base, solver, c_wu_pairs, c_refs):
    scene = simulate(scene_config_for(base, seed=seed))
    nb = normalize_to_best_channel(scene.beams)
    rows = []
    for c_start, c_end in c_wu_pairs:
        cfg = replace(solver, c_wu_start=c_start, c_wu_end=c_end)
        warm = solve(scene.channels, nb, cfg, scene.noise_sigma, warmup_only=True)
        for c_ref in c_refs:
            cfg_ref = replace(cfg, c_ref=c_ref)
            st = solve(scene.channels, nb, cfg_ref, scene.noise_sigma, resume=warm)
            rows.append(metrics_row(seed, "sdecgmca", f"{c_start:.6g}->{c_end:.6g}", c_ref,
                                     st, scene))
    return rows


def run_grid(base, solver, seeds, c_wu_opt, c_ref_opt, c_wu_factors=C_WU_FACTORS,
             c_ref_factors=C_REF_FACTORS, workers=None):
    """Solver over the (c_wu, c_ref) grid.

    Returns ``(cells, runs)``: one row per cell (``GRID_COLUMNS``, means
    over seeds) and one metrics row per seed and cell (``METRICS_COLUMNS``).
    """
    pairs = [(f0 * c_wu_opt, f1 * c_wu_opt) for f0, f1 in c_wu_factors]
    refs = [f * c_ref_opt for f in c_ref_factors]
    fn = partial(_grid_seed, base=base, solver=solver, c_wu_pairs=pairs, c_refs=refs)
    per_seed = map_seeds(fn, seeds, workers)
    runs = [row for rows in per_seed for row in rows]
    cells = []
    ncell = len(pairs) * len(refs)
    for i, ((f0, f1), (c0, c1)) in enumerate(zip(c_wu_factors, pairs)):
        for j, (fr, cr) in enumerate(zip(c_ref_factors, refs)):
            k = i * len(refs) + j
            sel = [rows[k] for rows in per_seed]
            assert len(per_seed[0]) == ncell
            cells.append({
                "c_wu_start_factor": f0, "c_wu_end_factor": f1, "c_ref_factor": fr,
                "c_wu_start": c0, "c_wu_end": c1, "c_ref": cr,
                "mean_nmse_db": float(np.mean([r["nmse_best_db"] for r in sel])),
                "mean_ca_db": float(np.mean([r["ca_db"] for r in sel])),
                "n_seeds": len(sel),
            })
    return cells, runs


def grid_matrix(cells, key="mean_nmse_db"):
    """Cells as a (n_c_ref, n_c_wu) array, rows ordered by c_ref factor and
    columns by c_wu start factor."""
    wu = sorted({c["c_wu_start_factor"] for c in cells})
    ref = sorted({c["c_ref_factor"] for c in cells})
    out = np.full((len(ref), len(wu)), np.nan)
    for c in cells:
        out[ref.index(c["c_ref_factor"]), wu.index(c["c_wu_start_factor"])] = c[key]
    return out


def degrade_channels(channels, beams):
    """Bring every channel to the worst channel's resolution."""
    hw = beams[worst_channel(beams)]
    return convolve(channels, hw / beams)


def _comparison_seed(seed, base, solver, c_wu, c_ref, c_eig_max):
    scene = simulate(scene_config_for(base, seed=seed))
    nb = normalize_to_best_channel(scene.beams)
    c_start, c_end = c_wu
    wu_label = f"{c_start:.6g}->{c_end:.6g}"
    rows = []

    cfg = replace(solver, c_wu_start=c_start, c_wu_end=c_end, c_ref=c_ref)
    st = solve(scene.channels, nb, cfg, scene.noise_sigma)
    rows.append(metrics_row(seed, "sdecgmca", wu_label, c_ref, st, scene))

    cfg2 = replace(solver, c_wu_start=c_eig_max, c_wu_end=c_eig_max, c_ref=c_eig_max,
                   warmup_strategy=Strategy.EIG_MAX, refinement_strategy=Strategy.EIG_MAX)
    st = solve(scene.channels, nb, cfg2, scene.noise_sigma)
    rows.append(metrics_row(seed, "eig_max", f"{c_eig_max:.6g}", c_eig_max, st, scene))

    st = gmca_baseline(degrade_channels(scene.channels, scene.beams), cfg, scene.noise_sigma)
    rows.append(metrics_row(seed, "gmca", wu_label, c_ref, st, scene, s_worse=st.s))
    return rows


def run_comparison(base, solver, seeds, c_wu, c_ref, c_eig_max, workers=None):
    """Metrics rows for the solver, its strategy-#2 variant and the plain
    separation baseline, three rows per seed in that order."""
    fn = partial(_comparison_seed, base=base, solver=solver, c_wu=tuple(c_wu), c_ref=c_ref,
                 c_eig_max=c_eig_max)
    return [row for rows in map_seeds(fn, seeds, workers) for row in rows]


def summarize(runs, key):
    """Mean of ``key`` per strategy label (NaN entries ignored)."""
    out = {}
    for label in dict.fromkeys(r["strategy"] for r in runs):
        vals = np.array([r[key] for r in runs if r["strategy"] == label], dtype=float)
        out[label] = float(np.nanmean(vals)) if np.any(np.isfinite(vals)) else float("nan")
    return out


def default_experiment_solver(**overrides):
    return SolverConfig(**{**EXPERIMENT_SOLVER, **overrides})


def default_scene(**overrides):
    return SceneConfig(**overrides)
