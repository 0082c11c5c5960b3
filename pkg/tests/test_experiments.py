import numpy as np
import pytest

from sdecgmca import experiments as ex
from sdecgmca.simulate import SceneConfig
from sdecgmca.solver import Strategy


def square(x):
    return x * x


def test_c_grid():
    assert len(ex.C_GRID) == 17
    assert np.isclose(ex.C_GRID[0], 1e-6) and np.isclose(ex.C_GRID[-1], 1e2)


def test_worker_count_env(monkeypatch):
    monkeypatch.setenv("SDEC_THREADS", "2")
    assert ex.worker_count(10) == 2
    assert ex.worker_count(1) == 1
    monkeypatch.setenv("SDEC_THREADS", "1")
    assert ex.map_seeds(square, [3, 1, 2]) == [9, 1, 4]


def test_map_seeds_order_with_pool():
    assert ex.map_seeds(square, [5, 4, 3, 2], workers=2) == [25, 16, 9, 4]


def test_scene_config_for_axes():
    base = SceneConfig(lmax=32)
    assert ex.scene_config_for(base, "snr", 0.0).snr_db == 0.0
    assert ex.scene_config_for(base, "n_channels", 16.0).n_channels == 16
    assert ex.scene_config_for(base, "cond", 5).cond_target == 5.0
    assert ex.scene_config_for(base, "min_resolution", 8).beam_lmin == 8.0
    assert ex.scene_config_for(base, seed=7).seed == 7
    with pytest.raises(KeyError):
        ex.scene_config_for(base, "bogus", 1)
    for axis, values in ex.default_axes(64).items():
        for v in values:
            ex.scene_config_for(SceneConfig(lmax=64), axis, v)


def test_best_c():
    table = np.array([[[1.0, 3.0, 2.0]], [[1.0, 0.0, 3.0]]])
    c, v = ex.best_c(table, np.array([0.1, 1.0, 10.0]))
    assert c[0] == 10.0 and v[0] == 2.5


def test_nonblind_snr_oracle_beats_tiny_c():
    sc = ex.simulate(SceneConfig(lmax=32, seed=1))
    vals = ex.nonblind_nmse(sc, Strategy.SNR, [1e-6, 1.0])
    assert vals[1] > vals[0]


def test_bench_strategies_small():
    base = SceneConfig(lmax=16)
    rows = ex.bench_strategies(base, [1, 2], axes={"snr": (10.0,), "cond": (2.0,)}, workers=1)
    assert len(rows) == 8
    assert set(rows[0]) == set(ex.BENCH_COLUMNS)
    for r in rows:
        if r["strategy"] == "snr":
            assert r["degradation_db"] == 0.0


def test_grid_and_comparison_small():
    base = SceneConfig(lmax=16)
    solver = ex.default_experiment_solver(max_iters=25)
    cells, runs = ex.run_grid(base, solver, [1, 2], 1.0, 1.0,
                              c_wu_factors=((10.0, 1.0), (100.0, 10.0)),
                              c_ref_factors=(0.1, 1.0, 10.0), workers=1)
    assert len(cells) == 6 and len(runs) == 12
    assert all(c["n_seeds"] == 2 for c in cells)
    mat = ex.grid_matrix(cells)
    assert mat.shape == (3, 2) and np.all(np.isfinite(mat))
    rows = ex.run_comparison(base, solver, [1, 2], (10.0, 1.0), 1.0, 0.1, workers=1)
    assert [r["strategy"] for r in rows] == ["sdecgmca", "eig_max", "gmca"] * 2
    assert set(rows[0]) == set(ex.METRICS_COLUMNS)
    means = ex.summarize(rows, "nmse_best_db")
    assert np.isnan(means["gmca"]) and np.isfinite(means["sdecgmca"])


def test_results_independent_of_workers():
    base = SceneConfig(lmax=16)
    solver = ex.default_experiment_solver(max_iters=10)
    a = ex.run_comparison(base, solver, [1, 2], (10.0, 1.0), 1.0, 0.1, workers=1)
    b = ex.run_comparison(base, solver, [1, 2], (10.0, 1.0), 1.0, 0.1, workers=2)
    def strip(rows):
        return [{k: repr(v) for k, v in r.items() if k != "wallclock_s"} for r in rows]

    assert strip(a) == strip(b)
