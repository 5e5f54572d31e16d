import json

import numpy as np
import pytest

from hamparareal import build_system, initial_state
from hamparareal.metrics import (ErrorSeries, ErrorSink, cache_dir, convergence_iteration,
                                 drift_slope, drifts, energy_error, fine_floor, invariant_error,
                                 reference_trajectory, trajectory_error)
from hamparareal.schemes import PararealConfig, run

HO = build_system("harmonic")
KEPLER = build_system("kepler")
U0 = initial_state("kepler", eccentricity=0.6)


@pytest.fixture(scope="module")
def kepler_run():
    cfg = PararealConfig(KEPLER, 4.0, 0.2, 1e-3, 0.05, 3)
    return cfg, run(cfg, U0)


def test_series_validation_and_window_max():
    s = ErrorSeries([0.0, 1.0, 2.0], [[1.0, 3.0, 2.0]], "energy")
    assert s.max(0) == 3.0 and s.max(0, t_min=1.5) == 2.0
    with pytest.raises(ValueError):
        ErrorSeries([0.0, 1.0], [[-1.0, 0.0]], "energy")
    with pytest.raises(ValueError):
        ErrorSeries([0.0, 1.0], [[1.0]], "energy")


def test_sink_matches_batch_functions(kepler_run, tmp_path):
    cfg, res = kepler_run
    ref = reference_trajectory(KEPLER, U0, 1e-3, 4.0, 0.2, directory=tmp_path)
    sink = ErrorSink(KEPLER, U0, 0.2, cfg.N, cfg.K, ref)
    for k in range(cfg.K + 1):
        sink(k, res.states[k])
    H0 = KEPLER.energy(U0)
    np.testing.assert_allclose(sink.series("err_H").values, energy_error(res, KEPLER, H0).values)
    np.testing.assert_allclose(sink.series("err_traj").values, trajectory_error(res, ref).values)
    L = KEPLER.invariant("angular_momentum")
    np.testing.assert_allclose(sink.series("err_L").values,
                               invariant_error(res, L, L.value(U0)).values, rtol=1e-12)
    assert not sink.has("err_L_1")
    assert np.all(sink.series("err_H").values[:, 0] < 1e-15)


def test_energy_error_hand_value():
    cfg = PararealConfig(HO, 0.4, 0.2, 0.1, 0.1, 0)
    res = run(cfg, np.array([1.0, 0.0]))
    # one Verlet step of h=0.1 from (1, 0): q = 0.995, p = -0.0995 * ... checked via energy
    H = 0.5 * (res.states[0] ** 2).sum(axis=1)
    np.testing.assert_allclose(energy_error(res, HO, 0.5).values[0], np.abs(H - 0.5) / 0.5)


def test_zero_reference_value_is_flagged():
    # a radial orbit has zero angular momentum
    y0 = np.array([1.0, 0.0, 0.5, 0.0])
    cfg = PararealConfig(KEPLER, 0.4, 0.2, 1e-3, 0.1, 1)
    res = run(cfg, y0)
    series = invariant_error(res, KEPLER.invariant("angular_momentum"), 0.0)
    assert series.absolute
    sink = ErrorSink(KEPLER, y0, 0.2, cfg.N, cfg.K)
    sink(0, res.states[0])
    assert sink.series("err_L").absolute


def test_solar_components(tmp_path):
    full = build_system("solar_full")
    y0 = initial_state("solar_full")
    sink = ErrorSink(full, y0, 200.0, 2, 0)
    row = np.stack([y0, y0, y0 * 1.001])
    sink(0, row)
    for c in ("err_L", "err_L_1", "err_L_2", "err_L_3"):
        assert sink.has(c)
        assert sink.columns[c][0, 0] == 0.0
    assert sink.columns["err_L_3"][0, 2] == pytest.approx(2e-3, rel=1e-2)


def test_reference_cache_roundtrip(tmp_path, monkeypatch):
    monkeypatch.setenv("HAMPARAREAL_CACHE_DIR", str(tmp_path))
    assert cache_dir() == tmp_path
    a = reference_trajectory(HO, np.array([1.0, 0.0]), 1e-2, 2.0, 0.2)
    files = sorted(p.suffix for p in tmp_path.iterdir())
    assert files == [".json", ".npy"]
    manifest = json.loads(next(tmp_path.glob("*.json")).read_text())
    assert manifest["reference_step"] == pytest.approx(1e-3)
    b = reference_trajectory(HO, np.array([1.0, 0.0]), 1e-2, 2.0, 0.2)
    assert a.tobytes() == b.tobytes()
    np.testing.assert_allclose(a[-1], [np.cos(2.0), -np.sin(2.0)], atol=1e-6)


def test_fine_floor_is_small_and_positive(tmp_path):
    ref = reference_trajectory(KEPLER, U0, 1e-3, 4.0, 0.2, directory=tmp_path)
    floor = fine_floor(KEPLER, U0, 1e-3, 0.2, 20, ref)
    assert floor.shape == (21,) and floor[0] == 0.0
    assert 0 < floor.max() < 1e-3


def test_convergence_iteration():
    t = np.arange(3.0)
    series = ErrorSeries(t, [[1, 1, 1], [1e-3, 1e-3, 1e-3], [1e-5, 1e-5, 1e-5],
                             [3e-5, 1e-5, 1e-5], [1e-5, 1e-5, 1e-5]], "trajectory")
    assert convergence_iteration(series, np.array([0.0, 1e-5])) == 4
    assert convergence_iteration(series, 2e-5) == 2
    assert convergence_iteration(series, 1e-9) is None


def test_drift_detection():
    t = np.linspace(0.0, 1e4, 1001)
    flat = 1e-6 * (1 + 0.5 * np.sin(t))
    assert not drifts(t, flat)
    assert drift_slope(t, 3e-9 * t) == pytest.approx(3e-9)
    assert drifts(t, 3e-9 * (t - 5e3))
