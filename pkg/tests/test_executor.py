import numpy as np
import pytest

from hamparareal import IntegrationBlowup, PropagatorSpec, build_system, initial_state, propagate
from hamparareal.executor import (COARSE_DOMINATED, FINE_DOMINATED, CostLedger, PipelineClock,
                                  WindowMap, classify_regime, list_schedule, measured_vs_predicted,
                                  predict_cost, run_windows)
from hamparareal.schemes import PararealConfig, run

KEPLER = build_system("kepler")


def inputs(rng, n=37):
    base = initial_state("kepler", eccentricity=0.3)
    return base + 1e-2 * rng.normal(size=(n, 4))


def test_run_windows_matches_propagate_and_is_worker_independent(rng):
    xs = inputs(rng)
    maps = [WindowMap("F", KEPLER, PropagatorSpec(1e-3, 0.2), "fine"),
            WindowMap("G", KEPLER, PropagatorSpec(0.05, 0.2), "coarse")]
    ref, steps = run_windows(xs, maps, workers=1)
    assert steps.tolist() == [204] * len(xs)
    for i in (0, 17, 36):
        np.testing.assert_array_equal(ref["F"][i], propagate(KEPLER, xs[i], maps[0].spec))
    for w in (2, 8, 64):
        out, _ = run_windows(xs, maps, workers=w)
        for name in ("F", "G"):
            assert out[name].tobytes() == ref[name].tobytes()


def test_ledger_charges_steps_plus_one(rng):
    ledger = CostLedger()
    xs = inputs(rng, 5)
    run_windows(xs, [WindowMap("F", KEPLER, PropagatorSpec(1e-2, 0.2), "fine")], 1, ledger)
    assert ledger.steps_fine == 100 and ledger.grad_evals_fine == 105
    assert ledger.grad_evals_coarse == 0


def test_run_windows_reports_blowup_window():
    stiff = build_system("harmonic", omega=100.0)
    xs = np.zeros((4, 2))
    xs[2] = [1.0, 0.0]
    with pytest.raises(IntegrationBlowup) as info:
        run_windows(xs, [WindowMap("G", stiff, PropagatorSpec(0.1, 20.0), "coarse")], 2)
    assert info.value.step_index == 2


def test_run_windows_rejects_zero_workers(rng):
    with pytest.raises(ValueError):
        run_windows(inputs(rng, 2), [], workers=0)


def test_list_schedule():
    ready = np.array([0, 0, 0, 0])
    cost = np.array([5, 5, 5, 5])
    assert list_schedule(ready, cost).tolist() == [5, 5, 5, 5]
    assert list_schedule(ready, cost, processors=2).tolist() == [5, 5, 10, 10]
    assert list_schedule(np.array([0, 7]), np.array([3, 3]), processors=1).tolist() == [3, 10]


def test_pipeline_clock_waits_for_tasks_and_master():
    ledger = CostLedger()
    clock = PipelineClock(3, ledger)
    clock.initial_sweep([1, 1, 1])
    assert clock.state_ready().tolist() == [0, 1, 2, 3]
    clock.iteration(clock.state_ready()[:-1], np.array([10, 10, 10]), np.array([1, 1, 1]))
    # task n is ready at n, done at n + 10; the master follows one step behind
    assert clock.step_finish.tolist() == [11, 12, 13]
    assert ledger.per_iteration_critical_path == [3, 10]
    assert ledger.per_iteration_barrier_path == [3, 13]


def test_regime_classifier():
    assert classify_regime(1e4, 0.2, 1e-4, 0.01) == COARSE_DOMINATED
    assert classify_regime(2e5, 200.0, 1e-2, 50.0) == FINE_DOMINATED
    # equality counts as coarse dominated
    assert classify_regime(100.0, 1.0, 0.01, 1.0) == COARSE_DOMINATED


def test_predicted_speedup_for_the_solar_grid():
    solar = build_system("solar_full")
    cfg = PararealConfig(solar, 2e5, 200.0, 1e-2, 50.0, 15)
    report = predict_cost(cfg, 15, m_proj=1.12)
    assert report.regime == FINE_DOMINATED
    assert report.processors == 1000
    assert report.speedup == pytest.approx(66.7, abs=0.1)


def test_coarse_dominated_closed_forms():
    cfg = PararealConfig(KEPLER, 1e4, 0.2, 1e-4, 0.01, 3)
    report = predict_cost(cfg, 3)
    assert report.regime == COARSE_DOMINATED
    assert report.predicted_cost == 4 * 10**6
    assert report.speedup == pytest.approx(1e8 / 4e6)


def test_measured_path_tracks_prediction():
    ho = build_system("harmonic")
    cfg = PararealConfig(ho, 200.0, 0.2, 1e-3, 0.01, 3)
    res = run(cfg, np.array([1.0, 0.0]))
    ratios = measured_vs_predicted(res, predict_cost(cfg, 3))
    assert len(ratios) == 3
    assert all(0.9 <= r <= 1.3 for r in ratios)
    assert res.ledger.critical_path <= res.ledger.barrier_path
