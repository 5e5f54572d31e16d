import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hamparareal import (IntegrationBlowup, PropagatorSpec, build_system, inverse_coarse,
                         propagate, verlet_step)
from hamparareal.integrators import grad_evals, propagate_many, sequential_trajectory

HO = build_system("harmonic")
KEPLER = build_system("kepler")


def rho(y):
    d = y.shape[0] // 2
    return np.concatenate([y[:d], -y[d:]])


def random_kepler_state(rng):
    r = rng.uniform(0.5, 2.0)
    a = rng.uniform(0, 2 * np.pi)
    q = r * np.array([np.cos(a), np.sin(a)])
    p = rng.normal(scale=0.5, size=2)
    return np.concatenate([q, p])


def test_single_step_matches_hand_computation():
    y = verlet_step(HO, np.array([1.0, 0.0]), 0.1)
    # q' = 1 - h^2/2, p' = -h/2 (1 + q')
    np.testing.assert_allclose(y, [0.995, -0.09975], rtol=0, atol=1e-15)


def test_zero_step_rejected():
    with pytest.raises(ValueError):
        verlet_step(HO, np.array([1.0, 0.0]), 0.0)


def test_state_shape_checked():
    with pytest.raises(ValueError):
        verlet_step(KEPLER, np.array([1.0, 0.0]), 0.1)


@pytest.mark.parametrize("system", [HO, KEPLER])
def test_symmetry_on_random_states(system, rng):
    for _ in range(100):
        y = rng.normal(size=2) if system is HO else random_kepler_state(rng)
        h = rng.uniform(1e-3, 0.05)
        back = verlet_step(system, verlet_step(system, y, h), -h)
        np.testing.assert_allclose(back, y, atol=1e-12 * (1 + np.abs(y).max()))


@pytest.mark.parametrize("system", [HO, KEPLER])
def test_rho_reversibility(system, rng):
    for _ in range(100):
        y = rng.normal(size=2) if system is HO else random_kepler_state(rng)
        h = rng.uniform(1e-3, 0.05)
        lhs = rho(verlet_step(system, y, h))
        rhs = verlet_step(system, rho(y), -h)
        np.testing.assert_allclose(lhs, rhs, atol=1e-13)


def test_second_order_convergence():
    y0 = np.array([1.0, 0.0])
    exact = np.array([np.cos(1.0), -np.sin(1.0)])
    errs = [np.linalg.norm(propagate(HO, y0, PropagatorSpec(h, 1.0)) - exact)
            for h in (0.02, 0.01)]
    assert 3.5 <= errs[0] / errs[1] <= 4.5


def test_jacobian_determinant_is_one(rng):
    eps = 1e-6
    for _ in range(100):
        y = rng.normal(size=2)
        J = np.empty((2, 2))
        for j in range(2):
            e = np.zeros(2)
            e[j] = eps
            J[:, j] = (verlet_step(HO, y + e, 0.1) - verlet_step(HO, y - e, 0.1)) / (2 * eps)
        assert abs(np.linalg.det(J) - 1.0) <= 1e-6


@settings(max_examples=100, deadline=None)
@given(st.floats(0.5, 2.0), st.floats(0, 2 * np.pi), st.floats(-1, 1), st.floats(-1, 1))
def test_kepler_angular_momentum_exactly_conserved(r, a, p1, p2):
    y = np.array([r * np.cos(a), r * np.sin(a), p1, p2])
    L0 = y[0] * y[3] - y[1] * y[2]
    out = propagate(KEPLER, y, PropagatorSpec(1e-3, 0.05))
    L = out[0] * out[3] - out[1] * out[2]
    assert abs(L - L0) <= 1e-12 * max(1.0, abs(L0))


def test_backward_propagation_inverts_forward():
    y = np.array([0.4, 0.0, 0.0, 2.0])
    spec = PropagatorSpec(1e-3, 0.5)
    there = propagate(KEPLER, y, spec)
    np.testing.assert_allclose(propagate(KEPLER, there, spec.reversed()), y, atol=1e-10)


def test_spec_validation():
    assert PropagatorSpec(0.1, 0.2).steps == 2
    assert PropagatorSpec(-0.01, -0.1).steps == 10
    with pytest.raises(ValueError):
        PropagatorSpec(0.1, -0.2)
    with pytest.raises(ValueError):
        PropagatorSpec(0.3, 0.2)
    with pytest.raises(ValueError):
        PropagatorSpec(0.0, 0.2)
    assert PropagatorSpec(0.1, 0.2).with_duration(-0.1).step == -0.1


def test_inverse_coarse_round_trip():
    spec = PropagatorSpec(-0.01, -0.1)
    y = np.array([0.7, 0.2, -0.3, 1.1])
    z = inverse_coarse(KEPLER, y, spec)
    np.testing.assert_allclose(propagate(KEPLER, z, spec), y, atol=1e-12)


def test_blowup_is_reported():
    stiff = build_system("harmonic", omega=100.0)
    with pytest.raises(IntegrationBlowup) as info:
        propagate(stiff, np.array([1.0, 0.0]), PropagatorSpec(0.1, 200.0))
    assert 0 < info.value.step_index < 2000


def test_batch_and_trajectory_agree_with_single_calls():
    spec = PropagatorSpec(0.01, 0.2)
    ys = np.array([[1.0, 0.0, 0.0, 1.0], [0.5, 0.1, -0.2, 1.3]])
    out = propagate_many(KEPLER, ys, spec)
    for y, o in zip(ys, out):
        assert np.array_equal(propagate(KEPLER, y, spec), o)
    traj = sequential_trajectory(KEPLER, ys[0], 0.01, 20, 3)
    y = ys[0]
    for row in traj[1:]:
        y = propagate(KEPLER, y, spec)
        assert np.array_equal(row, y)
    assert grad_evals(spec) == 21
