import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mtlearn.dynamics import (
    IntegratorConfig,
    SingularNormalizationError,
    State,
    SystemSpec,
    accel_second_order,
    drift_first_order,
    integrate,
    sample_initial_conditions,
    sample_times,
)
from mtlearn.kernels import BasisFamily, CutOff, OpinionThreshold, RapidDecay, expand

ONE = CutOff(np.inf)  # phi == 1


class Scaled:
    def __init__(self, kernel, alpha):
        self.kernel, self.alpha = kernel, alpha

    def __call__(self, r):
        return self.alpha * self.kernel(r)


def test_drift_two_agents():
    spec = SystemSpec(order=1, N=2, d=1, kernel=ONE)
    np.testing.assert_allclose(drift_first_order(spec, [[0.0], [1.0]]), [[0.5], [-0.5]])


def test_drift_consensus_is_zero():
    spec = SystemSpec(order=1, N=5, d=2, kernel=OpinionThreshold())
    x = np.tile([0.3, -1.2], (5, 1))
    np.testing.assert_array_equal(drift_first_order(spec, x), 0.0)


def test_drift_out_of_range_pair():
    spec = SystemSpec(order=1, N=2, d=1, kernel=CutOff(0.5))
    np.testing.assert_array_equal(drift_first_order(spec, [[0.0], [2.0]]), 0.0)


def test_singular_normalization_names_agent():
    spec = SystemSpec(order=1, N=3, d=1, kernel=CutOff(0.5), include_self=False)
    with pytest.raises(SingularNormalizationError) as exc:
        drift_first_order(spec, [[0.0], [0.1], [5.0]])
    assert exc.value.agent == 2


def test_single_agent_rejected():
    with pytest.raises(ValueError):
        SystemSpec(order=1, N=1, d=1, kernel=ONE)


def test_accel_examples():
    spec = SystemSpec(order=2, N=2, d=1, kernel=ONE)
    np.testing.assert_allclose(accel_second_order(spec, [[0.0], [1.0]], [[0.0], [1.0]]), [[0.5], [-0.5]])
    spec = SystemSpec(order=2, N=4, d=2, kernel=RapidDecay())
    x = np.random.default_rng(0).normal(size=(4, 2))
    np.testing.assert_array_equal(accel_second_order(spec, x, np.tile([1.0, 2.0], (4, 1))), 0.0)
    spec = SystemSpec(order=2, N=3, d=1, kernel=CutOff(0.5))
    v = np.array([[1.0], [-2.0], [3.0]])
    np.testing.assert_array_equal(accel_second_order(spec, [[0.0], [1.0], [2.0]], v), 0.0)


def test_accel_uses_masses():
    spec = SystemSpec(order=2, N=2, d=1, kernel=ONE, masses=[2.0, 4.0])
    np.testing.assert_allclose(accel_second_order(spec, [[0.0], [1.0]], [[0.0], [1.0]]), [[0.25], [-0.125]])


@settings(max_examples=30, deadline=None)
@given(st.floats(1e-3, 1e3), st.integers(0, 10_000))
def test_normalization_invariance(alpha, seed):
    rng = np.random.default_rng(seed)
    x = rng.uniform(0, 2, size=(6, 2))
    v = rng.normal(size=(6, 2))
    for kern in (OpinionThreshold(), RapidDecay()):
        a = SystemSpec(order=2, N=6, d=2, kernel=kern)
        b = SystemSpec(order=2, N=6, d=2, kernel=Scaled(kern, alpha))
        np.testing.assert_allclose(drift_first_order(b, x), drift_first_order(a, x), rtol=1e-12, atol=1e-15)
        np.testing.assert_allclose(accel_second_order(b, x, v), accel_second_order(a, x, v), rtol=1e-12, atol=1e-15)


def test_two_agent_closed_form():
    spec = SystemSpec(order=1, N=2, d=1, kernel=ONE)
    t = np.linspace(0, 1, 11)
    traj = integrate(spec, State(np.array([[0.0], [1.0]])), t)
    gap = traj.positions[:, 1, 0] - traj.positions[:, 0, 0]
    np.testing.assert_allclose(gap, np.exp(-t), atol=1e-4)
    assert abs(gap[-1] - np.exp(-1)) < 1e-4


def test_consensus_trajectory_constant():
    spec = SystemSpec(order=1, N=4, d=2, kernel=OpinionThreshold())
    x0 = np.tile([1.0, 2.0], (4, 1))
    traj = integrate(spec, State(x0), np.linspace(0, 3, 4))
    np.testing.assert_allclose(traj.positions, np.broadcast_to(x0, (4, 4, 2)))


def test_second_order_translation():
    spec = SystemSpec(order=2, N=3, d=2, kernel=RapidDecay())
    x0 = np.random.default_rng(2).uniform(size=(3, 2))
    v0 = np.tile([0.5, -1.0], (3, 1))
    t = np.linspace(0, 2, 5)
    traj = integrate(spec, State(x0, v0), t)
    np.testing.assert_allclose(traj.velocities, np.broadcast_to(v0, (5, 3, 2)), atol=1e-12)
    np.testing.assert_allclose(traj.positions, x0[None] + t[:, None, None] * v0[None], atol=1e-9)


def test_deterministic_integration():
    spec = SystemSpec(order=1, N=20, d=1, kernel=OpinionThreshold())
    x0 = sample_initial_conditions([0.0], [5.0], 20, 3).positions
    t = sample_times(5.0, 6)
    a = integrate(spec, State(x0), t).positions
    b = integrate(spec, State(x0), t).positions
    np.testing.assert_array_equal(a, b)


def test_sample_times_validation():
    spec = SystemSpec(order=1, N=2, d=1, kernel=ONE)
    with pytest.raises(ValueError):
        integrate(spec, State(np.zeros((2, 1))), [0.5, 1.0])
    with pytest.raises(ValueError):
        integrate(spec, State(np.zeros((2, 1))), [0.0, 1.0, 1.0])
    np.testing.assert_allclose(sample_times(5.0, 6), [0, 1, 2, 3, 4, 5])


def _diameter(x):
    return float((x.max(axis=0) - x.min(axis=0)).max())


@pytest.mark.parametrize("kernel", [OpinionThreshold(), RapidDecay(), CutOff(0.5)])
def test_first_order_hull_monotone(kernel):
    cfg = IntegratorConfig()
    spec = SystemSpec(order=1, N=40, d=2, kernel=kernel)
    x0 = sample_initial_conditions([0.0, 0.0], [3.0, 3.0], 40, 11).positions
    traj = integrate(spec, State(x0), np.linspace(0, 5, 26), cfg)
    tol = 10 * cfg.rtol * _diameter(x0)
    hi = traj.positions.max(axis=1)
    lo = traj.positions.min(axis=1)
    assert np.all(np.diff(hi, axis=0) <= tol)
    assert np.all(np.diff(lo, axis=0) >= -tol)


@pytest.mark.parametrize("kernel", [RapidDecay(), CutOff(0.5)])
def test_second_order_velocity_hull_monotone(kernel):
    cfg = IntegratorConfig()
    spec = SystemSpec(order=2, N=40, d=2, kernel=kernel)
    ic = sample_initial_conditions([0, 0], [3, 3], 40, 5, [-1, -1], [1, 1])
    traj = integrate(spec, ic, np.linspace(0, 5, 26), cfg)
    tol = 10 * cfg.rtol * _diameter(ic.velocities)
    hi = traj.velocities.max(axis=1)
    lo = traj.velocities.min(axis=1)
    assert np.all(np.diff(hi, axis=0) <= tol)
    assert np.all(np.diff(lo, axis=0) >= -tol)


def test_sample_initial_conditions():
    a = sample_initial_conditions([0.0], [1.0], 10_000, 42)
    b = sample_initial_conditions([0.0], [1.0], 10_000, 42)
    np.testing.assert_array_equal(a.positions, b.positions)
    assert abs(a.positions.mean() - 0.5) < 0.02
    assert a.positions.min() >= 0 and a.positions.max() < 1
    with pytest.raises(ValueError):
        sample_initial_conditions([1.0], [1.0], 5, 0)
    ic = sample_initial_conditions([0, 0], [1, 2], 5, 0, [-1, -1], [1, 1])
    assert ic.positions.shape == ic.velocities.shape == (5, 2)


def test_basis_expansion_kernel_drives_dynamics():
    basis = BasisFamily(10.0, 100)
    c = np.r_[np.ones(5), 0.1 * np.ones(5), np.zeros(90)]
    a = SystemSpec(order=1, N=10, d=1, kernel=expand(basis, c))
    b = SystemSpec(order=1, N=10, d=1, kernel=OpinionThreshold())
    x = np.random.default_rng(4).uniform(0, 3, size=(10, 1))
    np.testing.assert_allclose(drift_first_order(a, x), drift_first_order(b, x))
