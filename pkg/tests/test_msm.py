"""MSM checks: analytic two-state chain, symmetrization, lifting."""

import numpy as np
import pytest

from rcflow.errors import DataError
from rcflow.flow import build_flow
from rcflow.msm import (
    MsmModel,
    assign_states,
    estimate_msm,
    implied_timescales,
    kmeans,
    lift_eigenfunction,
    timescale_curve,
    within_cluster_sse,
)
from rcflow.trajectory import Trajectory


def _two_state_chain(n, flip_prob, seed):
    """Symmetric two-state chain sampled via the parity of flip events."""
    rng = np.random.default_rng(seed)
    flips = rng.random(n - 1) < flip_prob
    states = np.concatenate([[0], np.cumsum(flips) % 2]).astype(float)
    return Trajectory(states[:, None])


# -- k-means ------------------------------------------------------------------


def test_kmeans_with_k_equal_to_distinct_points():
    data = np.array([[0.0], [1.0], [2.0], [0.0], [1.0], [2.0]])
    centers = kmeans(data, 3, seed=0)
    assert sorted(centers[:, 0].tolist()) == [0.0, 1.0, 2.0]


def test_kmeans_two_blobs():
    rng = np.random.default_rng(1)
    blob_a = rng.normal(-5.0, 0.3, size=(300, 2))
    blob_b = rng.normal(5.0, 0.3, size=(300, 2))
    centers = kmeans(np.vstack([blob_a, blob_b]), 2, seed=2)
    centers = centers[np.argsort(centers[:, 0])]
    assert np.allclose(centers[0], [-5, -5], atol=0.2)
    assert np.allclose(centers[1], [5, 5], atol=0.2)


def test_kmeans_objective_nonincreasing():
    rng = np.random.default_rng(3)
    data = rng.standard_normal((500, 2))

    # re-run Lloyd manually and track the objective
    centers = kmeans(data, 8, seed=4, max_iter=0)
    sse_prev = within_cluster_sse(data, centers)
    for n_iter in (1, 2, 3, 5, 8, 13):
        centers = kmeans(data, 8, seed=4, max_iter=n_iter)
        sse = within_cluster_sse(data, centers)
        assert sse <= sse_prev + 1e-9
        sse_prev = sse


def test_kmeans_deterministic_per_seed():
    rng = np.random.default_rng(5)
    data = rng.standard_normal((400, 3))
    assert np.array_equal(kmeans(data, 5, seed=9), kmeans(data, 5, seed=9))


def test_kmeans_rejects_too_few_points():
    with pytest.raises(DataError):
        kmeans(np.zeros((3, 1)), 5)


# -- estimation -----------------------------------------------------------------


def test_two_state_analytic_timescale():
    traj = _two_state_chain(1_000_001, 0.1, seed=7)
    model = estimate_msm(traj, np.array([[0.0], [1.0]]), lag_steps=1)
    assert abs(model.eigenvalues[0] - 1.0) < 1e-10
    t1 = implied_timescales(model, 1)[0]
    exact = -1.0 / np.log(0.8)
    assert abs(t1 - exact) / exact < 0.05


def test_alternating_trajectory_is_antisymmetric():
    frames = np.array([0.0, 1.0] * 50)[:, None]
    model = estimate_msm(Trajectory(frames), np.array([[0.0], [1.0]]), 1)
    assert np.allclose(model.transition_matrix, [[0, 1], [1, 0]], atol=1e-12)
    assert abs(model.eigenvalues[-1] + 1.0) < 1e-12
    assert np.isnan(implied_timescales(model, 1)[0])  # non-metastable


def test_time_reversed_input_gives_identical_model():
    traj = _two_state_chain(5000, 0.2, seed=8)
    reversed_traj = Trajectory(traj.frames[::-1].copy())
    centers = np.array([[0.0], [1.0]])
    a = estimate_msm(traj, centers, 2)
    b = estimate_msm(reversed_traj, centers, 2)
    assert np.array_equal(a.transition_matrix, b.transition_matrix)


def test_rows_are_stochastic_and_chain_reversible():
    rng = np.random.default_rng(9)
    frames = rng.standard_normal(20_000).cumsum()[:, None] % 7.0
    centers = kmeans(frames, 10, seed=1)
    model = estimate_msm(Trajectory(frames), centers, 3)
    t = model.transition_matrix
    assert np.allclose(t.sum(axis=1), 1.0, atol=1e-12)
    flux = model.stationary[:, None] * t
    assert np.max(np.abs(flux - flux.T)) < 1e-8
    assert abs(model.eigenvalues[0] - 1.0) < 1e-10


def test_unvisited_states_are_dropped():
    traj = _two_state_chain(2000, 0.3, seed=10)
    centers = np.array([[0.0], [1.0], [50.0]])  # last one never visited
    model = estimate_msm(traj, centers, 1)
    assert model.n_states == 2
    assert np.array_equal(model.state_index, [0, 1])


def test_disconnected_chain_keeps_largest_component():
    # two blocks that never mix: frames 0/1 then 10/11, one far jump between
    left = np.array([0.0, 1.0] * 400)
    right = np.array([10.0, 11.0] * 100)
    frames = np.concatenate([left, right])[:, None]
    centers = np.array([[0.0], [1.0], [10.0], [11.0]])
    labels_jump = 1  # single crossing pair gives a weak link; remove it by lag
    with pytest.warns(UserWarning, match="disconnected"):
        model = estimate_msm(
            [Trajectory(left[:, None]), Trajectory(right[:, None])], centers, labels_jump)
    assert model.n_states == 2
    assert np.array_equal(model.state_index, [0, 1])


def test_implied_timescale_values():
    model = MsmModel(
        centers=np.zeros((2, 1)), lag_steps=1, frame_dt=1.0,
        count_matrix=np.eye(2), transition_matrix=np.eye(2),
        eigenvalues=np.array([1.0, np.exp(-1.0)]),
        right_eigenvectors=np.eye(2), stationary=np.full(2, 0.5),
        state_index=np.arange(2))
    assert abs(implied_timescales(model, 1)[0] - 1.0) < 1e-12

    model.eigenvalues = np.array([1.0, 0.8])
    model.lag_steps = 2
    assert abs(implied_timescales(model, 1)[0] - (-2.0 / np.log(0.8))) < 1e-12


def test_timescales_scale_with_frame_dt():
    traj = _two_state_chain(100_000, 0.1, seed=11)
    centers = np.array([[0.0], [1.0]])
    base = implied_timescales(estimate_msm(traj, centers, 1, frame_dt=1.0), 1)[0]
    scaled = implied_timescales(estimate_msm(traj, centers, 1, frame_dt=0.01), 1)[0]
    assert abs(scaled - 0.01 * base) < 1e-12


def test_markovian_input_gives_flat_timescale_curve():
    traj = _two_state_chain(2_000_000, 0.1, seed=12)
    centers = np.array([[0.0], [1.0]])
    curve = timescale_curve(traj, centers, lags=[1, 2, 3, 4], n_timescales=1)
    t1 = curve[:, 0]
    assert np.all(np.abs(t1 / t1[0] - 1.0) < 0.05)


# -- lifting ---------------------------------------------------------------------


def _identityish_flow(dim=2, rc_dim=1):
    model = build_flow(dim, rc_dim, n_blocks=2, hidden_widths=(4,),
                       rng=np.random.default_rng(0))
    for block in model.blocks:
        for net in (block.scale_net, block.shift_net):
            net.weights[-1].data[...] = 0.0
            net.biases[-1].data[...] = 0.0
    return model


def test_lift_zeroth_eigenfunction_is_constant_one():
    traj = _two_state_chain(5000, 0.2, seed=13)
    model = estimate_msm(traj, np.array([[0.0], [1.0]]), 1)
    flow = _identityish_flow()
    configs = np.random.default_rng(1).standard_normal((40, 2))
    values = lift_eigenfunction(model, flow, configs, 0)
    assert np.allclose(values, 1.0, atol=1e-10)


def test_lift_composition_at_cluster_centers():
    traj = _two_state_chain(5000, 0.2, seed=14)
    model = estimate_msm(traj, np.array([[0.0], [1.0]]), 1)
    flow = _identityish_flow()
    # configurations whose projection hits the centers exactly
    configs = np.array([[0.0, 0.3], [1.0, -0.5]])
    values = lift_eigenfunction(model, flow, configs, 1)
    assert np.array_equal(values, model.right_eigenvectors[[0, 1], 1])


def test_eigenvector_sign_convention():
    traj = _two_state_chain(5000, 0.2, seed=15)
    model = estimate_msm(traj, np.array([[0.0], [1.0]]), 1)
    for col in model.right_eigenvectors.T:
        assert col[np.argmax(np.abs(col))] > 0
