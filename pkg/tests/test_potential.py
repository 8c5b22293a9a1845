"""Mixture-potential checks: grid layout, hand values, score oracle, adjoints."""

import numpy as np
import pytest

from rcflow import autodiff as ad
from rcflow.autodiff import Tensor
from rcflow.errors import ConfigError
from rcflow.nets import Mlp, MlpSpec, ParamVector, gradient
from rcflow.potential import GmmPotential, build_gmm, build_grid, gmm_log_mu_and_drift

from helpers import central_diff_grad, max_rel_err


# -- grid -------------------------------------------------------------------


def test_grid_1d_three_points():
    centers = build_grid([0.0], [1.0], 3)
    assert np.array_equal(centers, np.array([[0.0], [0.5], [1.0]]))


def test_grid_2d_corners():
    centers = build_grid([0.0, 0.0], [1.0, 2.0], 2)
    assert np.array_equal(centers, np.array([[0.0, 0.0], [0.0, 2.0], [1.0, 0.0], [1.0, 2.0]]))


def test_grid_1d_forty_points():
    centers = build_grid([-1.3], [2.1], 40)
    assert centers.shape == (40, 1)
    assert centers[0, 0] == -1.3 and centers[-1, 0] == 2.1
    assert np.allclose(np.diff(centers[:, 0]), (2.1 + 1.3) / 39)


def test_grid_rejects_bad_bounds():
    with pytest.raises(ConfigError, match="axis 1"):
        build_grid([0.0, 1.0], [1.0, 1.0], 3)
    with pytest.raises(ConfigError):
        build_grid([0.0], [1.0], 1)


# -- mixture construction helpers ------------------------------------------


def _constant_nets(d, sigma_value, sigma_floor=1e-3):
    """Zeroed nets: equal weights, constant per-axis sigma."""
    weight_net = Mlp.initialize(MlpSpec(d, 1, (4,), output_activation="exponential"),
                                np.random.default_rng(0))
    sigma_net = Mlp.initialize(MlpSpec(d, d, (4,), output_activation="exponential"),
                               np.random.default_rng(1))
    for net in (weight_net, sigma_net):
        for w in net.weights:
            w.data[...] = 0.0
        for b in net.biases:
            b.data[...] = 0.0
    sigma_net.biases[-1].data[...] = np.log(sigma_value - sigma_floor)
    return weight_net, sigma_net


def _two_center_gmm(centers, sigma_value=1.0):
    centers = np.asarray(centers, dtype=np.float64)
    d = centers.shape[1]
    weight_net, sigma_net = _constant_nets(d, sigma_value)
    return GmmPotential(centers, weight_net, sigma_net,
                        lb=centers.min(axis=0), ub=centers.max(axis=0) + 1.0,
                        n_per_axis=2)


def _random_gmm(seed=0, d=1, n_per_axis=4):
    rng = np.random.default_rng(seed)
    g = build_gmm([-1.5] * d, [1.5] * d, n_per_axis, hidden_widths=(6,), rng=rng)
    # roughen the nets so weights/sigmas vary across centers
    for net in (g.weight_net, g.sigma_net):
        net.weights[-1].data[...] = rng.standard_normal(net.weights[-1].data.shape) * 0.5
        net.biases[-1].data += rng.standard_normal(net.biases[-1].data.shape) * 0.3
    return g


# -- log density -------------------------------------------------------------


def test_two_component_hand_value():
    g = _two_center_gmm([[-1.0], [1.0]])
    val = float(g.log_mu(np.array([[0.0]])).data[0])
    expected = -0.5 * np.log(2 * np.pi) - 0.5  # log N(1 | 0, 1)
    assert abs(val - expected) < 1e-12


def test_identical_centers_reduce_to_single_gaussian():
    sigma = 0.7
    g = _two_center_gmm([[0.3], [0.3]], sigma_value=sigma)
    z = np.array([[0.9]])
    val = float(g.log_mu(z).data[0])
    expected = -0.5 * np.log(2 * np.pi * sigma**2) - (0.9 - 0.3) ** 2 / (2 * sigma**2)
    assert abs(val - expected) < 1e-12


def test_mixture_normalization_by_quadrature():
    g = _random_gmm(seed=3)
    sig_max = g.component_sigmas().max()
    zs = np.linspace(-1.5 - 8 * sig_max, 1.5 + 8 * sig_max, 40001)
    mu = np.exp(g.log_mu(zs.reshape(-1, 1)).data)
    mass = np.trapezoid(mu, zs)
    assert abs(mass - 1.0) < 1e-6


def test_weights_positive_and_normalized():
    g = _random_gmm(seed=4)
    w = g.component_weights()
    assert np.all(w > 0)
    assert abs(w.sum() - 1.0) < 1e-12


def test_sigma_floor_holds():
    g = _random_gmm(seed=5)
    g.sigma_net.biases[-1].data[...] = -50.0
    g.sigma_net.weights[-1].data[...] = 0.0
    assert np.all(g.component_sigmas() >= 1e-3)


def test_component_order_permutation_invariance():
    g = _random_gmm(seed=6)
    perm = np.random.default_rng(0).permutation(g.n_components)
    g_perm = GmmPotential(g.centers[perm], g.weight_net, g.sigma_net,
                          lb=g.lb, ub=g.ub, n_per_axis=g.n_per_axis)
    z = np.linspace(-2, 2, 11).reshape(-1, 1)
    assert np.allclose(g.log_mu(z).data, g_perm.log_mu(z).data, rtol=0, atol=1e-12)


def test_potential_is_negated_log_mu():
    g = _random_gmm(seed=7)
    z = np.array([[0.2], [-0.4]])
    assert np.array_equal(g.potential(z).data, -g.log_mu(z).data)


def test_beta_rescaling_function_identity():
    g = _random_gmm(seed=8)
    zs = np.linspace(-1.0, 1.0, 9).reshape(-1, 1)
    for beta in (0.5, 2.0):
        v_of = lambda pts: g.potential(pts).data
        v_prime = lambda zp: beta * v_of(zp / np.sqrt(beta))
        assert np.allclose(v_prime(np.sqrt(beta) * zs), beta * v_of(zs),
                           rtol=1e-12, atol=1e-12)


# -- drift --------------------------------------------------------------------


def test_drift_zero_at_symmetric_midpoint():
    g = _two_center_gmm([[-1.0], [1.0]])
    assert abs(float(g.drift(np.array([[0.0]])).data[0, 0])) < 1e-14


def test_single_gaussian_drift_closed_form():
    sigma = 0.6
    c = 0.25
    g = _two_center_gmm([[c], [c]], sigma_value=sigma)
    z = np.array([[1.1], [-0.7]])
    expected = (c - z) / sigma**2
    assert np.allclose(g.drift(z).data, expected, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("d", [1, 2])
def test_drift_matches_log_mu_finite_differences(d):
    g = _random_gmm(seed=10 + d, d=d, n_per_axis=3)
    rng = np.random.default_rng(0)
    pts = rng.uniform(-2, 2, size=(100, d))
    drift = g.drift(pts).data
    for i in range(pts.shape[0]):
        fd = central_diff_grad(lambda v: float(g.log_mu(v.reshape(1, d)).data[0]),
                               pts[i], h=1e-6)
        assert max_rel_err(drift[i], fd, floor=1e-4) < 1e-6


# -- fused-op adjoint ----------------------------------------------------------


@pytest.mark.parametrize("seed", range(10))
def test_fused_op_adjoint_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    k, d, n = 5, 2, 3
    centers = rng.uniform(-1, 1, size=(k, d))
    z0 = rng.uniform(-1, 1, size=(n, d))
    lw0 = rng.standard_normal(k)
    lw0 -= np.log(np.sum(np.exp(lw0)))
    sig0 = np.exp(rng.uniform(-0.5, 0.5, size=(k, d)))
    mix = rng.standard_normal((n, 1 + d))  # random linear functional

    def loss_from(flat):
        z = Tensor(flat[: n * d].reshape(n, d), requires_grad=True)
        lw = Tensor(flat[n * d : n * d + k], requires_grad=True)
        sig = Tensor(flat[n * d + k :].reshape(k, d), requires_grad=True)
        out = gmm_log_mu_and_drift(z, lw, sig, centers)
        return z, lw, sig, (out * Tensor(mix)).sum()

    flat0 = np.concatenate([z0.ravel(), lw0, sig0.ravel()])
    z, lw, sig, loss = loss_from(flat0)
    loss.backward()
    analytic = np.concatenate([z.grad.ravel(), lw.grad, sig.grad.ravel()])
    fd = central_diff_grad(lambda v: float(loss_from(v)[3].data), flat0, h=1e-6)
    assert max_rel_err(analytic, fd, floor=1e-5) < 1e-5


def test_network_parameter_gradients_flow_through_mixture():
    g = _random_gmm(seed=20)
    params = g.parameters()
    z = np.array([[0.3], [-0.8]])

    def loss_tensor():
        return g.log_mu(z).sum() + ad.square(g.drift(z)).sum()

    grads = gradient(loss_tensor(), params)
    theta0 = params.flat()

    def f(theta):
        params.set_flat(theta)
        return float(loss_tensor().data)

    fd = central_diff_grad(f, theta0, h=1e-6)
    params.set_flat(theta0)
    assert max_rel_err(grads, fd, floor=1e-4) < 1e-5


def test_frozen_matches_graph_evaluation():
    g = _random_gmm(seed=21, d=2, n_per_axis=3)
    z = np.random.default_rng(1).uniform(-2, 2, size=(40, 2))
    frozen = g.frozen()
    log_mu, drift = frozen.log_mu_and_drift(z)
    assert np.array_equal(log_mu, g.log_mu(z).data)
    assert np.array_equal(drift, g.drift(z).data)


def test_sampling_matches_density_histogram():
    g = _random_gmm(seed=22)
    rng = np.random.default_rng(9)
    samples = g.sample(rng, 200_000)[:, 0]
    lo = -1.5 - 6 * g.component_sigmas().max()
    hi = 1.5 + 6 * g.component_sigmas().max()
    n_bins = 60
    edges = np.linspace(lo, hi, n_bins + 1)
    counts, _ = np.histogram(samples, bins=edges)
    empirical = counts / samples.size
    # exact bin masses by fine trapezoid quadrature inside each bin
    sub = 50
    fine = np.linspace(lo, hi, n_bins * sub + 1)
    mu_fine = np.exp(g.log_mu(fine.reshape(-1, 1)).data)
    masses = np.array([
        np.trapezoid(mu_fine[i * sub : (i + 1) * sub + 1], fine[i * sub : (i + 1) * sub + 1])
        for i in range(n_bins)
    ])
    tv = 0.5 * np.sum(np.abs(empirical - masses)) + 0.5 * abs(1.0 - masses.sum())
    assert tv < 0.02
