"""Transition density of the reduced Brownian dynamics.

The exact density over a lag has no closed form for a general potential, so
it is approximated by importance sampling over discretized paths: the lag is
split into sub-intervals, intermediate points are drawn from a Gaussian
bridge proposal pinned at both endpoints, and each path is weighted by the
ratio of Euler transition factors to proposal factors.

Sampling uses externally supplied standard-normal draws. Holding those draws
fixed makes the estimator a smooth function of the endpoints and of the
potential parameters, which is what the training loop differentiates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, NumericError

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class BridgeConfig:
    """Estimator size: sub-intervals per lag and sampled paths per pair."""

    n_subintervals: int = 10
    n_path_samples: int = 20

    def __post_init__(self):
        if self.n_subintervals < 1:
            raise ConfigError("need at least one sub-interval")
        if self.n_path_samples < 1:
            raise ConfigError("need at least one path sample")

    def to_dict(self) -> dict:
        return {"n_subintervals": self.n_subintervals, "n_path_samples": self.n_path_samples}

    @staticmethod
    def from_dict(d: dict) -> "BridgeConfig":
        return BridgeConfig(int(d["n_subintervals"]), int(d["n_path_samples"]))


def draw_bridge_noise(rng: np.random.Generator, n_pairs: int, cfg: BridgeConfig,
                      dim: int) -> np.ndarray:
    """Standard-normal draws of shape (pairs, samples, subintervals-1, dim)."""
    return rng.standard_normal((n_pairs, cfg.n_path_samples, cfg.n_subintervals - 1, dim))


def _as_points(x, label: str) -> Tensor:
    t = x if isinstance(x, Tensor) else Tensor(np.atleast_2d(np.asarray(x, dtype=np.float64)))
    if t.data.ndim != 2:
        raise ConfigError(f"{label} must be a (batch, dim) array")
    return t


def _iso_gaussian_logpdf(residual: Tensor, variance: float) -> Tensor:
    d = residual.data.shape[1]
    return ad.square(residual).sum(axis=1) * (-0.5 / variance) - 0.5 * d * np.log(2.0 * np.pi * variance)


def log_euler_density(potential, u_from, u_to, delta: float) -> Tensor:
    """Log density of one Euler step: N(u_to | u_from - grad V * delta, 2 delta I).

    ``potential`` is any object with a ``drift`` method returning the score
    (``-grad V``); ``None`` means a flat potential (pure diffusion).
    """
    if delta <= 0:
        raise ConfigError(f"step length must be positive, got {delta}")
    u_from = _as_points(u_from, "u_from")
    u_to = _as_points(u_to, "u_to")
    mean = u_from if potential is None else u_from + potential.drift(u_from) * delta
    return _iso_gaussian_logpdf(u_to - mean, 2.0 * delta)


def log_proposal_density(u_m, u_next, u_end, m: int, n_subintervals: int,
                         delta: float) -> Tensor:
    """Log density of one Gaussian bridge proposal step.

    The proposal pulls toward the fixed endpoint with strength 1/(M-m) and
    variance 2 delta (M-m-1)/(M-m). The final step (m = M-1) is deterministic
    in the estimator and must not be evaluated here.
    """
    if not 0 <= m <= n_subintervals - 2:
        raise ConfigError(
            f"bridge proposal step index {m} out of range [0, {n_subintervals - 2}]"
        )
    if delta <= 0:
        raise ConfigError(f"step length must be positive, got {delta}")
    u_m = _as_points(u_m, "u_m")
    u_next = _as_points(u_next, "u_next")
    u_end = _as_points(u_end, "u_end")
    remaining = n_subintervals - m
    mean = u_m + (u_end - u_m) * (1.0 / remaining)
    variance = 2.0 * delta * (remaining - 1) / remaining
    return _iso_gaussian_logpdf(u_next - mean, variance)


def per_sample_log_weights(potential, z_from, z_to, tau: float, cfg: BridgeConfig,
                           noise: np.ndarray) -> Tensor:
    """Log importance weights of each sampled path, shape (batch, samples).

    Paths are built from the supplied noise via the proposal's location-scale
    form, so the proposal factors are evaluated exactly at their own samples.
    """
    if cfg.n_subintervals == 1:
        raise ConfigError("per-sample weights are undefined for a single sub-interval")
    if tau <= 0:
        raise ConfigError(f"lag must be positive, got {tau}")
    z_from = _as_points(z_from, "z_from")
    z_to = _as_points(z_to, "z_to")
    n, d = z_from.data.shape
    m_sub = cfg.n_subintervals
    k_s = cfg.n_path_samples
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != (n, k_s, m_sub - 1, d):
        raise ConfigError(
            f"noise cache shape {noise.shape} does not match "
            f"(pairs={n}, samples={k_s}, steps={m_sub - 1}, dim={d})"
        )
    delta = tau / m_sub
    rows = n * k_s

    u = ad.repeat_rows(z_from, k_s)
    u_end = ad.repeat_rows(z_to, k_s)
    points = [u]
    log_g = Tensor(np.zeros(rows))
    for m in range(m_sub - 1):
        remaining = m_sub - m
        mean = u + (u_end - u) * (1.0 / remaining)
        std = np.sqrt(2.0 * delta * (remaining - 1) / remaining)
        xi = Tensor(noise[:, :, m, :].reshape(rows, d))
        u = mean + xi * std
        log_g = log_g + log_proposal_density(points[-1], u, u_end, m, m_sub, delta)
        points.append(u)

    # one batched drift evaluation covering the start point of every sub-step
    stacked = ad.concat(points, axis=0)
    if potential is None:
        means = stacked
    else:
        means = stacked + potential.drift(stacked) * delta
    targets = points[1:] + [u_end]
    log_f = Tensor(np.zeros(rows))
    for m in range(m_sub):
        mean_m = ad.slice_rows(means, m * rows, (m + 1) * rows)
        log_f = log_f + _iso_gaussian_logpdf(targets[m] - mean_m, 2.0 * delta)

    weights = ad.reshape(log_f - log_g, (n, k_s))
    if not np.all(np.isfinite(weights.data)):
        pair, sample = np.argwhere(~np.isfinite(weights.data))[0]
        raise NumericError(f"non-finite path weight at pair {pair}, sample {sample}")
    return weights


def log_transition_density(potential, z_from, z_to, tau: float, cfg: BridgeConfig,
                           noise: np.ndarray | None = None) -> Tensor:
    """Log of the importance-sampling estimate of the lag-``tau`` density.

    With one sub-interval this is exactly the single-step Euler density and
    needs no noise; otherwise the noise cache is required so that repeated
    evaluations (and the gradient) see the same sampled paths.
    """
    if cfg.n_subintervals == 1:
        return log_euler_density(potential, z_from, z_to, tau)
    if noise is None:
        raise ConfigError("bridge sampling requires a noise cache; draw one per pair")
    weights = per_sample_log_weights(potential, z_from, z_to, tau, cfg, noise)
    return ad.logsumexp(weights, axis=1) - np.log(cfg.n_path_samples)
