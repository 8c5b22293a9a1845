"""Overdamped Langevin simulation of the benchmark energy landscapes.

Analytic potentials expose vectorized energies and hand-derived gradients;
the integrator also accepts learned mixture potentials (anything with a
``drift`` method) so reduced models can be simulated with the same code.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DivergenceError, NumericError
from .trajectory import Trajectory


@dataclass(frozen=True)
class DoubleWellPotential:
    """Two minima at (+-1, 0) separated by a saddle of height 5 at (0, 1)."""

    dim: int = 2

    def energy(self, pts: np.ndarray) -> np.ndarray:
        x1, x2 = pts[:, 0], pts[:, 1]
        return 5.0 * (x1**2 - 1.0) ** 2 + 10.0 * (x1**2 + x2 - 1.0) ** 2

    def gradient(self, pts: np.ndarray) -> np.ndarray:
        x1, x2 = pts[:, 0], pts[:, 1]
        inner = x1**2 + x2 - 1.0
        g1 = 20.0 * x1 * (x1**2 - 1.0) + 40.0 * x1 * inner
        g2 = 20.0 * inner
        return np.stack([g1, g2], axis=1)


_MUELLER_A = np.array([-20.0 / 3.0, -10.0 / 3.0, -17.0 / 3.0, 0.5])
_MUELLER_a = np.array([-1.0, -1.0, -6.5, 0.7])
_MUELLER_b = np.array([0.0, 0.0, 11.0, 0.6])
_MUELLER_c = np.array([-10.0, -10.0, -6.5, 0.7])
_MUELLER_X = np.array([1.0, 0.0, -0.5, -1.0])
_MUELLER_Y = np.array([0.0, 0.5, 1.5, 1.0])


@dataclass(frozen=True)
class MuellerPotential:
    """Sum of four anisotropic Gaussians (the classic surface scaled by 1/30)."""

    dim: int = 2

    def _terms(self, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        dx = pts[:, 0:1] - _MUELLER_X
        dy = pts[:, 1:2] - _MUELLER_Y
        expo = _MUELLER_a * dx**2 + _MUELLER_b * dx * dy + _MUELLER_c * dy**2
        return _MUELLER_A * np.exp(expo), dx, dy

    def energy(self, pts: np.ndarray) -> np.ndarray:
        terms, _, _ = self._terms(pts)
        return terms.sum(axis=1)

    def gradient(self, pts: np.ndarray) -> np.ndarray:
        terms, dx, dy = self._terms(pts)
        g1 = (terms * (2.0 * _MUELLER_a * dx + _MUELLER_b * dy)).sum(axis=1)
        g2 = (terms * (_MUELLER_b * dx + 2.0 * _MUELLER_c * dy)).sum(axis=1)
        return np.stack([g1, g2], axis=1)


@dataclass(frozen=True)
class CircularWellsPotential:
    """Ring of angular wells plus a fast harmonic coordinate.

    In-plane part: cos(n_wells * angle) with a harmonic radial term keeping
    the dynamics on an annulus around ``radial_center`` (without it the
    radius diffuses without bound and the process has no stationary
    density). The third coordinate relaxes in an independent harmonic well,
    much faster than the angular hopping.
    """

    n_wells: int = 7
    radial_strength: float = 5.0
    radial_center: float = 1.0
    well_strength_s3: float = 10.0
    dim: int = 3

    def _polar(self, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        r = np.hypot(pts[:, 0], pts[:, 1])
        if np.any(r < 1e-8):
            raise NumericError("circular potential evaluated at the origin")
        return r, np.arctan2(pts[:, 1], pts[:, 0])

    def energy(self, pts: np.ndarray) -> np.ndarray:
        r, theta = self._polar(pts)
        return (np.cos(self.n_wells * theta)
                + self.radial_strength * (r - self.radial_center) ** 2
                + self.well_strength_s3 * pts[:, 2] ** 2)

    def gradient(self, pts: np.ndarray) -> np.ndarray:
        r, theta = self._polar(pts)
        s1, s2, s3 = pts[:, 0], pts[:, 1], pts[:, 2]
        angular = -self.n_wells * np.sin(self.n_wells * theta) / (r * r)
        radial = 2.0 * self.radial_strength * (r - self.radial_center) / r
        g1 = angular * (-s2) + radial * s1
        g2 = angular * s1 + radial * s2
        g3 = 2.0 * self.well_strength_s3 * s3
        return np.stack([g1, g2, g3], axis=1)


@dataclass(frozen=True)
class QuadraticPotential:
    """Isotropic harmonic well |x|^2 / 2 in any dimension."""

    dim: int = 1

    def energy(self, pts: np.ndarray) -> np.ndarray:
        return 0.5 * (pts**2).sum(axis=1)

    def gradient(self, pts: np.ndarray) -> np.ndarray:
        return pts.copy()


ANALYTIC_POTENTIALS = {
    "doublewell": DoubleWellPotential,
    "mueller": MuellerPotential,
    "circular_wells": CircularWellsPotential,
    "quadratic": QuadraticPotential,
}


def make_potential(kind: str, **params):
    try:
        cls = ANALYTIC_POTENTIALS[kind]
    except KeyError:
        raise ConfigError(f"unknown potential {kind!r}; choices: {sorted(ANALYTIC_POTENTIALS)}")
    return cls(**params)


def energy_and_gradient(potential, point) -> tuple[np.ndarray, np.ndarray]:
    """Energy and gradient at one point or a batch of points."""
    pts = np.asarray(point, dtype=np.float64)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if not np.all(np.isfinite(pts)):
        raise NumericError("non-finite evaluation point")
    if pts.shape[1] != potential.dim:
        raise ConfigError(f"expected dim {potential.dim}, got {pts.shape[1]}")
    energy = potential.energy(pts)
    grad = potential.gradient(pts)
    if single:
        return energy[0], grad[0]
    return energy, grad


@dataclass(frozen=True)
class SimConfig:
    """Integrator settings; observed frames are ``save_every`` steps apart."""

    beta: float = 1.0
    step: float = 1e-3
    save_every: int = 1
    n_frames: int = 1000
    seed: int = 0
    burn_in_steps: int = 1000
    bound: float = 1e3

    def __post_init__(self):
        if self.step <= 0:
            raise ConfigError("integrator step must be positive")
        if self.save_every < 1:
            raise ConfigError("save_every must be at least 1")
        if self.beta <= 0:
            raise ConfigError("inverse temperature must be positive")
        if self.n_frames < 1:
            raise ConfigError("need at least one frame")

    @property
    def frame_dt(self) -> float:
        return self.step * self.save_every


def _drift_times_step(potential, step: float):
    """Returns f(x) = -grad V(x) * step for either potential flavor."""
    if hasattr(potential, "drift"):
        frozen = potential.frozen() if hasattr(potential, "frozen") else potential
        return lambda x: frozen.drift(x) * step
    return lambda x: potential.gradient(x) * (-step)


def euler_maruyama(potential, cfg: SimConfig, x0) -> Trajectory:
    """Integrate dx = -grad V dt + sqrt(2/beta) dW and record frames.

    Deterministic for a fixed seed. A burn-in of ``cfg.burn_in_steps`` is
    discarded before the first recorded frame; leaving the box
    ``|x|_inf <= cfg.bound`` aborts with the offending step index.
    """
    x = np.atleast_2d(np.asarray(x0, dtype=np.float64)).copy()
    if x.shape[0] != 1:
        raise ConfigError("x0 must be a single state")
    dim = x.shape[1]
    rng = np.random.default_rng(cfg.seed)
    drift_step = _drift_times_step(potential, cfg.step)
    noise_scale = np.sqrt(2.0 * cfg.step / cfg.beta)
    frames = np.empty((cfg.n_frames, dim))

    def advance(n_steps: int, step_offset: int) -> None:
        nonlocal x
        noise = rng.standard_normal((n_steps, dim))
        for k in range(n_steps):
            x = x + drift_step(x) + noise_scale * noise[k]
            if np.max(np.abs(x)) > cfg.bound:
                raise DivergenceError(
                    f"trajectory left |x| <= {cfg.bound:g} at step {step_offset + k}"
                )

    advance(cfg.burn_in_steps, -cfg.burn_in_steps)
    frames[0] = x[0]
    for frame in range(1, cfg.n_frames):
        advance(cfg.save_every, (frame - 1) * cfg.save_every)
        frames[frame] = x[0]
    metadata = {
        "beta": cfg.beta, "step": cfg.step, "save_every": cfg.save_every,
        "seed": cfg.seed, "burn_in_steps": cfg.burn_in_steps,
    }
    if hasattr(potential, "__class__"):
        metadata["potential"] = potential.__class__.__name__
    return Trajectory(frames, frame_dt=cfg.frame_dt, metadata=metadata)


def swiss_roll_embed(s) -> np.ndarray:
    """Roll flat coordinates into 3-D: arc-length spiral plus normal offset.

    The first coordinate parameterizes the spiral, the second maps straight
    onto the roll axis, and the third displaces along the local normal of
    the spiral curve.
    """
    s = np.atleast_2d(np.asarray(s, dtype=np.float64))
    if s.shape[1] != 3:
        raise ConfigError("swiss roll embedding expects 3-D input")
    s1p = 3.0 * np.pi * (s[:, 0] + 4.0) / 4.0
    s2p = 3.0 * np.pi * (s[:, 1] + 4.0) / 4.0
    u1 = np.sin(s1p) + s1p * np.cos(s1p)
    u3 = -np.cos(s1p) + s1p * np.sin(s1p)
    norm = np.hypot(u1, u3)
    if np.any(norm < 1e-12):
        raise NumericError("degenerate spiral normal")
    x1 = s1p * np.cos(s1p) + (u1 / norm) * s[:, 2]
    x2 = s2p
    x3 = s1p * np.sin(s1p) + (u3 / norm) * s[:, 2]
    return np.stack([x1, x2, x3], axis=1)


BENCHMARKS = {
    "doublewell": {
        "potential": ("doublewell", {}),
        "config": dict(beta=0.5, step=2e-4, save_every=50, n_frames=150_000, seed=1),
        "x0": (1.0, 0.0),
    },
    "mueller": {
        "potential": ("mueller", {}),
        "config": dict(beta=1.0, step=5e-4, save_every=50, n_frames=150_000, seed=1),
        "x0": (-0.5, 1.5),
    },
    "swissroll": {
        "potential": ("circular_wells", {}),
        "config": dict(beta=1.0, step=2e-4, save_every=50, n_frames=300_000, seed=1),
        "x0": (1.0, 1.0, 0.0),
    },
}


def make_benchmark_dataset(name: str, return_latent: bool = False, **overrides):
    """Simulate one of the named benchmark systems.

    Overrides replace integrator settings (``n_frames``, ``seed``, ...).
    For the swiss roll the simulated flat coordinates are pushed through the
    embedding; ``return_latent=True`` additionally returns them.
    """
    if name not in BENCHMARKS:
        raise ConfigError(f"unknown benchmark {name!r}; choices: {sorted(BENCHMARKS)}")
    recipe = BENCHMARKS[name]
    kind, pot_params = recipe["potential"]
    potential = make_potential(kind, **pot_params)
    settings = dict(recipe["config"])
    settings.update(overrides)
    cfg = SimConfig(**settings)
    latent = euler_maruyama(potential, cfg, recipe["x0"])
    latent.metadata["system"] = name
    if name != "swissroll":
        return latent
    embedded = Trajectory(swiss_roll_embed(latent.frames), frame_dt=latent.frame_dt,
                          metadata={**latent.metadata, "embedding": "swiss_roll"})
    if return_latent:
        return embedded, latent
    return embedded
