"""Time-lagged independent component analysis as a whitening pre-processor.

Components maximize lag autocorrelation subject to unit instantaneous
covariance, found by whitening the covariance and diagonalizing the
symmetrized time-lagged covariance in the whitened basis. Directions whose
covariance eigenvalue falls below a relative threshold are dropped, which
removes exactly linear dependencies; a least-squares reconstruction matrix
maps the reduced representation back to the original coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from .trajectory import Trajectory


@dataclass
class TicaModel:
    """Fitted whitening transform ``y = W (x - mean)``.

    Rows of ``transform`` are sorted by autocorrelation, slowest first, and
    satisfy ``W C(0) W^T = I``. ``reconstruction`` (when fitted) is the
    least-squares optimal linear map back to the original coordinates.
    """

    mean: np.ndarray
    transform: np.ndarray
    autocorrelations: np.ndarray
    lag_steps: int
    reconstruction: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    @property
    def rank(self) -> int:
        return self.transform.shape[0]

    @property
    def input_dim(self) -> int:
        return self.transform.shape[1]


def _frame_list(trajs) -> list[np.ndarray]:
    if isinstance(trajs, Trajectory):
        trajs = [trajs]
    out = []
    for traj in trajs:
        out.append(traj.frames if isinstance(traj, Trajectory) else np.asarray(traj, dtype=np.float64))
    return out


def estimate_covariances(traj, lag_steps: int) -> tuple[np.ndarray, np.ndarray]:
    """Instantaneous and symmetrized time-lagged covariance of one trajectory.

    The lagged estimate averages forward and backward outer products, so it
    is symmetric by construction and its spectrum is real.
    """
    frames = _frame_list(traj)[0]
    n = frames.shape[0]
    if lag_steps < 1:
        raise ConfigError("lag must be at least one step")
    if lag_steps >= n:
        raise ConfigError(f"lag {lag_steps} needs more than {lag_steps} frames, got {n}")
    mean = frames.mean(axis=0)
    delta = frames - mean
    c0 = (delta.T @ delta) / n
    head = delta[:-lag_steps]
    tail = delta[lag_steps:]
    ct = (head.T @ tail + tail.T @ head) / (2.0 * (n - lag_steps))
    return c0, ct


def _pooled_covariances(frame_arrays, lag_steps: int):
    total = sum(f.shape[0] for f in frame_arrays)
    mean = sum(f.sum(axis=0) for f in frame_arrays) / total
    c0 = np.zeros((frame_arrays[0].shape[1],) * 2)
    ct = np.zeros_like(c0)
    pairs = 0
    for f in frame_arrays:
        if lag_steps >= f.shape[0]:
            raise ConfigError(f"lag {lag_steps} exceeds a trajectory of {f.shape[0]} frames")
        delta = f - mean
        c0 += delta.T @ delta
        head = delta[:-lag_steps]
        tail = delta[lag_steps:]
        ct += head.T @ tail + tail.T @ head
        pairs += f.shape[0] - lag_steps
    return mean, c0 / total, ct / (2.0 * pairs)


def fit_tica(trajs, lag_steps: int, eps_rank: float = 1e-10,
             rank: int | None = None) -> TicaModel:
    """Fit the whitening transform on one or more trajectories.

    ``eps_rank`` drops covariance directions below that fraction of the
    largest eigenvalue; ``rank`` optionally caps the retained dimension.
    Component signs are fixed so each row's largest-magnitude entry is
    positive, making the fit deterministic.
    """
    frame_arrays = _frame_list(trajs)
    if lag_steps < 1:
        raise ConfigError("lag must be at least one step")
    mean, c0, ct = _pooled_covariances(frame_arrays, lag_steps)
    c0 = 0.5 * (c0 + c0.T)
    evals, evecs = np.linalg.eigh(c0)
    evals = evals[::-1]
    evecs = evecs[:, ::-1]
    if evals[0] <= 0:
        raise DataError("degenerate data: zero instantaneous covariance")
    keep = evals > eps_rank * evals[0]
    if rank is not None:
        keep[min(rank, keep.size):] = False
    evals = evals[keep]
    evecs = evecs[:, keep]
    whiten = evecs / np.sqrt(evals)                     # (D, r): x -> whitened
    m = whiten.T @ ct @ whiten
    m = 0.5 * (m + m.T)
    lam, q = np.linalg.eigh(m)
    order = np.argsort(lam)[::-1]
    lam = lam[order]
    q = q[:, order]
    transform = (whiten @ q).T                          # rows are components
    # deterministic sign convention
    for row in transform:
        j = np.argmax(np.abs(row))
        if row[j] < 0:
            row *= -1.0
    return TicaModel(mean=mean, transform=transform, autocorrelations=lam,
                     lag_steps=lag_steps)


def tica_transform(model: TicaModel, traj: Trajectory) -> Trajectory:
    """Project a trajectory onto the fitted components (affine per frame)."""
    if traj.dim != model.input_dim:
        raise ConfigError(f"trajectory dim {traj.dim} does not match model dim {model.input_dim}")
    projected = (traj.frames - model.mean) @ model.transform.T
    meta = dict(traj.metadata)
    meta["preprocessing"] = f"tica(lag={model.lag_steps}, rank={model.rank})"
    return Trajectory(projected, frame_dt=traj.frame_dt, metadata=meta)


def fit_reconstruction(model: TicaModel, trajs) -> TicaModel:
    """Attach the least-squares reconstruction matrix fitted on data.

    Solves ``min || dX - R (W dX) ||`` over linear maps R via the
    Moore-Penrose pseudo-inverse of the projected data; with a square
    full-rank transform this reproduces the exact inverse.
    """
    frame_arrays = _frame_list(trajs)
    delta = np.concatenate(frame_arrays, axis=0) - model.mean
    projected = delta @ model.transform.T
    solution, *_ = np.linalg.lstsq(projected, delta, rcond=None)
    model.reconstruction = solution.T                    # (D, r)
    return model


def reconstruct(model: TicaModel, projected: np.ndarray) -> np.ndarray:
    """Map reduced coordinates back to (approximate) original coordinates."""
    if model.reconstruction is None:
        raise ConfigError("reconstruction matrix not fitted")
    projected = np.atleast_2d(np.asarray(projected, dtype=np.float64))
    return projected @ model.reconstruction.T + model.mean
