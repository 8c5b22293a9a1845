"""Markov state model estimation for kinetic validation.

Trajectories are discretized by k-means, transitions are counted at a fixed
lag and symmetrized, and the row-normalized matrix is diagonalized through a
symmetric similarity transform so the spectrum is real. Implied timescales
convert eigenvalues to relaxation times; re-estimating over a range of lags
gives the timescale-vs-lag curves used to compare reduced and full kinetics.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from .trajectory import Trajectory


def kmeans(data: np.ndarray, k: int, seed: int = 0, max_iter: int = 100) -> np.ndarray:
    """Lloyd iterations from k-means++ seeding; deterministic per seed."""
    data = np.asarray(data, dtype=np.float64)
    if data.ndim == 1:
        data = data[:, None]
    n = data.shape[0]
    if n < k:
        raise DataError(f"k-means needs at least {k} points, got {n}")
    rng = np.random.default_rng(seed)

    centers = np.empty((k, data.shape[1]))
    centers[0] = data[rng.integers(n)]
    closest_sq = ((data - centers[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = closest_sq.sum()
        if total <= 0:  # fewer distinct points than k: reuse duplicates
            centers[i:] = data[rng.integers(n, size=k - i)]
            break
        centers[i] = data[rng.choice(n, p=closest_sq / total)]
        closest_sq = np.minimum(closest_sq, ((data - centers[i]) ** 2).sum(axis=1))

    labels = assign_states(data, centers)
    for _ in range(max_iter):
        for j in range(k):
            members = labels == j
            if np.any(members):
                centers[j] = data[members].mean(axis=0)
            else:
                # deterministic refill: grab the point farthest from its center
                distances = ((data - centers[labels]) ** 2).sum(axis=1)
                farthest = int(np.argmax(distances))
                centers[j] = data[farthest]
                labels[farthest] = j
        new_labels = assign_states(data, centers)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    return centers


def assign_states(data: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Nearest-center index for every row (chunked to bound memory)."""
    data = np.asarray(data, dtype=np.float64)
    if data.ndim == 1:
        data = data[:, None]
    labels = np.empty(data.shape[0], dtype=np.intp)
    center_sq = (centers**2).sum(axis=1)
    for lo in range(0, data.shape[0], 65536):
        chunk = data[lo : lo + 65536]
        d2 = center_sq - 2.0 * (chunk @ centers.T)
        labels[lo : lo + 65536] = np.argmin(d2, axis=1)
    return labels


def within_cluster_sse(data: np.ndarray, centers: np.ndarray) -> float:
    data = np.asarray(data, dtype=np.float64)
    if data.ndim == 1:
        data = data[:, None]
    labels = assign_states(data, centers)
    return float(((data - centers[labels]) ** 2).sum())


@dataclass
class MsmModel:
    """Estimated Markov state model on the retained (connected) states."""

    centers: np.ndarray            # centers of the retained states
    lag_steps: int
    frame_dt: float
    count_matrix: np.ndarray       # symmetrized counts on retained states
    transition_matrix: np.ndarray  # row-stochastic
    eigenvalues: np.ndarray        # real, sorted descending, eigenvalues[0] = 1
    right_eigenvectors: np.ndarray  # columns, sign-fixed; column 0 is constant
    stationary: np.ndarray
    state_index: np.ndarray        # retained-state index into the input centers
    metadata: dict = field(default_factory=dict)

    @property
    def n_states(self) -> int:
        return self.transition_matrix.shape[0]

    @property
    def lag_time(self) -> float:
        return self.lag_steps * self.frame_dt


def _largest_connected(counts: np.ndarray) -> np.ndarray:
    """Indices of the most populated connected component (undirected)."""
    n = counts.shape[0]
    adjacency = counts > 0
    unvisited = set(range(n))
    best, best_mass = [], -1.0
    while unvisited:
        start = min(unvisited)
        component = [start]
        unvisited.discard(start)
        queue = [start]
        while queue:
            node = queue.pop()
            neighbors = np.flatnonzero(adjacency[node])
            for nb in neighbors:
                if nb in unvisited:
                    unvisited.discard(int(nb))
                    component.append(int(nb))
                    queue.append(int(nb))
        mass = counts[np.ix_(component, component)].sum()
        if mass > best_mass:
            best, best_mass = sorted(component), mass
    return np.asarray(best, dtype=np.intp)


def estimate_msm(trajs, centers: np.ndarray, lag_steps: int,
                 frame_dt: float | None = None) -> MsmModel:
    """Count transitions at the lag, symmetrize, normalize, diagonalize.

    Pairs never cross trajectory boundaries. States with no symmetrized
    counts are dropped; if the remaining chain is disconnected, the most
    populated connected component is retained with a warning.
    """
    if isinstance(trajs, Trajectory):
        trajs = [trajs]
    if lag_steps < 1:
        raise ConfigError("lag must be at least one step")
    centers = np.asarray(centers, dtype=np.float64)
    if centers.ndim == 1:
        centers = centers[:, None]
    k = centers.shape[0]
    dt = frame_dt if frame_dt is not None else (
        trajs[0].frame_dt if isinstance(trajs[0], Trajectory) else 1.0)

    counts = np.zeros((k, k))
    usable = 0
    for traj in trajs:
        frames = traj.frames if isinstance(traj, Trajectory) else np.asarray(traj, dtype=np.float64)
        if frames.shape[0] <= lag_steps:
            continue
        labels = assign_states(frames, centers)
        np.add.at(counts, (labels[:-lag_steps], labels[lag_steps:]), 1.0)
        usable += frames.shape[0] - lag_steps
    if usable == 0:
        raise DataError(f"no trajectory longer than the lag of {lag_steps} steps")

    sym = 0.5 * (counts + counts.T)
    populated = sym.sum(axis=1) > 0
    index = np.flatnonzero(populated)
    sym = sym[np.ix_(index, index)]
    component = _largest_connected(sym)
    if component.size < index.size:
        warnings.warn(
            f"transition graph is disconnected; keeping {component.size} of "
            f"{index.size} populated states", stacklevel=2)
        index = index[component]
        sym = sym[np.ix_(component, component)]

    row_sums = sym.sum(axis=1)
    transition = sym / row_sums[:, None]
    stationary = row_sums / row_sums.sum()
    sqrt_pi = np.sqrt(stationary)
    similar = sym / row_sums.sum() / np.outer(sqrt_pi, sqrt_pi)
    similar = 0.5 * (similar + similar.T)
    evals, evecs = np.linalg.eigh(similar)
    order = np.argsort(evals)[::-1]
    evals = evals[order]
    evecs = evecs[:, order]
    right = evecs / sqrt_pi[:, None]
    for col in right.T:
        j = np.argmax(np.abs(col))
        if col[j] < 0:
            col *= -1.0
    return MsmModel(
        centers=centers[index], lag_steps=lag_steps, frame_dt=dt,
        count_matrix=sym, transition_matrix=transition, eigenvalues=evals,
        right_eigenvectors=right, stationary=stationary, state_index=index,
    )


def implied_timescales(model: MsmModel, n_timescales: int | None = None) -> np.ndarray:
    """Relaxation times -lag_time / log(eigenvalue) for the non-unit spectrum.

    Eigenvalues outside (0, 1) have no finite relaxation interpretation and
    are reported as NaN.
    """
    n_avail = model.eigenvalues.size - 1
    count = n_avail if n_timescales is None else min(n_timescales, n_avail)
    lam = model.eigenvalues[1 : count + 1]
    out = np.full(count, np.nan)
    valid = (lam > 0) & (lam < 1)
    out[valid] = -model.lag_time / np.log(lam[valid])
    return out


def timescale_curve(trajs, centers: np.ndarray, lags: list[int],
                    n_timescales: int = 3, frame_dt: float | None = None) -> np.ndarray:
    """Implied timescales re-estimated at each lag; rows follow ``lags``."""
    rows = []
    for lag in lags:
        model = estimate_msm(trajs, centers, lag, frame_dt=frame_dt)
        its = implied_timescales(model, n_timescales)
        if its.size < n_timescales:
            its = np.concatenate([its, np.full(n_timescales - its.size, np.nan)])
        rows.append(its)
    return np.asarray(rows)


def lift_eigenfunction(model: MsmModel, flow, configurations, index: int) -> np.ndarray:
    """Evaluate the i-th reduced eigenfunction on full-state configurations.

    The eigenfunction is piecewise constant over the reaction-coordinate
    clusters, so lifting is projection followed by state lookup.
    """
    from .flow import rc_project

    if not 0 <= index < model.eigenvalues.size:
        raise ConfigError(f"eigenfunction index {index} out of range")
    z = rc_project(flow, np.asarray(configurations, dtype=np.float64)).data
    labels = assign_states(z, model.centers)
    return model.right_eigenvectors[labels, index]
