"""Analysis helpers for the acceptance suite.

Minima are counted by sublevel-set persistence: a minimum only counts if the
barrier separating it from a deeper basin exceeds a threshold, so shallow
ripples of the fitted mixture do not register as wells. Timescale curves are
compared at the plateau lag, chosen as the first lag where the slowest
full-model timescale changes by less than 10% to the next lag.
"""

import numpy as np


def _persistent_minima(values: np.ndarray, neighbors, threshold: float,
                       inside: np.ndarray | None = None) -> int:
    """Count basins with persistence above ``threshold`` on a graph.

    Union-find sweep in increasing value order: a basin dies when it merges
    into a deeper one, with persistence equal to merge level minus birth
    level. ``inside`` restricts the count to basins born inside a region
    (outside births never count); the surviving deepest basin counts if it
    was born inside.
    """
    values = np.asarray(values, dtype=np.float64)
    if inside is None:
        inside = np.ones(values.size, dtype=bool)
    order = np.argsort(values, kind="stable")
    parent = np.full(values.size, -1, dtype=np.intp)
    birth_value = np.empty(values.size)
    birth_inside = np.zeros(values.size, dtype=bool)

    def find(i):
        root = i
        while parent[root] != root:
            root = parent[root]
        while parent[i] != root:
            parent[i], i = root, parent[i]
        return root

    count = 0
    for idx in order:
        lower_roots = sorted(
            {find(n) for n in neighbors(idx) if parent[n] != -1},
            key=lambda r: birth_value[r])
        if not lower_roots:
            parent[idx] = idx
            birth_value[idx] = values[idx]
            birth_inside[idx] = inside[idx]
            continue
        survivor = lower_roots[0]
        parent[idx] = survivor
        for other in lower_roots[1:]:
            if birth_inside[other] and values[idx] - birth_value[other] > threshold:
                count += 1
            parent[other] = survivor
    roots = {find(i) for i in range(values.size)}
    count += sum(1 for r in roots if birth_inside[r])
    return count


def count_prominent_minima_1d(values: np.ndarray, rel_threshold: float = 0.05) -> int:
    values = np.asarray(values, dtype=np.float64)
    threshold = rel_threshold * (values.max() - values.min())
    n = values.size

    def neighbors(i):
        out = []
        if i > 0:
            out.append(i - 1)
        if i < n - 1:
            out.append(i + 1)
        return out

    return _persistent_minima(values, neighbors, threshold)


def count_prominent_minima_2d(grid_values: np.ndarray, rel_threshold: float = 0.05,
                              mask: np.ndarray | None = None) -> int:
    """Persistent minima of a 2-D field (4-neighbor connectivity).

    ``mask`` marks nodes of the data support; basins whose minimum lies
    outside it (artifacts of the unvisited corners) are not counted. The
    prominence threshold is taken relative to the in-mask value range.
    """
    field = np.asarray(grid_values, dtype=np.float64)
    h, w = field.shape
    values = field.ravel()
    flat_mask = None if mask is None else np.asarray(mask, dtype=bool).ravel()
    ref = values if flat_mask is None else values[flat_mask]
    threshold = rel_threshold * (ref.max() - ref.min())

    def neighbors(i):
        r, c = divmod(i, w)
        out = []
        if r > 0:
            out.append(i - w)
        if r < h - 1:
            out.append(i + w)
        if c > 0:
            out.append(i - 1)
        if c < w - 1:
            out.append(i + 1)
        return out

    return _persistent_minima(values, neighbors, threshold, inside=flat_mask)


def plateau_lag_index(t1_curve: np.ndarray, rel_change: float = 0.05) -> int:
    """First lag index whose slowest timescale is stable to the next lag.

    Stability means the estimate moves by less than ``rel_change`` going to
    the next (roughly doubled) lag; implied-timescale curves approach their
    plateau from below, so this finds where the estimate has converged.
    """
    t1 = np.asarray(t1_curve, dtype=np.float64)
    for i in range(t1.size - 1):
        if np.isfinite(t1[i]) and np.isfinite(t1[i + 1]):
            if abs(t1[i + 1] - t1[i]) / abs(t1[i]) < rel_change:
                return i
    return max(t1.size - 2, 0)


def compare_timescales(full_trajs, reduced_trajs, lags, n_timescales: int,
                       n_states: int = 50, seed: int = 0):
    """Relative timescale differences (reduced vs full) at the plateau lag.

    Both systems are discretized with their own k-means centers and
    re-estimated at every lag; the plateau is read off the full model's
    slowest timescale. Returns (per-timescale relative error, plateau lag,
    full values, reduced values).
    """
    from rcflow.msm import kmeans, timescale_curve
    from rcflow.trajectory import Trajectory

    def stack(trajs):
        if isinstance(trajs, Trajectory):
            trajs = [trajs]
        return trajs, np.concatenate([t.frames for t in trajs], axis=0)

    full_trajs, full_frames = stack(full_trajs)
    reduced_trajs, reduced_frames = stack(reduced_trajs)
    centers_full = kmeans(full_frames, n_states, seed=seed)
    centers_red = kmeans(reduced_frames, n_states, seed=seed)
    curve_full = timescale_curve(full_trajs, centers_full, lags, n_timescales)
    curve_red = timescale_curve(reduced_trajs, centers_red, lags, n_timescales)
    idx = plateau_lag_index(curve_full[:, 0])
    full_vals = curve_full[idx]
    red_vals = curve_red[idx]
    rel = np.abs(red_vals - full_vals) / np.abs(full_vals)
    return rel, lags[idx], full_vals, red_vals


def total_variation_binned(samples: np.ndarray, reference_bin_masses: np.ndarray,
                           edges: np.ndarray) -> float:
    """TV distance between a sample histogram and reference bin masses."""
    counts, _ = np.histogram(samples, bins=edges)
    empirical = counts / samples.size
    return 0.5 * float(np.abs(empirical - reference_bin_masses).sum()
                       + abs(1.0 - reference_bin_masses.sum()))
