import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

CACHE_DIR = Path(__file__).parent / ".cache"


def cached_benchmark(name: str, **overrides):
    """Simulate a benchmark once and reuse the file across test runs.

    Simulations are seeded and bitwise deterministic, so caching by the
    override signature is safe; it also exercises the binary format.
    """
    from rcflow.simulate import make_benchmark_dataset
    from rcflow.trajectory import load_trajectory, save_trajectory

    CACHE_DIR.mkdir(exist_ok=True)
    tag = "_".join(f"{k}{v}" for k, v in sorted(overrides.items()))
    want_latent = name == "swissroll"
    base = CACHE_DIR / f"{name}_{tag}"
    main_path = base.with_suffix(".rct")
    latent_path = Path(str(base) + "_latent.rct")
    if main_path.exists() and (not want_latent or latent_path.exists()):
        if want_latent:
            return load_trajectory(main_path), load_trajectory(latent_path)
        return load_trajectory(main_path)
    result = make_benchmark_dataset(name, return_latent=want_latent, **overrides)
    if want_latent:
        traj, latent = result
        save_trajectory(traj, main_path)
        save_trajectory(latent, latent_path)
        return traj, latent
    save_trajectory(result, main_path)
    return result


def cached_training(tag: str, build_fn):
    """Train once per cache lifetime; returns (checkpoint, training seconds).

    Clearing ``tests/.cache`` forces a fresh end-to-end run; the recorded
    wall time is what the runtime-bound acceptance checks assert against.
    """
    import json
    import time

    from rcflow.checkpoint import load_checkpoint, save_checkpoint

    CACHE_DIR.mkdir(exist_ok=True)
    ckpt_path = CACHE_DIR / f"{tag}.ckpt.json"
    meta_path = CACHE_DIR / f"{tag}.meta.json"
    if ckpt_path.exists() and meta_path.exists():
        return load_checkpoint(ckpt_path), json.loads(meta_path.read_text())["seconds"]
    start = time.perf_counter()
    ckpt = build_fn()
    elapsed = time.perf_counter() - start
    save_checkpoint(ckpt, ckpt_path)
    meta_path.write_text(json.dumps({"seconds": elapsed}))
    return ckpt, elapsed


@pytest.fixture(scope="session")
def doublewell_quarter():
    """Quarter-size double-well benchmark (40k frames)."""
    return cached_benchmark("doublewell", n_frames=40_000, seed=1)


@pytest.fixture(scope="session")
def doublewell_full():
    """Full-size double-well benchmark (150k frames)."""
    return cached_benchmark("doublewell", n_frames=150_000, seed=1)


@pytest.fixture(scope="session")
def swissroll_smoke():
    """Short swiss-roll run (embedded, latent) for statistical spot checks."""
    return cached_benchmark("swissroll", n_frames=25_000, seed=1)
