"""Command-line pipeline driver.

Four subcommands cover the workflow: ``simulate`` produces benchmark
trajectories, ``train`` fits the model end to end, ``analyze`` exports
timescale tables, potential surfaces, level-set curves, and projections, and
``sample`` draws or reconstructs configurations. Exit codes are part of the
contract: 0 on success, 2 for configuration or data problems, 3 for numeric
failures.

Heavy imports happen inside the handlers so the worker-thread cap from
``RCFLOW_THREADS`` can be applied to the BLAS pools first.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _apply_thread_cap() -> None:
    cap = os.environ.get("RCFLOW_THREADS")
    if not cap:
        return
    try:
        n = max(1, int(cap))
    except ValueError:
        raise SystemExit(f"RCFLOW_THREADS must be an integer, got {cap!r}")
    for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, str(n))


def _load_json(path: str) -> dict:
    from .errors import DataError

    p = Path(path)
    if not p.exists():
        raise DataError(f"config file not found: {p}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{p}: invalid JSON: {exc}") from exc


def _write_csv(path: str, header: list[str], rows) -> None:
    import numpy as np

    body = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    lines = [",".join(header)]
    for row in body:
        lines.append(",".join(f"{v:.17g}" for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


# -- simulate -----------------------------------------------------------------


def _cmd_simulate(args) -> int:
    from .simulate import make_benchmark_dataset
    from .trajectory import save_trajectory

    overrides = _load_json(args.config) if args.config else {}
    if args.frames is not None:
        overrides["n_frames"] = args.frames
    if args.seed is not None:
        overrides["seed"] = args.seed
    want_latent = args.latent_out is not None
    result = make_benchmark_dataset(args.system, return_latent=want_latent, **overrides)
    if want_latent:
        traj, latent = result
        save_trajectory(latent, args.latent_out)
    else:
        traj = result
    save_trajectory(traj, args.out)
    print(f"wrote {traj.n_frames} frames x {traj.dim} dims to {args.out}")
    return EXIT_OK


# -- train ------------------------------------------------------------------


def _cmd_train(args) -> int:
    from .checkpoint import save_checkpoint
    from .errors import DataError
    from .trajectory import load_trajectory
    from .training import TrainConfig, fit_pipeline

    config = TrainConfig.from_dict(_load_json(args.config))
    if args.seed is not None:
        import dataclasses

        config = dataclasses.replace(config, seed=args.seed)
    trajs = [load_trajectory(p) for p in args.data]
    for path, traj in zip(args.data, trajs):
        if traj.n_frames <= config.tau_steps:
            raise DataError(
                f"{path}: {traj.n_frames} frames cannot support the lag of "
                f"{config.tau_steps} frames")
    if args.resume:
        ckpt = _resume(args.resume, trajs, config)
    else:
        ckpt = fit_pipeline(trajs, config)
    save_checkpoint(ckpt, args.out)
    loss_csv = args.loss_csv or str(Path(args.out).with_suffix(".loss.csv"))
    _write_history_csv(ckpt.history, loss_csv)
    last = ckpt.history[-1] if ckpt.history else {}
    print(f"wrote checkpoint {args.out} "
          f"(final loss {last.get('loss_total', float('nan')):.6g}); losses in {loss_csv}")
    return EXIT_OK


def _resume(ckpt_path: str, trajs, config):
    from .checkpoint import Checkpoint, load_checkpoint
    from .tica import tica_transform
    from .training import EpochRecord, TransitionDataset, train_joint

    previous = load_checkpoint(ckpt_path)
    if previous.tica is not None:
        trajs = [tica_transform(previous.tica, t) for t in trajs]
    dataset = TransitionDataset.from_trajectories(trajs, config.tau_steps, config.tau_phys)
    history: list[EpochRecord] = []
    train_joint(previous.flow, previous.potential, dataset, config, history,
                epoch_offset=previous.completed_joint_epochs)
    return Checkpoint(
        config=config, tica=previous.tica, flow=previous.flow,
        potential=previous.potential,
        history=previous.history + [h.to_dict() for h in history],
        tau_phys=dataset.tau_phys, frame_dt=dataset.frame_dt)


def _write_history_csv(history: list[dict], path: str) -> None:
    lines = ["phase,epoch,loss_kin,loss_eq,loss_total,learning_rate"]
    for h in history:
        lines.append(
            f"{h['phase']},{h['epoch']},{h['loss_kin']:.17g},"
            f"{h['loss_eq']:.17g},{h['loss_total']:.17g},{h['learning_rate']:.17g}")
    Path(path).write_text("\n".join(lines) + "\n")


# -- analyze -----------------------------------------------------------------


def _parse_lags(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _cmd_analyze(args) -> int:
    from .checkpoint import load_checkpoint

    ckpt = load_checkpoint(args.ckpt)
    if args.mode == "its":
        _analyze_its(args, ckpt)
    elif args.mode == "surface":
        _analyze_surface(args, ckpt)
    elif args.mode == "levelset":
        _analyze_levelset(args, ckpt)
    else:
        _analyze_project(args, ckpt)
    return EXIT_OK


def _analyze_its(args, ckpt) -> None:
    import numpy as np

    from .msm import kmeans, timescale_curve
    from .simulate import SimConfig, euler_maruyama

    lags = _parse_lags(args.lags)
    cfg = SimConfig(beta=1.0, step=ckpt.frame_dt / 50.0, save_every=50,
                    n_frames=args.n_frames, seed=args.seed or 0)
    start = ckpt.potential.centers.mean(axis=0)
    reduced = euler_maruyama(ckpt.potential, cfg, start)
    centers = kmeans(reduced.frames, args.n_states, seed=args.seed or 0)
    table = timescale_curve(reduced, centers, lags, n_timescales=args.n_timescales)
    header = ["lag"] + [f"t{i+1}" for i in range(table.shape[1])]
    rows = np.column_stack([np.asarray(lags, dtype=float), table])
    _write_csv(args.out, header, rows)
    print(f"wrote implied-timescale table ({len(lags)} lags) to {args.out}")


def _analyze_surface(args, ckpt) -> None:
    import numpy as np

    from .potential import build_grid

    pot = ckpt.potential
    res = args.grid_res
    grid = build_grid(pot.lb, pot.ub, res)
    values = pot.potential(grid).data
    header = [f"z{i}" for i in range(pot.rc_dim)] + ["potential"]
    _write_csv(args.out, header, np.column_stack([grid, values]))
    print(f"wrote potential surface ({grid.shape[0]} points) to {args.out}")


def _analyze_levelset(args, ckpt) -> None:
    import numpy as np

    from .errors import ConfigError
    from .flow import flow_inverse
    from .tica import reconstruct

    if ckpt.flow.rc_dim != 1:
        raise ConfigError("level-set export needs a one-dimensional reaction coordinate")
    pot = ckpt.potential
    z = np.linspace(pot.lb[0], pot.ub[0], args.grid_res).reshape(-1, 1)
    x = flow_inverse(ckpt.flow, z, np.zeros((z.shape[0], ckpt.flow.noise_dim)))
    if ckpt.tica is not None:
        x = reconstruct(ckpt.tica, x)
    header = ["z"] + [f"x{i}" for i in range(x.shape[1])]
    _write_csv(args.out, header, np.column_stack([z, x]))
    print(f"wrote level-set curve ({z.shape[0]} points) to {args.out}")


def _analyze_project(args, ckpt) -> None:
    import numpy as np

    from . import autodiff as ad
    from .errors import ConfigError
    from .flow import rc_project
    from .tica import tica_transform
    from .trajectory import load_trajectory

    if not args.data:
        raise ConfigError("projection needs --data with an input trajectory")
    traj = load_trajectory(args.data)
    if ckpt.tica is not None:
        traj = tica_transform(ckpt.tica, traj)
    chunks = []
    with ad.no_grad():
        for lo in range(0, traj.n_frames, 16384):
            chunks.append(rc_project(ckpt.flow, traj.frames[lo : lo + 16384]).data)
    z = np.concatenate(chunks, axis=0)
    _write_csv(args.out, [f"z{i}" for i in range(z.shape[1])], z)
    print(f"wrote {z.shape[0]} projected frames to {args.out}")


# -- sample -----------------------------------------------------------------


def _cmd_sample(args) -> int:
    import numpy as np

    from .checkpoint import load_checkpoint
    from .errors import ConfigError
    from .tica import reconstruct
    from .trajectory import Trajectory, save_trajectory

    ckpt = load_checkpoint(args.ckpt)
    flow = ckpt.flow
    rng = np.random.default_rng(args.seed or 0)
    if args.mode == "equilibrium":
        if args.n is None:
            raise ConfigError("equilibrium sampling needs --n")
        if args.n == 0:
            _write_empty_samples(args.out, flow.dim if ckpt.tica is None
                                 else ckpt.tica.input_dim)
            print(f"wrote 0 samples to {args.out}")
            return EXIT_OK
        z = ckpt.potential.sample(rng, args.n)
        v = rng.standard_normal((args.n, flow.noise_dim))
    else:
        if not args.input:
            raise ConfigError("reconstruction needs --input with (rc, noise) rows")
        from .trajectory import load_trajectory

        source = load_trajectory(args.input)
        if source.dim != flow.dim:
            raise ConfigError(
                f"input has {source.dim} columns; the transform needs "
                f"{flow.dim} (= {flow.rc_dim} rc + {flow.noise_dim} noise)")
        z = source.frames[:, : flow.rc_dim]
        v = source.frames[:, flow.rc_dim :]
    x = _chunked_inverse(flow, z, v)
    if ckpt.tica is not None:
        if ckpt.tica.reconstruction is None:
            raise ConfigError("checkpoint's whitening model has no reconstruction matrix")
        x = reconstruct(ckpt.tica, x)
    save_trajectory(Trajectory(x, metadata={"origin": f"sample:{args.mode}"}), args.out)
    print(f"wrote {x.shape[0]} samples to {args.out}")
    return EXIT_OK


def _chunked_inverse(flow, z, v):
    import numpy as np

    from .flow import flow_inverse

    outs = []
    for lo in range(0, z.shape[0], 16384):
        outs.append(flow_inverse(flow, z[lo : lo + 16384], v[lo : lo + 16384]))
    return np.concatenate(outs, axis=0)


def _write_empty_samples(path: str, dim: int) -> None:
    p = Path(path)
    if p.suffix == ".csv":
        header = "t," + ",".join(f"c{i}" for i in range(dim))
        p.write_text(header + "\n")
    else:
        import struct

        from .trajectory import BINARY_VERSION, MAGIC

        p.write_bytes(MAGIC + struct.pack("<IQId", BINARY_VERSION, 0, dim, 1.0))


# -- entry point ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rcflow",
        description="Learn and analyze low-dimensional Brownian models of stochastic dynamics.")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="generate a benchmark trajectory")
    sim.add_argument("--system", required=True,
                     help="benchmark name: doublewell, mueller, swissroll")
    sim.add_argument("--config", help="JSON file with integrator overrides")
    sim.add_argument("--out", required=True, help="output trajectory (.csv or .rct)")
    sim.add_argument("--frames", type=int, help="override the frame count")
    sim.add_argument("--seed", type=int, help="override the simulation seed")
    sim.add_argument("--latent-out",
                     help="also write the pre-embedding coordinates (swiss roll)")
    sim.set_defaults(handler=_cmd_simulate)

    train = sub.add_parser("train", help="fit the model on trajectories")
    train.add_argument("--data", required=True, nargs="+", help="trajectory files")
    train.add_argument("--config", required=True, help="JSON training configuration")
    train.add_argument("--out", required=True, help="output checkpoint path")
    train.add_argument("--loss-csv", help="loss history CSV (default: <out>.loss.csv)")
    train.add_argument("--resume", help="checkpoint to continue joint training from")
    train.add_argument("--seed", type=int, help="override the configured seed")
    train.set_defaults(handler=_cmd_train)

    analyze = sub.add_parser("analyze", help="export analysis tables from a checkpoint")
    analyze.add_argument("--ckpt", required=True)
    analyze.add_argument("--mode", required=True,
                         choices=["its", "surface", "levelset", "project"])
    analyze.add_argument("--out", required=True)
    analyze.add_argument("--data", help="input trajectory (project mode)")
    analyze.add_argument("--lags", default="1,2,5,10,20,50,100,200",
                         help="comma-separated MSM lags in frames (its mode)")
    analyze.add_argument("--n-frames", type=int, default=100_000,
                         help="reduced-simulation length (its mode)")
    analyze.add_argument("--n-states", type=int, default=50,
                         help="MSM state count (its mode)")
    analyze.add_argument("--n-timescales", type=int, default=3)
    analyze.add_argument("--grid-res", type=int, default=200,
                         help="points per axis (surface / levelset modes)")
    analyze.add_argument("--seed", type=int)
    analyze.set_defaults(handler=_cmd_analyze)

    sample = sub.add_parser("sample", help="draw or reconstruct configurations")
    sample.add_argument("--ckpt", required=True)
    sample.add_argument("--n", type=int, help="number of equilibrium samples")
    sample.add_argument("--mode", required=True, choices=["equilibrium", "reconstruct"])
    sample.add_argument("--input", help="(rc, noise) trajectory file (reconstruct mode)")
    sample.add_argument("--out", required=True)
    sample.add_argument("--seed", type=int)
    sample.set_defaults(handler=_cmd_sample)
    return parser


def main(argv=None) -> int:
    _apply_thread_cap()
    parser = build_parser()
    args = parser.parse_args(argv)
    from .errors import ConfigError, DataError, NumericError

    try:
        return args.handler(args)
    except (ConfigError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
