"""Time-ordered frame matrices and their on-disk formats.

Two formats, auto-detected by extension: a text CSV with header
``t,c0,c1,...`` and 17-significant-digit floats (lossless for float64), and
a compact binary ``.rct`` layout (magic ``RCFT``, u32 version, u64 frame
count, u32 dimension, f64 frame spacing, then row-major little-endian f64
frames). Writes go to a temporary file first and are renamed into place.
"""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

MAGIC = b"RCFT"
BINARY_VERSION = 1
BINARY_EXT = ".rct"


@dataclass
class Trajectory:
    """Uniformly spaced frames of one realization of a process."""

    frames: np.ndarray
    frame_dt: float = 1.0
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2:
            raise ConfigError(f"frames must be 2-D (T, dim), got shape {self.frames.shape}")
        if self.frames.shape[0] < 1:
            raise DataError("a trajectory needs at least one frame")
        if not np.all(np.isfinite(self.frames)):
            t, c = np.argwhere(~np.isfinite(self.frames))[0]
            raise DataError(f"non-finite value at frame {t}, coordinate {c}")
        if self.frame_dt <= 0:
            raise ConfigError(f"frame_dt must be positive, got {self.frame_dt}")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]

    def __len__(self) -> int:
        return self.n_frames


def _atomic_write(path: Path, write_fn) -> None:
    path = Path(path)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent or Path("."), suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            write_fn(fh)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def save_trajectory(traj: Trajectory, path) -> None:
    """Write a trajectory; the extension picks the format (.csv or .rct)."""
    path = Path(path)
    if path.suffix == ".csv":
        _save_csv(traj, path)
    elif path.suffix == BINARY_EXT:
        _save_binary(traj, path)
    else:
        raise ConfigError(f"unknown trajectory extension {path.suffix!r} (use .csv or .rct)")


def load_trajectory(path) -> Trajectory:
    path = Path(path)
    if not path.exists():
        raise DataError(f"trajectory file not found: {path}")
    if path.suffix == ".csv":
        return _load_csv(path)
    if path.suffix == BINARY_EXT:
        return _load_binary(path)
    raise ConfigError(f"unknown trajectory extension {path.suffix!r} (use .csv or .rct)")


def _save_csv(traj: Trajectory, path: Path) -> None:
    t = np.arange(traj.n_frames) * traj.frame_dt
    header = "t," + ",".join(f"c{i}" for i in range(traj.dim))
    body = np.column_stack([t, traj.frames])

    def write(fh):
        fh.write(header.encode() + b"\n")
        np.savetxt(fh, body, fmt="%.17g", delimiter=",")

    _atomic_write(path, write)


def _load_csv(path: Path) -> Trajectory:
    with open(path, "r") as fh:
        header = fh.readline().strip()
        cols = header.split(",")
        if not cols or cols[0] != "t" or any(c != f"c{i}" for i, c in enumerate(cols[1:])):
            raise DataError(f"{path}: header mismatch at line 1: {header!r}")
        first = fh.readline()
        if not first.strip():
            raise DataError(f"{path}: no frames")
        try:
            body = np.loadtxt([first] + fh.readlines(), delimiter=",", ndmin=2)
        except ValueError as exc:
            raise DataError(f"{path}: malformed CSV body: {exc}") from exc
    if body.size == 0:
        raise DataError(f"{path}: no frames")
    if body.shape[1] != len(cols):
        raise DataError(f"{path}: expected {len(cols)} columns, found {body.shape[1]}")
    frames = body[:, 1:]
    if not np.all(np.isfinite(frames)):
        row = int(np.argwhere(~np.isfinite(frames))[0][0])
        raise DataError(f"{path}: non-finite value at line {row + 2}")
    times = body[:, 0]
    frame_dt = float(times[1] - times[0]) if body.shape[0] > 1 else 1.0
    if frame_dt <= 0:
        raise DataError(f"{path}: non-increasing time column")
    return Trajectory(frames, frame_dt=frame_dt, metadata={"source": str(path)})


def _save_binary(traj: Trajectory, path: Path) -> None:
    header = MAGIC + struct.pack("<IQId", BINARY_VERSION, traj.n_frames, traj.dim,
                                 traj.frame_dt)

    def write(fh):
        fh.write(header)
        fh.write(np.ascontiguousarray(traj.frames, dtype="<f8").tobytes())

    _atomic_write(path, write)


def _load_binary(path: Path) -> Trajectory:
    raw = path.read_bytes()
    header_size = 4 + struct.calcsize("<IQId")
    if len(raw) < header_size:
        raise DataError(f"{path}: truncated header ({len(raw)} bytes)")
    if raw[:4] != MAGIC:
        raise DataError(f"{path}: bad magic {raw[:4]!r} at byte 0")
    version, n_frames, dim, frame_dt = struct.unpack("<IQId", raw[4:header_size])
    if version != BINARY_VERSION:
        raise DataError(f"{path}: unsupported format version {version}")
    if n_frames < 1:
        raise DataError(f"{path}: file declares zero frames")
    expected = header_size + 8 * n_frames * dim
    if len(raw) != expected:
        raise DataError(
            f"{path}: truncated payload at byte {len(raw)} (expected {expected})"
        )
    frames = np.frombuffer(raw[header_size:], dtype="<f8").reshape(n_frames, dim)
    if not np.all(np.isfinite(frames)):
        t = int(np.argwhere(~np.isfinite(frames))[0][0])
        byte = header_size + 8 * t * dim
        raise DataError(f"{path}: non-finite value near byte {byte}")
    return Trajectory(frames.astype(np.float64), frame_dt=frame_dt,
                      metadata={"source": str(path)})
