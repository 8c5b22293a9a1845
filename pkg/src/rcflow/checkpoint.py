"""Checkpoint bundle and its canonical JSON serialization.

Parameters are stored as named segments with shapes and row-major float64
values. Serialization is canonical (sorted keys, fixed indentation, shortest
round-trip float representation), so saving a loaded checkpoint reproduces
the file byte for byte and loaded models evaluate bitwise identically.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .flow import CouplingBlock, FlowModel
from .nets import Mlp, MlpSpec
from .potential import GmmPotential, build_grid
from .tica import TicaModel
from .training import TrainConfig

FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    """Everything needed to evaluate and continue a trained model."""

    config: TrainConfig
    tica: TicaModel | None
    flow: FlowModel
    potential: GmmPotential
    history: list[dict]
    tau_phys: float
    frame_dt: float

    @property
    def completed_joint_epochs(self) -> int:
        return sum(1 for h in self.history if h.get("phase") == "joint")


def _array_to_list(arr: np.ndarray) -> list:
    return np.asarray(arr, dtype=np.float64).tolist()


def _encode_mlp(mlp: Mlp) -> dict:
    segments = []
    for name, tensor in mlp.parameters():
        segments.append({
            "name": name,
            "shape": list(tensor.data.shape),
            "values": tensor.data.ravel().tolist(),
        })
    return {"spec": mlp.spec.to_dict(), "segments": segments}


def _decode_mlp(payload: dict) -> Mlp:
    spec = MlpSpec.from_dict(payload["spec"])
    mlp = Mlp.initialize(spec, np.random.default_rng(0))
    by_name = {seg["name"]: seg for seg in payload["segments"]}
    for name, tensor in mlp.parameters():
        seg = by_name[name]
        tensor.data = np.asarray(seg["values"], dtype=np.float64).reshape(seg["shape"])
    return mlp


def _encode_flow(flow: FlowModel) -> dict:
    return {
        "dim": flow.dim,
        "rc_dim": flow.rc_dim,
        "blocks": [
            {
                "mask": [bool(b) for b in block.mask],
                "scale_bound": block.scale_bound,
                "scale_net": _encode_mlp(block.scale_net),
                "shift_net": _encode_mlp(block.shift_net),
            }
            for block in flow.blocks
        ],
    }


def _decode_flow(payload: dict) -> FlowModel:
    blocks = [
        CouplingBlock(
            mask=np.asarray(item["mask"], dtype=bool),
            scale_net=_decode_mlp(item["scale_net"]),
            shift_net=_decode_mlp(item["shift_net"]),
            scale_bound=float(item["scale_bound"]),
        )
        for item in payload["blocks"]
    ]
    return FlowModel(blocks, int(payload["dim"]), int(payload["rc_dim"]))


def _encode_potential(potential: GmmPotential) -> dict:
    expected = build_grid(potential.lb, potential.ub, potential.n_per_axis)
    if not np.array_equal(expected, potential.centers):
        raise ConfigError(
            "mixture centers do not form the declared grid; such a model "
            "cannot be represented in the checkpoint format")
    return {
        "lb": _array_to_list(potential.lb),
        "ub": _array_to_list(potential.ub),
        "n_per_axis": potential.n_per_axis,
        "sigma_floor": potential.sigma_floor,
        "weight_net": _encode_mlp(potential.weight_net),
        "sigma_net": _encode_mlp(potential.sigma_net),
    }


def _decode_potential(payload: dict) -> GmmPotential:
    lb = np.asarray(payload["lb"], dtype=np.float64)
    ub = np.asarray(payload["ub"], dtype=np.float64)
    centers = build_grid(lb, ub, int(payload["n_per_axis"]))
    return GmmPotential(
        centers,
        weight_net=_decode_mlp(payload["weight_net"]),
        sigma_net=_decode_mlp(payload["sigma_net"]),
        lb=lb, ub=ub, n_per_axis=int(payload["n_per_axis"]),
        sigma_floor=float(payload["sigma_floor"]),
    )


def _encode_tica(model: TicaModel | None) -> dict | None:
    if model is None:
        return None
    return {
        "mean": _array_to_list(model.mean),
        "transform": _array_to_list(model.transform),
        "autocorrelations": _array_to_list(model.autocorrelations),
        "lag_steps": model.lag_steps,
        "reconstruction": None if model.reconstruction is None
        else _array_to_list(model.reconstruction),
    }


def _decode_tica(payload: dict | None) -> TicaModel | None:
    if payload is None:
        return None
    return TicaModel(
        mean=np.asarray(payload["mean"], dtype=np.float64),
        transform=np.asarray(payload["transform"], dtype=np.float64),
        autocorrelations=np.asarray(payload["autocorrelations"], dtype=np.float64),
        lag_steps=int(payload["lag_steps"]),
        reconstruction=None if payload["reconstruction"] is None
        else np.asarray(payload["reconstruction"], dtype=np.float64),
    )


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    payload = {
        "format_version": FORMAT_VERSION,
        "config": ckpt.config.to_dict(),
        "tica": _encode_tica(ckpt.tica),
        "flow": _encode_flow(ckpt.flow),
        "potential": _encode_potential(ckpt.potential),
        "history": ckpt.history,
        "tau_phys": ckpt.tau_phys,
        "frame_dt": ckpt.frame_dt,
    }
    text = json.dumps(payload, sort_keys=True, indent=1)
    path = Path(path)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent or Path("."), suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
            fh.write("\n")
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint not found: {path}")
    try:
        payload = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not valid JSON: {exc}") from exc
    version = payload.get("format_version")
    if version != FORMAT_VERSION:
        raise ConfigError(f"{path}: unsupported checkpoint version {version!r}")
    return Checkpoint(
        config=TrainConfig.from_dict(payload["config"]),
        tica=_decode_tica(payload["tica"]),
        flow=_decode_flow(payload["flow"]),
        potential=_decode_potential(payload["potential"]),
        history=list(payload["history"]),
        tau_phys=float(payload["tau_phys"]),
        frame_dt=float(payload["frame_dt"]),
    )
