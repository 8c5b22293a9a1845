"""Invertible coordinate transform built from affine coupling blocks.

The map sends a D-dimensional state to a d-dimensional reaction coordinate
plus (D-d) noise coordinates, with the log-Jacobian-determinant available as
the sum of the per-block scale outputs. Blocks alternate which half of the
coordinates passes through unchanged, so every coordinate is transformed by
half of the blocks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, NumericError
from .nets import Mlp, MlpSpec, ParamVector

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class CouplingBlock:
    """One affine coupling layer.

    ``mask`` marks coordinates that pass through unchanged and condition the
    shift/scale networks; the complement is transformed. The raw scale-network
    output is squashed by tanh and multiplied by ``scale_bound`` before
    exponentiation, which keeps log-determinants bounded during training.
    """

    mask: np.ndarray
    scale_net: Mlp
    shift_net: Mlp
    scale_bound: float = 2.0

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        n_pass = int(self.mask.sum())
        n_trans = int((~self.mask).sum())
        if n_pass == 0 or n_trans == 0:
            raise ConfigError("coupling mask must keep and transform at least one coordinate")
        for net, label in ((self.scale_net, "scale"), (self.shift_net, "shift")):
            if net.spec.input_dim != n_pass or net.spec.output_dim != n_trans:
                raise ConfigError(
                    f"{label} net maps {net.spec.input_dim}->{net.spec.output_dim}, "
                    f"mask requires {n_pass}->{n_trans}"
                )
        if self.scale_bound <= 0:
            raise ConfigError("scale_bound must be positive")
        self._idx_pass = np.flatnonzero(self.mask)
        self._idx_trans = np.flatnonzero(~self.mask)
        self._perm = np.argsort(np.concatenate([self._idx_pass, self._idx_trans]))

    def scale_and_shift(self, x_pass: Tensor) -> tuple[Tensor, Tensor]:
        s = self.scale_net.forward(x_pass) * self.scale_bound
        t = self.shift_net.forward(x_pass)
        return s, t


class FlowModel:
    """Stack of coupling blocks splitting R^D into (R^d, R^(D-d)).

    The reaction coordinate is the first ``d`` output components; evaluation
    is pure, so a constructed model is safe to use from concurrent readers.
    An empty block list gives the identity map, which degenerate test setups
    (including d == D) rely on.
    """

    def __init__(self, blocks: list[CouplingBlock], dim: int, rc_dim: int):
        if not (1 <= rc_dim <= dim):
            raise ConfigError(f"rc_dim {rc_dim} must lie in [1, {dim}]")
        for i, block in enumerate(blocks):
            if block.mask.size != dim:
                raise ConfigError(f"block {i} mask has size {block.mask.size}, expected {dim}")
        self.blocks = list(blocks)
        self.dim = dim
        self.rc_dim = rc_dim

    @property
    def noise_dim(self) -> int:
        return self.dim - self.rc_dim

    def parameters(self) -> ParamVector:
        segments = []
        for i, block in enumerate(self.blocks):
            for name, t in block.scale_net.parameters():
                segments.append((f"block{i:02d}.scale.{name}", t))
            for name, t in block.shift_net.parameters():
                segments.append((f"block{i:02d}.shift.{name}", t))
        return ParamVector(segments)


def build_flow(
    dim: int,
    rc_dim: int,
    n_blocks: int = 12,
    hidden_widths: tuple[int, ...] = (128, 128, 128),
    scale_bound: float = 2.0,
    rng: np.random.Generator | None = None,
) -> FlowModel:
    """Construct a near-identity flow with alternating half masks."""
    if dim < 2:
        raise ConfigError("a coupling flow needs dim >= 2")
    if rc_dim >= dim:
        raise ConfigError("rc_dim must be smaller than dim")
    rng = rng if rng is not None else np.random.default_rng()
    first_half = (dim + 1) // 2
    blocks = []
    for i in range(n_blocks):
        mask = np.zeros(dim, dtype=bool)
        if i % 2 == 0:
            mask[first_half:] = True  # transform the first half
        else:
            mask[:first_half] = True  # transform the rest
        n_pass = int(mask.sum())
        n_trans = dim - n_pass
        scale_spec = MlpSpec(n_pass, n_trans, hidden_widths, output_activation="bounded")
        shift_spec = MlpSpec(n_pass, n_trans, hidden_widths, output_activation="identity")
        blocks.append(
            CouplingBlock(
                mask=mask,
                scale_net=Mlp.initialize(scale_spec, rng),
                shift_net=Mlp.initialize(shift_spec, rng),
                scale_bound=scale_bound,
            )
        )
    return FlowModel(blocks, dim, rc_dim)


def _forward_tensor(model: FlowModel, x: Tensor) -> tuple[Tensor, Tensor]:
    """Run all blocks; returns (output, logdet) as graph tensors."""
    y = x
    logdet = Tensor(np.zeros(x.data.shape[0]))
    for i, block in enumerate(model.blocks):
        y_pass = ad.gather_cols(y, block._idx_pass)
        y_trans = ad.gather_cols(y, block._idx_trans)
        s, t = block.scale_and_shift(y_pass)
        y_trans = y_trans * ad.exp(s) + t
        y = ad.permute_cols(ad.concat([y_pass, y_trans], axis=1), block._perm)
        logdet = logdet + s.sum(axis=1)
        if not np.all(np.isfinite(y.data)):
            raise NumericError(f"non-finite value after coupling block {i}")
    return y, logdet


def flow_forward(model: FlowModel, x) -> tuple[Tensor, Tensor, Tensor]:
    """Map states to (rc, noise, logdet); accepts (B, D) tensors or arrays.

    ``logdet`` is the log of the absolute Jacobian determinant of the full
    map, which for coupling blocks is the sum of all scale outputs.
    """
    t = x if isinstance(x, Tensor) else Tensor(np.atleast_2d(np.asarray(x, dtype=np.float64)))
    if t.data.ndim != 2 or t.data.shape[1] != model.dim:
        raise ConfigError(f"expected (batch, {model.dim}) input, got {t.data.shape}")
    if not np.all(np.isfinite(t.data)):
        raise NumericError("non-finite entries in flow input")
    y, logdet = _forward_tensor(model, t)
    z = ad.gather_cols(y, np.arange(model.rc_dim))
    v = ad.gather_cols(y, np.arange(model.rc_dim, model.dim))
    return z, v, logdet


def rc_project(model: FlowModel, x) -> Tensor:
    """Reaction-coordinate projection: the first ``rc_dim`` flow outputs."""
    z, _, _ = flow_forward(model, x)
    return z


def _net_eval(net: Mlp, x: np.ndarray) -> np.ndarray:
    with ad.no_grad():
        return net.forward(Tensor(x)).data


def flow_inverse(model: FlowModel, z: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Invert the flow: reconstruct states from (rc, noise) pairs."""
    x, _ = flow_inverse_with_logdet(model, z, v)
    return x


def flow_inverse_with_logdet(model: FlowModel, z, v) -> tuple[np.ndarray, np.ndarray]:
    """Inverse map plus the log-|det Jacobian| of the inverse.

    The returned logdet is the negative of the forward logdet at the
    reconstructed point; both are accumulated from the same scale outputs.
    """
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        v = v.reshape(z.shape[0], 0)
    v = np.atleast_2d(v)
    if z.shape[1] != model.rc_dim or v.shape[1] != model.noise_dim:
        raise ConfigError(
            f"expected rc dim {model.rc_dim} and noise dim {model.noise_dim}, "
            f"got {z.shape[1]} and {v.shape[1]}"
        )
    if not (np.all(np.isfinite(z)) and np.all(np.isfinite(v))):
        raise NumericError("non-finite entries in inverse input")
    y = np.concatenate([z, v], axis=1)
    logdet = np.zeros(y.shape[0])
    for block in reversed(model.blocks):
        y_pass = y[:, block._idx_pass]
        y_trans = y[:, block._idx_trans]
        s = _net_eval(block.scale_net, y_pass) * block.scale_bound
        t = _net_eval(block.shift_net, y_pass)
        x_trans = (y_trans - t) * np.exp(-s)
        out = np.empty_like(y)
        out[:, block._idx_pass] = y_pass
        out[:, block._idx_trans] = x_trans
        y = out
        logdet -= s.sum(axis=1)
    return y, logdet


def log_noise_factor(model: FlowModel, x) -> Tensor:
    """Log of the noise-density factor: log N(v | 0, I) + log|det dF/dx|.

    This is the density the conditional distribution of the state over a
    reaction-coordinate level set carries in the transformed coordinates.
    """
    _, v, logdet = flow_forward(model, x)
    n_noise = model.noise_dim
    log_gauss = ad.square(v).sum(axis=1) * (-0.5) - 0.5 * n_noise * LOG_2PI
    return log_gauss + logdet
