"""Multilayer perceptrons, the trainable-parameter bundle, and Adam.

Hidden activations are tanh throughout; the choice is recorded in every
checkpoint so it stays auditable. Output activations cover the three cases
needed by the model: plain affine output, exponential output for strictly
positive quantities, and a tanh-bounded output for coupling-scale networks.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, NumericError

HIDDEN_ACTIVATIONS = ("tanh",)
OUTPUT_ACTIVATIONS = ("identity", "exponential", "bounded")


@dataclass(frozen=True)
class MlpSpec:
    """Architecture of one fully connected network."""

    input_dim: int
    output_dim: int
    hidden_widths: tuple[int, ...]
    hidden_activation: str = "tanh"
    output_activation: str = "identity"

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        if self.input_dim < 1 or self.output_dim < 1:
            raise ConfigError("MlpSpec dimensions must be positive")
        if not self.hidden_widths or any(w < 1 for w in self.hidden_widths):
            raise ConfigError("MlpSpec needs at least one positive hidden width")
        if self.hidden_activation not in HIDDEN_ACTIVATIONS:
            raise ConfigError(f"unsupported hidden activation {self.hidden_activation!r}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ConfigError(f"unsupported output activation {self.output_activation!r}")

    @property
    def layer_dims(self) -> list[tuple[int, int]]:
        dims = [self.input_dim, *self.hidden_widths, self.output_dim]
        return list(zip(dims[:-1], dims[1:]))

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "output_dim": self.output_dim,
            "hidden_widths": list(self.hidden_widths),
            "hidden_activation": self.hidden_activation,
            "output_activation": self.output_activation,
        }

    @staticmethod
    def from_dict(d: dict) -> "MlpSpec":
        return MlpSpec(
            input_dim=int(d["input_dim"]),
            output_dim=int(d["output_dim"]),
            hidden_widths=tuple(d["hidden_widths"]),
            hidden_activation=d["hidden_activation"],
            output_activation=d["output_activation"],
        )


class Mlp:
    """A fully connected network whose weights are graph leaves."""

    def __init__(self, spec: MlpSpec, weights: list[Tensor], biases: list[Tensor]):
        self.spec = spec
        self.weights = weights
        self.biases = biases
        for (n_in, n_out), w, b in zip(spec.layer_dims, weights, biases):
            if w.data.shape != (n_in, n_out) or b.data.shape != (n_out,):
                raise ConfigError(
                    f"parameter shapes {w.data.shape}/{b.data.shape} do not match "
                    f"layer ({n_in}, {n_out})"
                )

    @classmethod
    def initialize(cls, spec: MlpSpec, rng: np.random.Generator, final_scale: float = 0.01) -> "Mlp":
        """Glorot-uniform weights, zero biases, final layer shrunk by ``final_scale``.

        The shrunken last layer keeps freshly built coupling blocks close to
        the identity, which the flat-potential pre-training phase relies on.
        """
        weights, biases = [], []
        n_layers = len(spec.layer_dims)
        for i, (n_in, n_out) in enumerate(spec.layer_dims):
            bound = np.sqrt(6.0 / (n_in + n_out))
            w = rng.uniform(-bound, bound, size=(n_in, n_out))
            if i == n_layers - 1:
                w *= final_scale
            weights.append(Tensor(w, requires_grad=True))
            biases.append(Tensor(np.zeros(n_out), requires_grad=True))
        return cls(spec, weights, biases)

    def forward(self, x: Tensor, raw_output: bool = False) -> Tensor:
        """Apply the network; ``raw_output`` skips the output activation.

        The raw (pre-activation) output of an exponential-output net is its
        log, which callers use to build log-domain quantities without an
        exp/log round trip.
        """
        h = x if isinstance(x, Tensor) else Tensor(x)
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = ad.linear(h, w, b)
            if i < last:
                h = ad.tanh(h)
        if raw_output or self.spec.output_activation == "identity":
            return h
        if self.spec.output_activation == "exponential":
            return ad.exp(h)
        return ad.tanh(h)  # "bounded": squashed into (-1, 1)

    __call__ = forward

    def parameters(self) -> Iterator[tuple[str, Tensor]]:
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            yield f"layer{i}.weight", w
            yield f"layer{i}.bias", b


def mlp_forward(mlp: Mlp, x) -> Tensor:
    """Functional wrapper around :meth:`Mlp.forward` (batched or single input)."""
    t = x if isinstance(x, Tensor) else Tensor(x)
    single = t.ndim == 1
    if single:
        t = ad.reshape(t, (1, t.data.shape[0]))
    if t.data.shape[1] != mlp.spec.input_dim:
        raise ConfigError(
            f"input width {t.data.shape[1]} does not match input_dim {mlp.spec.input_dim}"
        )
    out = mlp.forward(t)
    return ad.reshape(out, (mlp.spec.output_dim,)) if single else out


class ParamVector:
    """Named, ordered bundle of trainable leaf tensors.

    Presents the concatenation of all segments as one flat float64 vector,
    which is the representation the optimizer and the checkpoint format use.
    """

    def __init__(self, segments: list[tuple[str, Tensor]]):
        names = [name for name, _ in segments]
        if len(set(names)) != len(names):
            raise ConfigError("duplicate parameter segment names")
        self._segments = list(segments)
        self._sizes = [t.data.size for _, t in segments]
        self._offsets = np.concatenate([[0], np.cumsum(self._sizes)]).astype(int)

    @property
    def size(self) -> int:
        return int(self._offsets[-1])

    def segments(self) -> list[tuple[str, Tensor]]:
        return list(self._segments)

    def names(self) -> list[str]:
        return [name for name, _ in self._segments]

    def tensor(self, name: str) -> Tensor:
        for seg_name, t in self._segments:
            if seg_name == name:
                return t
        raise KeyError(name)

    def flat(self) -> np.ndarray:
        return np.concatenate([t.data.ravel() for _, t in self._segments])

    def flat_grad(self) -> np.ndarray:
        parts = []
        for _, t in self._segments:
            if t.grad is None:
                parts.append(np.zeros(t.data.size))
            else:
                parts.append(t.grad.ravel())
        return np.concatenate(parts)

    def set_flat(self, values: np.ndarray) -> None:
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (self.size,):
            raise ConfigError(f"expected {self.size} values, got {values.shape}")
        for (_, t), lo, hi in zip(self._segments, self._offsets[:-1], self._offsets[1:]):
            t.data = values[lo:hi].reshape(t.data.shape).copy()

    def zero_grad(self) -> None:
        for _, t in self._segments:
            t.grad = None

    @staticmethod
    def concat(*groups: "ParamVector") -> "ParamVector":
        segments = []
        for g in groups:
            segments.extend(g.segments())
        return ParamVector(segments)


def gradient(loss: Tensor, params: ParamVector) -> np.ndarray:
    """Gradient of a scalar loss with respect to every parameter.

    Deterministic for a fixed graph: adjoints are accumulated in reverse
    topological order. Raises on a non-finite loss before any backward work.
    """
    value = float(loss.data)
    if not np.isfinite(value):
        raise NumericError(f"loss is not finite: {value:g}")
    params.zero_grad()
    loss.backward()
    grads = params.flat_grad()
    return grads


@dataclass
class AdamState:
    """Optimizer state for one flat parameter vector."""

    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def initialize(cls, n_params: int, learning_rate: float = 1e-3, **kwargs) -> "AdamState":
        return cls(
            first_moment=np.zeros(n_params),
            second_moment=np.zeros(n_params),
            learning_rate=learning_rate,
            **kwargs,
        )


def adam_step(state: AdamState, values: np.ndarray, grads: np.ndarray) -> tuple[AdamState, np.ndarray]:
    """One bias-corrected Adam update; returns the new state and values."""
    grads = np.asarray(grads, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if grads.shape != values.shape or grads.shape != state.first_moment.shape:
        raise ConfigError("parameter, gradient, and moment shapes disagree")
    if not np.all(np.isfinite(grads)):
        bad = int(np.flatnonzero(~np.isfinite(grads))[0])
        raise NumericError(f"non-finite gradient entry at index {bad}")
    t = state.step_count + 1
    m = state.beta1 * state.first_moment + (1.0 - state.beta1) * grads
    v = state.beta2 * state.second_moment + (1.0 - state.beta2) * grads * grads
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new_values = values - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    new_state = replace(state, first_moment=m, second_moment=v, step_count=t)
    return new_state, new_values
