"""A small multilayer perceptron with hand-written reverse mode.

The network maps a context vector to ``(log a, log b)``.  Hidden layers
use a leaky ReLU; the output layer is affine, since log-parameters need
no positivity link.

Parameters live in one flat float64 vector.  For each layer in order the
weight matrix (shape ``(fan_out, fan_in)``, row-major) is followed by its
bias vector.  The same layout is used for gradients and for the text
file written by :func:`save`.
"""

from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

__all__ = [
    "MlpConfig",
    "MlpParams",
    "Tape",
    "TapeReuseError",
    "NonFiniteGradientError",
    "init",
    "forward",
    "backward",
    "sgd_step",
    "save",
    "load",
]

FILE_MAGIC = "stablekuma-mlp"
FILE_VERSION = 1


class TapeReuseError(RuntimeError):
    """A tape was passed to :func:`backward` a second time."""


class NonFiniteGradientError(FloatingPointError):
    """A gradient contained nan or inf and was not applied."""


@dataclass(frozen=True)
class MlpConfig:
    input_dim: int
    hidden_widths: Tuple[int, ...] = (32, 32, 32)
    output_dim: int = 2
    leaky_slope: float = 0.01

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        dims = (self.input_dim, *self.hidden_widths, self.output_dim)
        if any(int(d) != d or d < 1 for d in dims):
            raise ValueError(f"MlpConfig: all dimensions must be >= 1, got {dims}")
        if not 0 <= self.leaky_slope <= 1:
            raise ValueError("MlpConfig: leaky_slope must lie in [0, 1]")

    @property
    def layer_dims(self) -> List[Tuple[int, int]]:
        """``(fan_in, fan_out)`` for every affine layer."""
        dims = (self.input_dim, *self.hidden_widths, self.output_dim)
        return list(zip(dims[:-1], dims[1:]))

    @property
    def n_params(self) -> int:
        return sum(i * o + o for i, o in self.layer_dims)


@dataclass
class MlpParams:
    """Flat parameter vector plus per-layer ``(W, b)`` views into it."""

    config: MlpConfig
    flat: np.ndarray

    def __post_init__(self):
        self.flat = np.ascontiguousarray(self.flat, dtype=np.float64)
        if self.flat.shape != (self.config.n_params,):
            raise ValueError(f"MlpParams: expected {self.config.n_params} values, got shape {self.flat.shape}")
        if not np.all(np.isfinite(self.flat)):
            raise ValueError("MlpParams: parameters must be finite")

    @property
    def layers(self) -> List[Tuple[np.ndarray, np.ndarray]]:
        return _views(self.config, self.flat)

    def copy(self) -> "MlpParams":
        return MlpParams(self.config, self.flat.copy())


def _views(config, flat):
    out = []
    pos = 0
    for fan_in, fan_out in config.layer_dims:
        w = flat[pos:pos + fan_in * fan_out].reshape(fan_out, fan_in)
        pos += fan_in * fan_out
        b = flat[pos:pos + fan_out]
        pos += fan_out
        out.append((w, b))
    return out


@dataclass
class Tape:
    """Inputs to each layer and hidden pre-activations from one forward pass."""

    layer_inputs: List[np.ndarray]
    pre_activations: List[np.ndarray]
    used: bool = field(default=False)


def init(config: MlpConfig, rng: np.random.Generator, zero_output: bool = True) -> MlpParams:
    """He initialization: ``W ~ N(0, 2 / fan_in)``, zero biases.

    With ``zero_output`` the output layer's weights are zero as well, so the
    initial output is exactly ``(0, 0)``, i.e. ``a = b = 1`` (uniform), for
    every input.  Hidden weights are drawn either way, so the random stream
    does not depend on the flag.
    """
    flat = np.zeros(config.n_params)
    params = MlpParams(config, flat)
    layers = params.layers
    for i, (w, b) in enumerate(layers):
        w[...] = rng.normal(0.0, np.sqrt(2.0 / w.shape[1]), size=w.shape)
        if zero_output and i == len(layers) - 1:
            w[...] = 0.0
    return params


def _leaky(z, slope):
    # max(z, slope * z) is the leaky ReLU for 0 <= slope <= 1
    return np.maximum(z, slope * z)


def forward(params: MlpParams, inputs) -> Tuple[np.ndarray, Tape]:
    """Encode a batch of rows; returns ``(outputs, tape)``.

    ``outputs[:, 0]`` is ``log a`` and ``outputs[:, 1]`` is ``log b`` when
    ``output_dim == 2``.
    """
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.config.input_dim:
        raise ValueError(f"forward: expected inputs of shape (n, {params.config.input_dim}), got {x.shape}")
    slope = params.config.leaky_slope
    layers = params.layers
    layer_inputs, pre = [], []
    h = x
    for i, (w, b) in enumerate(layers):
        layer_inputs.append(h)
        z = h @ w.T + b
        if i < len(layers) - 1:
            pre.append(z)
            h = _leaky(z, slope)
        else:
            h = z
    return h, Tape(layer_inputs, pre)


def backward(params: MlpParams, tape: Tape, output_grads) -> np.ndarray:
    """Gradient of ``sum(output_grads * outputs)`` w.r.t. the flat parameters.

    Each tape is good for exactly one call.
    """
    if tape.used:
        raise TapeReuseError("backward: tape was already consumed")
    tape.used = True
    g = np.asarray(output_grads, dtype=np.float64)
    layers = params.layers
    if g.shape != (tape.layer_inputs[0].shape[0], params.config.output_dim):
        raise ValueError(f"backward: output_grads has shape {g.shape}")
    grads = np.zeros_like(params.flat)
    gviews = _views(params.config, grads)
    slope = params.config.leaky_slope
    for i in reversed(range(len(layers))):
        w, _ = layers[i]
        gw, gb = gviews[i]
        gw[...] = g.T @ tape.layer_inputs[i]
        gb[...] = g.sum(axis=0)
        if i > 0:
            g = g @ w
            g = np.where(tape.pre_activations[i - 1] > 0, g, slope * g)
    return grads


def sgd_step(params: MlpParams, grads, learning_rate: float) -> MlpParams:
    """Gradient ascent ``phi + lr * grad``; returns a new parameter set."""
    grads = np.asarray(grads, dtype=np.float64)
    if grads.shape != params.flat.shape:
        raise ValueError(f"sgd_step: gradient shape {grads.shape} does not match {params.flat.shape}")
    if not np.all(np.isfinite(grads)):
        raise NonFiniteGradientError("sgd_step: gradient contains non-finite values")
    return MlpParams(params.config, params.flat + learning_rate * grads)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def _header(config: MlpConfig) -> str:
    hidden = ",".join(str(w) for w in config.hidden_widths) or "-"
    return (
        f"# {FILE_MAGIC} v{FILE_VERSION} input_dim={config.input_dim} hidden={hidden} "
        f"output_dim={config.output_dim} leaky_slope={config.leaky_slope!r} n_params={config.n_params}"
    )


def save(params: MlpParams, path) -> None:
    """Write a one-line header followed by one parameter per line (``%.17g``)."""
    with open(path, "w") as fh:
        fh.write(_header(params.config) + "\n")
        np.savetxt(fh, params.flat, fmt="%.17g")


def load(path) -> MlpParams:
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) < 3 or header[1] != FILE_MAGIC or header[2] != f"v{FILE_VERSION}":
            raise ValueError(f"load: {path} is not a {FILE_MAGIC} v{FILE_VERSION} file")
        fields = dict(item.split("=", 1) for item in header[3:])
        hidden = fields["hidden"]
        config = MlpConfig(
            input_dim=int(fields["input_dim"]),
            hidden_widths=() if hidden == "-" else tuple(int(w) for w in hidden.split(",")),
            output_dim=int(fields["output_dim"]),
            leaky_slope=float(fields["leaky_slope"]),
        )
        flat = np.loadtxt(fh, dtype=np.float64, ndmin=1)
    if int(fields["n_params"]) != flat.size:
        raise ValueError(f"load: header declares {fields['n_params']} parameters, file holds {flat.size}")
    return MlpParams(config, flat)

