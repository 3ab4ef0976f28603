"""Coordinate MLPs with sine, ReLU or tanh hidden activations.

A network maps ``in_dim`` coordinates to ``out_dim`` signal values through
``hidden_layers`` equally wide hidden layers and one affine output layer.
Every sine layer computes ``sin(omega0 * (W x + b))``. Hidden sine weights are
drawn with their bound divided by ``omega0``, so at initialization the layers
see the same pre-activation statistics as ``sin(W x + b)`` with
``W ~ U(-sqrt(6/n), sqrt(6/n))``; keeping ``omega0`` explicit scales the ADAM
step size on those layers, which is what makes sine networks fit quickly.
Setting ``omega0 = 1`` gives the unscaled form exactly.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .exceptions import ShapeError

__all__ = [
    "Variant",
    "NetworkSpec",
    "NetworkParams",
    "init_params",
    "forward",
    "forward_blocked",
    "forward_chunked",
    "param_count",
]


class Variant(enum.IntEnum):
    """Activation layout. Integer values are the container codes."""

    SIREN = 0
    SIREN_RELU_LAST = 1
    MLP_RELU = 2
    MLP_TANH = 3
    HYBRID_SIREN_FIRST = 4

    @classmethod
    def parse(cls, value) -> "Variant":
        if isinstance(value, cls):
            return value
        if isinstance(value, str):
            key = value.lower().replace("_", "-")
            try:
                return _VARIANT_NAMES[key]
            except KeyError:
                raise ValueError(
                    f"unknown variant {value!r}; choose from {sorted(_VARIANT_NAMES)}"
                ) from None
        return cls(int(value))

    @property
    def label(self) -> str:
        return _VARIANT_LABELS[self]

    def hidden_activations(self, n_hidden: int) -> List[str]:
        if self in (Variant.SIREN, Variant.SIREN_RELU_LAST):
            return ["sine"] * n_hidden
        if self is Variant.HYBRID_SIREN_FIRST:
            return ["sine"] + ["relu"] * (n_hidden - 1)
        if self is Variant.MLP_RELU:
            return ["relu"] * n_hidden
        return ["tanh"] * n_hidden

    @property
    def output_activation(self) -> Optional[str]:
        return "relu" if self is Variant.SIREN_RELU_LAST else None


_VARIANT_LABELS = {
    Variant.SIREN: "siren",
    Variant.SIREN_RELU_LAST: "siren-relu",
    Variant.MLP_RELU: "mlp-relu",
    Variant.MLP_TANH: "mlp-tanh",
    Variant.HYBRID_SIREN_FIRST: "mlp-siren",
}
_VARIANT_NAMES = {label: v for v, label in _VARIANT_LABELS.items()}
_VARIANT_NAMES.update({"relu": Variant.MLP_RELU, "tanh": Variant.MLP_TANH, "hybrid": Variant.HYBRID_SIREN_FIRST})


@dataclass(frozen=True)
class NetworkSpec:
    in_dim: int
    out_dim: int
    hidden_layers: int = 3
    hidden_units: int = 256
    variant: Variant = Variant.SIREN
    omega0: float = 30.0

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant.parse(self.variant))
        for name in ("in_dim", "out_dim", "hidden_layers", "hidden_units"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
            object.__setattr__(self, name, int(value))
        object.__setattr__(self, "omega0", float(self.omega0))

    def layer_shapes(self) -> List[Tuple[int, int]]:
        """``(fan_out, fan_in)`` for every affine layer, input to output."""
        widths = [self.in_dim] + [self.hidden_units] * self.hidden_layers + [self.out_dim]
        return [(widths[i + 1], widths[i]) for i in range(len(widths) - 1)]


@dataclass
class NetworkParams:
    """Weights ``W_i`` with shape ``(fan_out, fan_in)`` and biases ``b_i``."""

    weights: List[np.ndarray]
    biases: List[np.ndarray]

    def __iter__(self):
        return iter(zip(self.weights, self.biases))

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def flat(self) -> np.ndarray:
        """All parameters in storage order: per layer, W row-major then b."""
        parts = []
        for w, b in self:
            parts.append(w.reshape(-1))
            parts.append(b.reshape(-1))
        return np.concatenate(parts)

    @classmethod
    def from_flat(cls, spec: NetworkSpec, vector: np.ndarray) -> "NetworkParams":
        vector = np.asarray(vector)
        if vector.ndim != 1 or vector.size != param_count(spec):
            raise ShapeError(
                f"expected {param_count(spec)} parameters, got array of shape {vector.shape}"
            )
        weights, biases = [], []
        pos = 0
        for fan_out, fan_in in spec.layer_shapes():
            weights.append(vector[pos:pos + fan_out * fan_in].reshape(fan_out, fan_in))
            pos += fan_out * fan_in
            biases.append(vector[pos:pos + fan_out])
            pos += fan_out
        return cls(weights, biases)

    def copy(self) -> "NetworkParams":
        return NetworkParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def check(self, spec: NetworkSpec) -> None:
        shapes = spec.layer_shapes()
        if len(shapes) != self.n_layers:
            raise ShapeError(f"spec has {len(shapes)} layers, params have {self.n_layers}")
        for i, ((w, b), (fan_out, fan_in)) in enumerate(zip(self, shapes)):
            if w.shape != (fan_out, fan_in) or b.shape != (fan_out,):
                raise ShapeError(
                    f"layer {i}: expected W{(fan_out, fan_in)} b({fan_out},), "
                    f"got W{w.shape} b{b.shape}"
                )


def param_count(spec: NetworkSpec) -> int:
    return sum(fan_out * fan_in + fan_out for fan_out, fan_in in spec.layer_shapes())


def uniform_bound(fan_in: int) -> float:
    """Half-width ``sqrt(6/n)`` of the uniform weight initialization."""
    return float(np.sqrt(6.0 / fan_in))


def layer_init_bounds(spec: NetworkSpec) -> List[float]:
    """Uniform half-width used for each layer's weights by :func:`init_params`."""
    acts = spec.variant.hidden_activations(spec.hidden_layers)
    bounds = []
    for i, (_, fan_in) in enumerate(spec.layer_shapes()):
        if i < len(acts) and acts[i] == "sine":
            bounds.append(1.0 / fan_in if i == 0 else uniform_bound(fan_in) / spec.omega0)
        else:
            bounds.append(uniform_bound(fan_in))
    return bounds


def init_params(spec: NetworkSpec, seed: int) -> NetworkParams:
    """Draw initial parameters from a seeded PCG64 generator.

    Weights are uniform on ``[-sqrt(6/n), sqrt(6/n)]`` with ``n`` the fan-in.
    Sine layers differ: the first one uses ``[-1/n, 1/n]`` and later ones
    ``[-sqrt(6/n)/omega0, sqrt(6/n)/omega0]``. Biases start at zero.
    """
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for bound, (fan_out, fan_in) in zip(layer_init_bounds(spec), spec.layer_shapes()):
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return NetworkParams(weights, biases)


def _activate(kind: str, z: np.ndarray, omega0: float) -> np.ndarray:
    if kind == "sine":
        return np.sin(omega0 * z)
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "tanh":
        return np.tanh(z)
    raise ValueError(kind)


def forward_cache(spec: NetworkSpec, params: NetworkParams, inputs: np.ndarray):
    """Forward pass that also returns every layer's input and pre-activation.

    Returns
    -------
    output : numpy.ndarray
        ``(n_rows, out_dim)``.
    layer_inputs : list of numpy.ndarray
        Activation entering each affine layer (``layer_inputs[0]`` is ``inputs``).
    pre_activations : list of numpy.ndarray
        ``W x + b`` for each affine layer.
    """
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != spec.in_dim:
        raise ShapeError(f"inputs must have shape (n, {spec.in_dim}), got {x.shape}")
    acts = spec.variant.hidden_activations(spec.hidden_layers)
    layer_inputs, pre = [], []
    h = x
    for i, (w, b) in enumerate(params):
        layer_inputs.append(h)
        z = h @ w.T + b
        pre.append(z)
        if i < len(acts):
            h = _activate(acts[i], z, spec.omega0)
        else:
            h = z
    if spec.variant.output_activation == "relu":
        h = np.maximum(h, 0.0)
    return h, layer_inputs, pre


def forward(spec: NetworkSpec, params: NetworkParams, inputs: np.ndarray) -> np.ndarray:
    """Evaluate the network on coordinate rows ``inputs`` of shape ``(n, in_dim)``."""
    return forward_cache(spec, params, inputs)[0]


ROW_BLOCK = 256


def forward_blocked(spec: NetworkSpec, params: NetworkParams, inputs: np.ndarray,
                    block_rows: int = ROW_BLOCK) -> np.ndarray:
    """:func:`forward` with every matrix product run on exactly ``block_rows`` rows.

    BLAS kernels pick their summation order from the matrix shape, so the same
    row can round differently inside batches of different heights. Padding
    the last block keeps the shape fixed, which makes each output row a
    function of its own input row only: any partition or permutation of the
    rows gives bit-identical results.
    """
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != spec.in_dim:
        raise ShapeError(f"inputs must have shape (n, {spec.in_dim}), got {x.shape}")
    n = x.shape[0]
    out = np.empty((n, spec.out_dim))
    block = np.zeros((block_rows, spec.in_dim))
    for start in range(0, n, block_rows):
        rows = min(block_rows, n - start)
        block[:rows] = x[start:start + rows]
        block[rows:] = 0.0
        out[start:start + rows] = forward(spec, params, block)[:rows]
    return out


def forward_chunked(spec: NetworkSpec, params: NetworkParams, inputs: np.ndarray,
                    chunk_rows: int = 65536) -> np.ndarray:
    """Row-deterministic evaluation over chunks of at most ``chunk_rows`` rows.

    Results do not depend on ``chunk_rows``; see :func:`forward_blocked`.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    if chunk_rows < 1:
        raise ValueError("chunk_rows must be positive")
    parts = [forward_blocked(spec, params, inputs[i:i + chunk_rows])
             for i in range(0, max(inputs.shape[0], 1), chunk_rows)]
    return np.concatenate(parts) if len(parts) > 1 else parts[0]
