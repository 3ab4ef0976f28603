"""Encoder: full-batch overfitting of coordinate networks with ADAM.

One epoch is one gradient step over every grid row. Gradients are computed
analytically by backpropagation through :func:`inrcodec.network.forward_cache`.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field, replace
from typing import List, Optional, Tuple

import numpy as np

from .exceptions import DivergenceError, ShapeError
from .metrics import psnr
from .network import NetworkParams, NetworkSpec, forward_cache, init_params
from .sampling import CoordinateGrid, GridMode, make_grid, slice_targets, volume_targets
from .volume import Volume4D

__all__ = [
    "TrainConfig",
    "TrainTrace",
    "AdamState",
    "mse_loss",
    "backward",
    "adam_step",
    "encode_slice",
    "encode_volume",
    "default_learning_rate",
]

logger = logging.getLogger(__name__)

LEARNING_RATES = {GridMode.SLICE2D: 3e-4, GridMode.VOLUME3D: 2e-4}


def default_learning_rate(mode) -> float:
    return LEARNING_RATES[GridMode.parse(mode)]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 2000
    learning_rate: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    loss_log_stride: int = 1

    def __post_init__(self):
        if int(self.epochs) != self.epochs or self.epochs < 1:
            raise ValueError(f"epochs must be a positive integer, got {self.epochs!r}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate!r}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("ADAM betas must lie in [0, 1)")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.loss_log_stride < 1:
            raise ValueError("loss_log_stride must be >= 1")


@dataclass
class TrainTrace:
    """Loss history. Entry ``k`` is the MSE after ``epochs[k]`` updates."""

    epochs: List[int] = field(default_factory=list)
    mse: List[float] = field(default_factory=list)
    psnr: List[float] = field(default_factory=list)
    wall_time: float = 0.0

    def record(self, epoch: int, loss: float) -> None:
        self.epochs.append(int(epoch))
        self.mse.append(float(loss))
        self.psnr.append(psnr(loss))

    @property
    def final_mse(self) -> float:
        return self.mse[-1]

    @property
    def final_psnr(self) -> float:
        return self.psnr[-1]


def write_traces_csv(traces, path) -> None:
    """Write one row per logged point: ``network, epoch, mse, psnr``."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["network", "epoch", "mse", "psnr"])
        for k, trace in enumerate(traces):
            for epoch, mse, p in zip(trace.epochs, trace.mse, trace.psnr):
                writer.writerow([k, epoch, repr(mse), repr(p)])


def mse_loss(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean of squared differences over every entry."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {pred.shape} and target {target.shape} differ")
    diff = pred - target
    return float(np.mean(diff * diff))


def _activation_grad(kind: str, z: np.ndarray, omega0: float) -> np.ndarray:
    if kind == "sine":
        return omega0 * np.cos(omega0 * z)
    if kind == "relu":
        return (z > 0).astype(z.dtype)
    t = np.tanh(z)
    return 1.0 - t * t


def _loss_and_grad(spec, params, inputs, targets, out: Optional[NetworkParams] = None):
    pred, layer_inputs, pre = forward_cache(spec, params, inputs)
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != pred.shape:
        raise ShapeError(f"targets must have shape {pred.shape}, got {targets.shape}")
    resid = pred - targets
    loss = float(np.mean(resid * resid))

    acts = spec.variant.hidden_activations(spec.hidden_layers)
    dz = resid * (2.0 / resid.size)
    if spec.variant.output_activation == "relu":
        dz = dz * (pre[-1] > 0)
    if out is None:
        out = NetworkParams(
            [np.empty_like(w) for w in params.weights], [np.empty_like(b) for b in params.biases]
        )
    for i in range(params.n_layers - 1, -1, -1):
        np.matmul(dz.T, layer_inputs[i], out=out.weights[i])
        np.sum(dz, axis=0, out=out.biases[i])
        if i > 0:
            dz = (dz @ params.weights[i]) * _activation_grad(acts[i - 1], pre[i - 1], spec.omega0)
    return loss, out


def backward(spec: NetworkSpec, params: NetworkParams, inputs, targets) -> NetworkParams:
    """Gradient of ``mse_loss(forward(inputs), targets)`` w.r.t. every W_i and b_i.

    The ReLU derivative at exactly zero is taken as 0.
    """
    return _loss_and_grad(spec, params, inputs, targets)[1]


@dataclass
class AdamState:
    """First and second moment accumulators, flat in parameter storage order."""

    m: np.ndarray
    v: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n))


def _adam_update(theta, grad, m, v, t, config: TrainConfig) -> None:
    # in place on flat arrays
    b1, b2 = config.beta1, config.beta2
    m *= b1
    m += (1.0 - b1) * grad
    v *= b2
    v += (1.0 - b2) * (grad * grad)
    m_hat = m / (1.0 - b1 ** t)
    v_hat = v / (1.0 - b2 ** t)
    theta -= config.learning_rate * m_hat / (np.sqrt(v_hat) + config.eps)


def adam_step(params: NetworkParams, grads: NetworkParams, state: AdamState,
              config: TrainConfig, t: int) -> Tuple[NetworkParams, AdamState]:
    """One bias-corrected ADAM update; inputs are left untouched.

    ``t`` is the 1-based step index. Returns ``(new_params, new_state)``.
    """
    if t < 1:
        raise ValueError("ADAM step index starts at 1")
    theta = params.flat().astype(np.float64)
    state = AdamState(state.m.copy(), state.v.copy())
    _adam_update(theta, grads.flat(), state.m, state.v, t, config)
    shapes = [(w.shape, b.shape) for w, b in params]
    weights, biases, pos = [], [], 0
    for ws, bs in shapes:
        nw, nb = int(np.prod(ws)), int(np.prod(bs))
        weights.append(theta[pos:pos + nw].reshape(ws))
        pos += nw
        biases.append(theta[pos:pos + nb].reshape(bs))
        pos += nb
    return NetworkParams(weights, biases), state


def encode_slice(targets: np.ndarray, grid: CoordinateGrid, spec: NetworkSpec,
                 config: TrainConfig, slice_index: Optional[int] = None):
    """Overfit one network to ``targets`` sampled on ``grid``.

    Parameters
    ----------
    targets : numpy.ndarray
        ``(grid.n_rows, spec.out_dim)`` normalized signals.
    grid : CoordinateGrid
    spec : NetworkSpec
    config : TrainConfig
    slice_index : int, optional
        Only used to label divergence errors.

    Returns
    -------
    (NetworkParams, TrainTrace)
        Parameters after the final update and the loss history.
    """
    targets = np.asarray(targets, dtype=np.float64)
    inputs = grid.coords
    if targets.shape != (grid.n_rows, spec.out_dim):
        raise ShapeError(
            f"targets must have shape ({grid.n_rows}, {spec.out_dim}), got {targets.shape}"
        )
    if inputs.shape[1] != spec.in_dim:
        raise ShapeError(f"grid is {inputs.shape[1]}-D but the network expects {spec.in_dim}-D")

    start = time.perf_counter()
    theta = init_params(spec, config.seed).flat()
    params = NetworkParams.from_flat(spec, theta)
    gflat = np.empty_like(theta)
    grads = NetworkParams.from_flat(spec, gflat)
    state = AdamState.zeros(theta.size)
    trace = TrainTrace()
    stride = config.loss_log_stride

    for step in range(1, config.epochs + 1):
        # overflow shows up as a non-finite loss, reported just below
        with np.errstate(over="ignore", invalid="ignore"):
            loss, _ = _loss_and_grad(spec, params, inputs, targets, out=grads)
        if not np.isfinite(loss) or not np.all(np.isfinite(gflat)):
            raise DivergenceError(step - 1, loss, slice_index)
        if (step - 1) % stride == 0:
            trace.record(step - 1, loss)
        _adam_update(theta, gflat, state.m, state.v, step, config)

    pred = forward_cache(spec, params, inputs)[0]
    loss = mse_loss(pred, targets)
    if not np.isfinite(loss):
        raise DivergenceError(config.epochs, loss, slice_index)
    trace.record(config.epochs, loss)
    trace.wall_time = time.perf_counter() - start
    final = NetworkParams.from_flat(spec, theta.copy())
    return final, trace


def _slice_job(v: Volume4D, z: int, grid, spec, config):
    cfg = replace(config, seed=config.seed + z)
    logger.debug("encoding slice %d with seed %d", z, cfg.seed)
    return encode_slice(slice_targets(v, z), grid, spec, cfg, slice_index=z)


def encode_volume(v: Volume4D, spec: NetworkSpec, config: TrainConfig, mode,
                  n_jobs: int = 1):
    """Encode a normalized volume slice by slice (2D) or all at once (3D).

    Slice ``z`` is trained with seed ``config.seed + z``, so every slice can be
    reproduced in isolation and results do not depend on ``n_jobs``.

    Returns
    -------
    (list of NetworkParams, list of TrainTrace)
    """
    mode = GridMode.parse(mode)
    if not v.is_normalized:
        raise ValueError("encode_volume expects a normalized volume")
    if spec.in_dim != mode.in_dim:
        raise ShapeError(f"{mode.name} needs in_dim={mode.in_dim}, spec has {spec.in_dim}")
    if spec.out_dim != v.n_measurements:
        raise ShapeError(f"spec out_dim {spec.out_dim} != {v.n_measurements} measurements")

    grid = make_grid(v.dims, mode)
    if mode is GridMode.VOLUME3D:
        params, trace = encode_slice(volume_targets(v), grid, spec, config)
        return [params], [trace]

    nz = v.dims[2]
    if n_jobs == 1 or nz == 1:
        results = [_slice_job(v, z, grid, spec, config) for z in range(nz)]
    else:
        from joblib import Parallel, delayed

        results = Parallel(n_jobs=n_jobs)(
            delayed(_slice_job)(v, z, grid, spec, config) for z in range(nz)
        )
    return [r[0] for r in results], [r[1] for r in results]
