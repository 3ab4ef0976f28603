"""Diffusion-MRI models used to judge reconstructions downstream.

Contains the log-linear diffusion tensor fit with its FA/MD invariants, a
real symmetric spherical-harmonics fit with RISH features, Gaussian smoothing
used as a reference degradation, and a synthetic tensor phantom.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from typing import Dict, Optional, Sequence

import numpy as np
from scipy.ndimage import correlate1d
from scipy.special import sph_harm_y

from .exceptions import DegenerateSchemeError, EmptyShellError, ShapeError
from .metrics import RELATIVE_ERROR_FLOOR, masked_stats, relative_error_map
from .volume import GradientTable, Tissue, TissueMask, Volume4D, select_shell

__all__ = [
    "TensorFit",
    "ShFit",
    "UnderdeterminedError",
    "tensor_design_matrix",
    "fit_tensor",
    "fa_md",
    "sh_basis",
    "sh_n_coeffs",
    "fit_sh",
    "rish",
    "gaussian_kernel1d",
    "gaussian_smooth",
    "sphere_directions",
    "make_scheme",
    "make_phantom",
    "dwi_maps",
    "dwi_relative_errors",
]

SH_CONVENTION = "real-even/l(l+1)/2+m/csphase"
MIN_SIGNAL = 1e-8


class UnderdeterminedError(DegenerateSchemeError):
    """Fewer samples than model coefficients."""


# --------------------------------------------------------------------------
# diffusion tensor


@dataclass(frozen=True)
class TensorFit:
    """Per-voxel tensor estimates; leading axes follow the input signals."""

    s0: np.ndarray
    tensor: np.ndarray
    evals: np.ndarray
    evecs: np.ndarray

    @classmethod
    def from_tensor(cls, tensor: np.ndarray, s0: np.ndarray) -> "TensorFit":
        tensor = np.asarray(tensor, dtype=np.float64)
        tensor = 0.5 * (tensor + np.swapaxes(tensor, -1, -2))
        w, v = np.linalg.eigh(tensor)
        return cls(np.asarray(s0, dtype=np.float64), tensor, w[..., ::-1], v[..., ::-1])

    @property
    def has_negative_eigenvalues(self) -> np.ndarray:
        return self.evals[..., -1] < 0


def tensor_design_matrix(g: GradientTable) -> np.ndarray:
    """Columns: ln S0, Dxx, Dyy, Dzz, Dxy, Dxz, Dyz."""
    b = g.bvals
    x, y, z = g.bvecs.T
    return np.column_stack([
        np.ones_like(b),
        -b * x * x, -b * y * y, -b * z * z,
        -2 * b * x * y, -2 * b * x * z, -2 * b * y * z,
    ])


def _signals_matrix(signals, m_expected):
    s = np.asarray(getattr(signals, "data", signals), dtype=np.float64)
    if s.shape[-1] != m_expected:
        raise ShapeError(f"signals have {s.shape[-1]} measurements, scheme has {m_expected}")
    return s


def fit_tensor(signals, g: GradientTable, min_signal: float = MIN_SIGNAL) -> TensorFit:
    """Unweighted log-linear least-squares tensor fit.

    Every row of ``g`` is used, so pass the b=0 measurements plus one shell.
    Signals below ``min_signal`` are clamped before taking the log.
    """
    s = _signals_matrix(signals, len(g))
    X = tensor_design_matrix(g)
    if np.linalg.matrix_rank(X) < 7:
        raise DegenerateSchemeError(
            "scheme cannot determine a tensor: need a b=0 measurement and "
            "at least 6 non-collinear weighted directions"
        )
    lead = s.shape[:-1]
    logs = np.log(np.maximum(s.reshape(-1, s.shape[-1]), min_signal))
    coef = logs @ np.linalg.pinv(X).T
    d = coef[:, 1:]
    tensor = np.empty((coef.shape[0], 3, 3))
    tensor[:, 0, 0], tensor[:, 1, 1], tensor[:, 2, 2] = d[:, 0], d[:, 1], d[:, 2]
    tensor[:, 0, 1] = tensor[:, 1, 0] = d[:, 3]
    tensor[:, 0, 2] = tensor[:, 2, 0] = d[:, 4]
    tensor[:, 1, 2] = tensor[:, 2, 1] = d[:, 5]
    fit = TensorFit.from_tensor(tensor, np.exp(coef[:, 0]))
    return TensorFit(
        fit.s0.reshape(lead),
        fit.tensor.reshape(lead + (3, 3)),
        fit.evals.reshape(lead + (3,)),
        fit.evecs.reshape(lead + (3, 3)),
    )


def fa_md(fit_or_evals):
    """Fractional anisotropy and mean diffusivity from tensor eigenvalues.

    Accepts a :class:`TensorFit` or an array of eigenvalue triples. FA of the
    zero tensor is 0.
    """
    evals = np.asarray(getattr(fit_or_evals, "evals", fit_or_evals), dtype=np.float64)
    md = evals.sum(axis=-1) / 3.0
    norm = np.sqrt((evals * evals).sum(axis=-1))
    dev = np.sqrt(((evals - md[..., None]) ** 2).sum(axis=-1))
    with np.errstate(invalid="ignore", divide="ignore"):
        fa = np.where(norm > 0, math.sqrt(1.5) * dev / np.where(norm > 0, norm, 1.0), 0.0)
    return fa, md


# --------------------------------------------------------------------------
# spherical harmonics


@dataclass(frozen=True)
class ShFit:
    coeffs: np.ndarray
    order: int
    convention: str = SH_CONVENTION


def sh_n_coeffs(order: int) -> int:
    return (order + 1) * (order + 2) // 2


def sh_basis(order: int, directions: np.ndarray) -> np.ndarray:
    """Real symmetric SH basis evaluated at unit ``directions``.

    Column ``l(l+1)/2 + m`` holds degree ``l`` (even), order ``m`` in
    ``[-l, l]``: ``sqrt(2) Im Y_l^|m|`` for ``m < 0``, ``Y_l^0`` for ``m = 0``,
    ``sqrt(2) Re Y_l^m`` for ``m > 0`` (complex Y with Condon-Shortley phase).
    """
    if order < 0 or order % 2:
        raise ValueError("order must be a non-negative even integer")
    d = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
    r = np.linalg.norm(d, axis=1)
    polar = np.arccos(np.clip(d[:, 2] / np.where(r > 0, r, 1.0), -1.0, 1.0))
    azimuth = np.arctan2(d[:, 1], d[:, 0])
    out = np.empty((d.shape[0], sh_n_coeffs(order)))
    for l in range(0, order + 1, 2):
        centre = l * (l + 1) // 2
        out[:, centre] = sph_harm_y(l, 0, polar, azimuth).real
        for m in range(1, l + 1):
            y = sph_harm_y(l, m, polar, azimuth)
            out[:, centre + m] = math.sqrt(2.0) * y.real
            out[:, centre - m] = math.sqrt(2.0) * y.imag
    return out


def _sh_degrees(order: int) -> np.ndarray:
    return np.concatenate([np.full(2 * l + 1, l) for l in range(0, order + 1, 2)])


def fit_sh(signals, g, order: int = 4, regularization: float = 0.0) -> ShFit:
    """Least-squares projection of shell signals onto the even SH basis.

    ``g`` is a :class:`GradientTable` (rows with b = 0 are dropped) or an
    ``(M, 3)`` array of directions. ``regularization`` weights a
    Laplace-Beltrami penalty; 0 gives the plain least-squares fit.
    """
    if isinstance(g, GradientTable):
        s = _signals_matrix(signals, len(g))
        keep = (g.bvals > 0) & (np.linalg.norm(g.bvecs, axis=1) > 0)
        dirs = g.bvecs[keep]
        s = s[..., keep]
    else:
        dirs = np.asarray(g, dtype=np.float64).reshape(-1, 3)
        s = _signals_matrix(signals, dirs.shape[0])
    n_coef = sh_n_coeffs(order)
    n_distinct = np.unique(np.round(dirs, 12), axis=0).shape[0]
    if n_distinct < n_coef:
        raise UnderdeterminedError(
            f"order {order} needs {n_coef} distinct directions, got {n_distinct}"
        )
    Y = sh_basis(order, dirs)
    if regularization > 0:
        deg = _sh_degrees(order).astype(np.float64)
        L = np.diag((deg * (deg + 1)) ** 2)
        proj = np.linalg.solve(Y.T @ Y + regularization * L, Y.T)
    else:
        proj = np.linalg.pinv(Y)
    lead = s.shape[:-1]
    coeffs = s.reshape(-1, s.shape[-1]) @ proj.T
    return ShFit(coeffs.reshape(lead + (n_coef,)), order)


def rish(fit: ShFit, l: int) -> np.ndarray:
    """Rotation-invariant energy of degree ``l``: sum of squared coefficients."""
    if l % 2 or not 0 <= l <= fit.order:
        raise ValueError(f"degree {l} not present in an order-{fit.order} fit")
    centre = l * (l + 1) // 2
    c = fit.coeffs[..., centre - l:centre + l + 1]
    return (c * c).sum(axis=-1)


# --------------------------------------------------------------------------
# smoothing


def gaussian_kernel1d(fwhm: float) -> np.ndarray:
    """Normalized Gaussian taps for ``fwhm`` in voxels, truncated at 4 sigma."""
    if not fwhm > 0:
        raise ValueError("fwhm must be positive")
    sigma = fwhm / (2.0 * math.sqrt(2.0 * math.log(2.0)))
    radius = int(math.floor(4.0 * sigma))
    k = np.arange(-radius, radius + 1, dtype=np.float64)
    w = np.exp(-0.5 * (k / sigma) ** 2)
    return w / w.sum()


def gaussian_smooth(v: Volume4D, fwhm: float = 1.5) -> Volume4D:
    """Separable 3D Gaussian smoothing of every measurement.

    Near the borders the kernel is renormalized over the taps that fall inside
    the volume, so constants are preserved everywhere.
    """
    w = gaussian_kernel1d(fwhm)
    data = v.data
    weight = np.ones(v.spatial_dims + (1,))
    for axis in range(3):
        data = correlate1d(data, w, axis=axis, mode="constant", cval=0.0)
        weight = correlate1d(weight, w, axis=axis, mode="constant", cval=0.0)
    return replace(v, data=data / weight)


# --------------------------------------------------------------------------
# acquisition schemes and phantom


def sphere_directions(n: int, offset: float = 0.5) -> np.ndarray:
    """``n`` well-spread unit vectors on the upper hemisphere (golden spiral)."""
    i = np.arange(n, dtype=np.float64)
    z = 1.0 - (i + offset) / n
    r = np.sqrt(1.0 - z * z)
    phi = i * math.pi * (3.0 - math.sqrt(5.0))
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


def make_scheme(n_b0: int = 1, shells: Optional[Dict[float, int]] = None) -> GradientTable:
    """Gradient table with ``n_b0`` b=0 rows followed by one block per shell."""
    shells = {1000.0: 15} if shells is None else shells
    bvals = [np.zeros(n_b0)]
    bvecs = [np.zeros((n_b0, 3))]
    for k, (b, n) in enumerate(sorted(shells.items())):
        bvals.append(np.full(n, float(b)))
        bvecs.append(sphere_directions(n, offset=0.5 + 0.25 * k))
    return GradientTable(np.concatenate(bvals), np.concatenate(bvecs))


def _rician(signal, sigma, rng):
    real = signal + rng.normal(0.0, sigma, signal.shape)
    imag = rng.normal(0.0, sigma, signal.shape)
    return np.sqrt(real * real + imag * imag)


def make_phantom(dims: Sequence[int], scheme: GradientTable, seed: int = 0,
                 snr: Optional[float] = None, voxel_size=(2.0, 2.0, 2.0)):
    """Piecewise-smooth tensor phantom.

    An elliptical "brain" holds a ring of white matter whose fibres run along
    the ring, grey matter elsewhere and a central CSF pocket. Baseline signal
    carries a smooth bias field. The layout is drawn from ``seed`` before any
    noise, so noisy and noiseless phantoms share the same ground truth.
    Rician noise has ``sigma = mean brain S0 / snr``; ``snr=None`` disables it.

    Returns
    -------
    (Volume4D, TissueMask, TensorFit)
        Signals in native units, tissue labels and ground-truth tensors.
    """
    nx, ny, nz = (int(d) for d in dims[:3])
    rng = np.random.default_rng(seed)
    cx, cy = rng.uniform(-0.05, 0.05, 2)
    ring_lo = 0.38 + rng.uniform(-0.04, 0.04)
    ring_hi = 0.68 + rng.uniform(-0.04, 0.04)
    tilt = rng.uniform(0.1, 0.3)
    phase = rng.uniform(0, 2 * math.pi, 3)

    u, vv, w = np.meshgrid(
        np.linspace(-1, 1, nx), np.linspace(-1, 1, ny),
        np.linspace(-1, 1, nz) if nz > 1 else np.zeros(1), indexing="ij",
    )
    du, dv = u - cx, vv - cy
    shrink = 1.0 - 0.15 * w * w
    radius = np.sqrt((du / 0.9) ** 2 + (dv / 0.8) ** 2) / shrink
    labels = np.full((nx, ny, nz), Tissue.BACKGROUND, dtype=np.int8)
    brain = radius <= 1.0
    labels[brain] = Tissue.GM
    labels[brain & (radius >= ring_lo) & (radius <= ring_hi)] = Tissue.WM
    labels[np.sqrt((du / 0.22) ** 2 + (dv / 0.14) ** 2) <= 1.0] = Tissue.CSF

    # fibres run tangentially around the ring with a smooth through-plane tilt
    angle = np.arctan2(dv / 0.8, du / 0.9)
    e1 = np.stack([-np.sin(angle), np.cos(angle), tilt * np.sin(2 * angle + phase[0])], axis=-1)
    e1 /= np.linalg.norm(e1, axis=-1, keepdims=True)
    tensor = np.zeros((nx, ny, nz, 3, 3))
    eye = np.eye(3)
    wm = labels == Tissue.WM
    lam1 = 1.7e-3 + 0.2e-3 * np.sin(3 * angle + phase[1])
    lam_perp = 0.3e-3
    outer = e1[..., :, None] * e1[..., None, :]
    tensor[wm] = (lam_perp * eye + (lam1[..., None, None] - lam_perp) * outer)[wm]
    tensor[labels == Tissue.GM] = 0.8e-3 * eye
    tensor[labels == Tissue.CSF] = 3.0e-3 * eye

    s0 = np.full((nx, ny, nz), 20.0)
    s0[labels == Tissue.GM] = 1000.0
    s0[wm] = 800.0
    s0[labels == Tissue.CSF] = 1600.0
    bias = 1.0 + 0.15 * np.sin(1.5 * u + phase[2]) * np.cos(1.2 * vv)
    s0 = s0 * bias

    q = np.einsum("mi,xyzij,mj->xyzm", scheme.bvecs, tensor, scheme.bvecs)
    signal = s0[..., None] * np.exp(-scheme.bvals * q)
    if snr is not None and math.isfinite(snr):
        sigma = float(s0[brain].mean()) / snr
        signal = _rician(signal, sigma, rng)
    truth = TensorFit.from_tensor(tensor, s0)
    return Volume4D(signal, voxel_size), TissueMask(labels), truth


# --------------------------------------------------------------------------
# downstream comparison


def dwi_maps(v: Volume4D, g: GradientTable, b_tensor: float = 1000.0,
             b_sh: Optional[float] = 5000.0, tol: float = 100.0,
             min_signal: Optional[float] = None, sh_regularization: float = 0.0):
    """FA, MD (b0 + ``b_tensor`` shell) and RISH0/RISH2 (``b_sh`` shell) maps.

    Shells that are absent are skipped. ``min_signal`` defaults to ``1e-8``
    times the largest absolute sample.
    """
    if min_signal is None:
        min_signal = MIN_SIGNAL * max(float(np.abs(v.data).max()), 1.0)
    maps = {}
    b0_idx = np.flatnonzero(g.bvals <= min(tol, 0.5 * b_tensor))
    shell_idx = np.flatnonzero(np.abs(g.bvals - b_tensor) <= tol)
    if shell_idx.size:
        idx = np.union1d(b0_idx, shell_idx)
        try:
            fit = fit_tensor(v.data[..., idx], g.subset(idx), min_signal=min_signal)
            maps["FA"], maps["MD"] = fa_md(fit)
        except DegenerateSchemeError:
            pass
    if b_sh is not None:
        try:
            shell, gs = select_shell(v, g, b_sh, tol)
            fit = fit_sh(shell.data, gs, 4, sh_regularization)
            maps["RISH0"] = rish(fit, 0)
            maps["RISH2"] = rish(fit, 2)
        except (DegenerateSchemeError, EmptyShellError):
            pass
    return maps


def dwi_relative_errors(truth: Volume4D, test: Volume4D, g: GradientTable,
                        mask: Optional[TissueMask] = None, floor: float = RELATIVE_ERROR_FLOOR,
                        absolute: bool = False, **kwargs):
    """Signed relative-error maps (percent) of each downstream metric.

    Returns
    -------
    maps : dict
        Metric name -> per-voxel relative error.
    summary : list of dict
        One row per (metric, mask label): ``metric, mask, mean, std, n``.
    """
    ref = dwi_maps(truth, g, **kwargs)
    other = dwi_maps(test, g, **kwargs)
    errors = {k: relative_error_map(ref[k], other[k], floor, absolute) for k in ref if k in other}
    labels = ["all"] if mask is None else [
        t.name for t in (Tissue.WM, Tissue.GM, Tissue.CSF) if np.any(mask.select(t))
    ] + ["brain"]
    rows = []
    for metric, emap in errors.items():
        for label in labels:
            sel = np.ones(emap.shape, bool) if label == "all" else mask.select(label)
            if not np.any(sel):
                continue
            mean, std = masked_stats(emap, sel)
            rows.append({"metric": metric, "mask": label, "mean": mean, "std": std,
                         "n": int(sel.sum())})
    return errors, rows


def write_dwi_csv(rows, path, method: str = "test", fwhm_units: str = "voxel") -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["method", "metric", "mask", "mean", "std", "n", "fwhm_units"])
        for r in rows:
            writer.writerow([r.get("method", method), r["metric"], r["mask"],
                             repr(r["mean"]), repr(r["std"]), r["n"], fwhm_units])
