"""Fidelity metrics between a reference volume and its reconstruction."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.ndimage import uniform_filter

from .exceptions import EmptySelectionError, ShapeError

__all__ = [
    "psnr",
    "ssim_map",
    "ssim",
    "volume_ssim",
    "relative_error_map",
    "masked_stats",
    "MetricsReport",
    "compute_report",
]

SSIM_WINDOW = 7
SSIM_K1 = 0.01
SSIM_K2 = 0.03
RELATIVE_ERROR_FLOOR = 1e-6


def psnr(mse: float) -> float:
    """Peak signal-to-noise ratio in dB for unit-peak signals.

    Returns ``inf`` when ``mse`` is zero.
    """
    mse = float(mse)
    if mse < 0 or math.isnan(mse):
        raise ValueError(f"mse must be non-negative, got {mse!r}")
    if mse == 0.0:
        return math.inf
    return -10.0 * math.log10(mse)


def ssim_map(a: np.ndarray, b: np.ndarray, win_size: int = SSIM_WINDOW,
             data_range: float = 1.0) -> np.ndarray:
    """Per-pixel SSIM with a uniform ``win_size`` x ``win_size`` window.

    Local variances and covariance use the unbiased (N - 1) normalization.
    Borders are computed with reflected padding; :func:`ssim` averages only
    the pixels whose window lies fully inside the image.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"images differ in shape: {a.shape} vs {b.shape}")
    if a.ndim != 2:
        raise ShapeError(f"expected 2D images, got {a.ndim}D")
    if min(a.shape) < win_size:
        raise ShapeError(f"image {a.shape} is smaller than the {win_size}x{win_size} window")
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    n = win_size * win_size
    cov_norm = n / (n - 1.0)

    mu_a = uniform_filter(a, win_size)
    mu_b = uniform_filter(b, win_size)
    m_aa = uniform_filter(a * a, win_size)
    m_bb = uniform_filter(b * b, win_size)
    m_ab = uniform_filter(a * b, win_size)
    var_a = cov_norm * (m_aa - mu_a * mu_a)
    var_b = cov_norm * (m_bb - mu_b * mu_b)
    cov = cov_norm * (m_ab - mu_a * mu_b)

    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return num / den


def ssim(a, b, win_size: int = SSIM_WINDOW, data_range: float = 1.0) -> float:
    """Mean SSIM over window centers whose window stays inside the image."""
    smap = ssim_map(a, b, win_size, data_range)
    pad = (win_size - 1) // 2
    return float(smap[pad:smap.shape[0] - pad, pad:smap.shape[1] - pad].mean())


def volume_ssim(truth: np.ndarray, test: np.ndarray, data_range: float = 1.0) -> float:
    """Mean 2D SSIM over every (slice, measurement) image of two 4D arrays."""
    truth = np.asarray(truth)
    test = np.asarray(test)
    if truth.shape != test.shape:
        raise ShapeError(f"shapes differ: {truth.shape} vs {test.shape}")
    values = [
        ssim(truth[:, :, z, k], test[:, :, z, k], data_range=data_range)
        for z in range(truth.shape[2])
        for k in range(truth.shape[3])
    ]
    return float(np.mean(values))


def relative_error_map(truth, test, floor: float = RELATIVE_ERROR_FLOOR,
                       absolute: bool = False) -> np.ndarray:
    """Signed percentage error ``100 (test - truth) / max(|truth|, floor)``.

    4D inputs are averaged over the measurement axis, giving one value per voxel.
    """
    truth = np.asarray(getattr(truth, "data", truth), dtype=np.float64)
    test = np.asarray(getattr(test, "data", test), dtype=np.float64)
    if truth.shape != test.shape:
        raise ShapeError(f"shapes differ: {truth.shape} vs {test.shape}")
    rel = 100.0 * (test - truth) / np.maximum(np.abs(truth), floor)
    if absolute:
        rel = np.abs(rel)
    if rel.ndim == 4:
        rel = rel.mean(axis=3)
    return rel


def masked_stats(values: np.ndarray, mask, label=None) -> Tuple[float, float]:
    """Mean and population standard deviation of ``values`` over a mask label.

    ``mask`` is a :class:`~inrcodec.volume.TissueMask` (then ``label`` selects
    the tissue) or a boolean array.
    """
    values = np.asarray(values, dtype=np.float64)
    if hasattr(mask, "select"):
        selected = mask.select(label)
    else:
        selected = np.asarray(mask, dtype=bool)
    if selected.shape != values.shape[:selected.ndim]:
        raise ShapeError(f"mask {selected.shape} does not match map {values.shape}")
    picked = values[selected]
    picked = picked[np.isfinite(picked)]
    if picked.size == 0:
        raise EmptySelectionError(f"no voxels with label {label!r}")
    return float(picked.mean()), float(picked.std())


def _fmt(x):
    if x is None:
        return None
    if isinstance(x, float) and math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


@dataclass
class MetricsReport:
    mse: float
    psnr: float
    psnr_slice_mean: float
    psnr_per_slice: List[float]
    ssim_mean: float
    relative_error: Dict[str, Tuple[float, float]] = field(default_factory=dict)
    compression_ratio: Optional[float] = None
    payload_ratio: Optional[float] = None

    @property
    def psnr_global(self) -> float:
        return self.psnr

    def to_dict(self) -> dict:
        d = asdict(self)
        d["psnr"] = _fmt(self.psnr)
        d["psnr_slice_mean"] = _fmt(self.psnr_slice_mean)
        d["psnr_per_slice"] = [_fmt(p) for p in self.psnr_per_slice]
        d["relative_error"] = {
            k: {"mean": m, "std": s} for k, (m, s) in self.relative_error.items()
        }
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def rows(self):
        """Long-format ``(metric, key, value)`` rows."""
        yield ("mse", "", self.mse)
        yield ("psnr", "global", _fmt(self.psnr))
        yield ("psnr", "slice_mean", _fmt(self.psnr_slice_mean))
        for z, p in enumerate(self.psnr_per_slice):
            yield ("psnr_slice", str(z), _fmt(p))
        yield ("ssim", "mean", self.ssim_mean)
        for label, (m, s) in self.relative_error.items():
            yield ("relative_error_mean", label, m)
            yield ("relative_error_std", label, s)
        if self.compression_ratio is not None:
            yield ("compression_ratio", "file", self.compression_ratio)
        if self.payload_ratio is not None:
            yield ("compression_ratio", "payload", self.payload_ratio)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["metric", "key", "value"])
        for metric, key, value in self.rows():
            writer.writerow([metric, key, repr(value) if isinstance(value, float) else value])
        return buf.getvalue()


def _common_scale(truth, test):
    from .volume import Volume4D, normalize

    if not isinstance(truth, Volume4D):
        truth = Volume4D(truth)
    if not isinstance(test, Volume4D):
        test = Volume4D(test)
    if truth.dims != test.dims:
        raise ShapeError(f"volumes differ in shape: {truth.dims} vs {test.dims}")
    if truth.is_normalized:
        return truth.data, test.data
    ref = normalize(truth)
    lo, hi = ref.norm_bounds
    span = (hi - lo) or 1.0
    return ref.data, (test.data - lo) / span


def compute_report(truth, test, mask=None, floor: float = RELATIVE_ERROR_FLOOR,
                   compression_ratio=None, payload_ratio=None) -> MetricsReport:
    """Compare two volumes on the reference's normalized [0, 1] scale.

    ``psnr`` comes from the MSE over all samples; ``psnr_slice_mean`` is the
    mean of per-slice PSNR values. With a mask, signed relative errors are
    summarized per tissue label present and over the whole brain.
    """
    a, b = _common_scale(truth, test)
    diff2 = (a - b) ** 2
    mse = float(diff2.mean())
    per_slice = [psnr(float(diff2[:, :, z, :].mean())) for z in range(a.shape[2])]
    try:
        ssim_mean = volume_ssim(a, b)
    except ShapeError:
        ssim_mean = float("nan")
    rel = relative_error_map(a, b, floor)
    summary = {}
    if mask is None:
        summary["all"] = masked_stats(rel, np.ones(rel.shape, dtype=bool))
    else:
        from .volume import Tissue

        for tissue in (Tissue.WM, Tissue.GM, Tissue.CSF):
            if np.any(mask.select(tissue)):
                summary[tissue.name] = masked_stats(rel, mask, tissue)
        if np.any(mask.select("brain")):
            summary["brain"] = masked_stats(rel, mask, "brain")
    return MetricsReport(
        mse=mse,
        psnr=psnr(mse),
        psnr_slice_mean=float(np.mean(per_slice)),
        psnr_per_slice=per_slice,
        ssim_mean=ssim_mean,
        relative_error=summary,
        compression_ratio=compression_ratio,
        payload_ratio=payload_ratio,
    )
