"""scikit-learn compatible wrappers around the codec and the smoothing baseline."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_positions, check_positive_int, check_volume, same_kind
from .codec import CompressedArtifact, decode, pack, unpack
from .dwi import gaussian_smooth
from .exceptions import ShapeError
from .metrics import psnr
from .network import NetworkSpec, Variant, forward_chunked
from .sampling import GridMode, index_to_coordinate
from .training import TrainConfig, default_learning_rate, encode_volume
from .volume import normalize

__all__ = ["SirenCodec", "GaussianSmoother"]


class SirenCodec(TransformerMixin, BaseEstimator, auto_wrap_output_keys=None):
    """Lossy volume codec that overfits coordinate networks to the data.

    ``fit`` trains one network per slice (``mode="2d"``) or one for the whole
    volume (``mode="3d"``) and packs the quantized parameters into
    ``artifact_``. ``transform`` returns the volume decoded from that artifact.

    Parameters
    ----------
    mode : {"2d", "3d"}
    hidden_layers, hidden_units : int
        Depth and width of the hidden part of the network.
    variant : str
        One of ``siren``, ``siren-relu``, ``mlp-relu``, ``mlp-tanh``, ``mlp-siren``.
    omega0 : float
        Frequency scale of the sine layers.
    epochs : int
        Number of full-batch ADAM steps.
    learning_rate : float or None
        ``None`` picks 3e-4 in 2D mode and 2e-4 in 3D mode.
    quantization : {"f16", "f32"}
    backend : str
        Lossless back-end for the container payload.
    seed : int
        Seed of the first network; slice ``z`` uses ``seed + z``.
    loss_log_stride : int
        Record the training loss every this many epochs.
    n_jobs : int
        Slices encoded in parallel.

    Attributes
    ----------
    artifact_ : CompressedArtifact
    spec_ : NetworkSpec
    networks_ : list of NetworkParams
        Full-precision trained parameters (before quantization).
    traces_ : list of TrainTrace
    norm_bounds_ : tuple of float
    dims_ : tuple of int
    """

    def __init__(self, mode="2d", hidden_layers=3, hidden_units=256, variant="siren",
                 omega0=30.0, epochs=2000, learning_rate=None, quantization="f16",
                 backend="lzma", seed=0, loss_log_stride=1, n_jobs=1):
        self.mode = mode
        self.hidden_layers = hidden_layers
        self.hidden_units = hidden_units
        self.variant = variant
        self.omega0 = omega0
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.quantization = quantization
        self.backend = backend
        self.seed = seed
        self.loss_log_stride = loss_log_stride
        self.n_jobs = n_jobs

    def _train_config(self) -> TrainConfig:
        lr = self.learning_rate if self.learning_rate is not None else default_learning_rate(self.mode)
        return TrainConfig(
            epochs=check_positive_int(self.epochs, "epochs"),
            learning_rate=float(lr),
            seed=int(self.seed),
            loss_log_stride=check_positive_int(self.loss_log_stride, "loss_log_stride"),
        )

    def fit(self, X, y=None):
        v = check_volume(X)
        mode = GridMode.parse(self.mode)
        spec = NetworkSpec(
            in_dim=mode.in_dim,
            out_dim=v.n_measurements,
            hidden_layers=check_positive_int(self.hidden_layers, "hidden_layers"),
            hidden_units=check_positive_int(self.hidden_units, "hidden_units"),
            variant=Variant.parse(self.variant),
            omega0=self.omega0,
        )
        config = self._train_config()
        if self.quantization not in ("f16", "f32"):
            raise ValueError(f"quantization must be 'f16' or 'f32', got {self.quantization!r}")

        vn = normalize(v)
        networks, traces = encode_volume(vn, spec, config, mode, n_jobs=self.n_jobs)
        self.artifact_ = pack(
            networks, spec, mode, vn.dims, vn.voxel_size, vn.norm_bounds,
            seed=config.seed, quantization=self.quantization, backend=self.backend,
        )
        self.spec_ = spec
        self.networks_ = networks
        self.traces_ = traces
        self.norm_bounds_ = vn.norm_bounds
        self.dims_ = vn.dims
        self.voxel_size_ = vn.voxel_size
        return self

    @classmethod
    def from_artifact(cls, artifact) -> "SirenCodec":
        """Fitted codec rebuilt from a container (no training history)."""
        art = artifact if isinstance(artifact, CompressedArtifact) else CompressedArtifact.load(artifact)
        spec, dims, bounds, networks = unpack(art)
        est = cls(mode="2d" if art.mode is GridMode.SLICE2D else "3d",
                  hidden_layers=spec.hidden_layers, hidden_units=spec.hidden_units,
                  variant=spec.variant.label, omega0=spec.omega0,
                  quantization=art.quantization, backend=art.backend, seed=art.seed)
        est.artifact_ = art
        est.spec_ = spec
        est.networks_ = networks
        est.traces_ = []
        est.norm_bounds_ = bounds
        est.dims_ = dims
        est.voxel_size_ = art.voxel_size
        return est

    def reconstruct(self):
        """Decoded volume in native units (a :class:`Volume4D`)."""
        check_is_fitted(self, "artifact_")
        return decode(self.artifact_, n_jobs=self.n_jobs)

    def transform(self, X=None):
        """Return the lossy reconstruction, shaped like ``X`` when given."""
        rec = self.reconstruct()
        if X is None:
            return rec
        v = check_volume(X)
        if v.dims != rec.dims:
            raise ShapeError(f"codec was fitted on {rec.dims}, got {v.dims}")
        return same_kind(X, rec)

    def predict(self, X):
        """Query the representation at voxel positions.

        ``X`` is ``(n, 3)`` in voxel index units and may be fractional. In 2D
        mode the z position is rounded to the nearest encoded slice.
        Returns ``(n, m)`` native-unit values.
        """
        check_is_fitted(self, "artifact_")
        pos = check_positions(X, 3)
        nx, ny, nz, m = self.dims_
        spec, _, (lo, hi), networks = unpack(self.artifact_)
        coords = np.empty_like(pos)
        for axis, n in enumerate((nx, ny, nz)):
            coords[:, axis] = index_to_coordinate(pos[:, axis], n)
        out = np.empty((pos.shape[0], m))
        if self.artifact_.mode is GridMode.VOLUME3D:
            out[:] = forward_chunked(spec, networks[0], coords)
        else:
            z = np.rint(pos[:, 2]).astype(int)
            if np.any((z < 0) | (z >= nz)):
                raise ShapeError(f"z positions must round into [0, {nz - 1}]")
            for k in np.unique(z):
                rows = z == k
                out[rows] = forward_chunked(spec, networks[k], coords[rows, :2])
        return lo + out * (hi - lo)

    def score(self, X, y=None) -> float:
        """PSNR (dB) of the reconstruction against ``X`` on the fitted [0, 1] scale."""
        v = check_volume(X)
        rec = self.reconstruct()
        if v.dims != rec.dims:
            raise ShapeError(f"codec was fitted on {rec.dims}, got {v.dims}")
        lo, hi = self.norm_bounds_
        span = (hi - lo) or 1.0
        diff = (v.data - rec.data) / span
        return psnr(float(np.mean(diff * diff)))

    @property
    def compressed_size_(self) -> int:
        check_is_fitted(self, "artifact_")
        return len(self.artifact_)


class GaussianSmoother(TransformerMixin, BaseEstimator, auto_wrap_output_keys=None):
    """Separable Gaussian smoothing of each measurement (FWHM in voxels)."""

    def __init__(self, fwhm=1.5):
        self.fwhm = fwhm

    def fit(self, X, y=None):
        if not self.fwhm > 0:
            raise ValueError("fwhm must be positive")
        v = check_volume(X)
        self.dims_ = v.dims
        return self

    def transform(self, X):
        check_is_fitted(self, "dims_")
        v = check_volume(X)
        return same_kind(X, gaussian_smooth(v, self.fwhm))
