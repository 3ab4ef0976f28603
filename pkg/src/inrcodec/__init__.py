"""Lossy compression of 4D medical volumes with coordinate networks.

A volume is encoded by overfitting a small sine-activated network (one per
slice, or one for the whole volume) to its voxel values. The quantized network
parameters, run through a lossless back-end, form the compressed file.
"""

__version__ = "0.1.0"

from .codec import CompressedArtifact, compression_ratio, decode, pack, unpack
from .dwi import (
    dwi_maps,
    dwi_relative_errors,
    fa_md,
    fit_sh,
    fit_tensor,
    gaussian_smooth,
    make_phantom,
    make_scheme,
    rish,
)
from .estimator import GaussianSmoother, SirenCodec
from .exceptions import (
    CodecError,
    ConsistencyError,
    CorruptionError,
    DivergenceError,
    FormatError,
    ShapeError,
)
from .metrics import MetricsReport, compute_report, psnr, ssim
from .network import NetworkParams, NetworkSpec, Variant, forward, init_params, param_count
from .sampling import CoordinateGrid, GridMode, make_grid
from .training import TrainConfig, TrainTrace, adam_step, backward, encode_slice, encode_volume
from .volume import (
    GradientTable,
    Tissue,
    TissueMask,
    Volume4D,
    denormalize,
    normalize,
    read_gradient_table,
    read_nifti,
    write_nifti,
)
