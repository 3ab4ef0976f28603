"""Command-line entry points.

Every command writes exactly one JSON manifest next to its main output. The
manifest stores the argument vector and working directory, so
``inrcodec rerun <manifest>`` repeats the run.

Exit codes: 0 success, 1 other errors, 2 usage, 3 format, 4 divergence,
5 corruption.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import sys
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import __version__
from .codec import CompressedArtifact, compression_ratio, decode, pack
from .dwi import dwi_relative_errors, gaussian_smooth, make_phantom, make_scheme, write_dwi_csv
from .exceptions import CodecError, ShapeError
from .metrics import compute_report, psnr
from .network import NetworkSpec, Variant
from .sampling import GridMode
from .training import TrainConfig, default_learning_rate, encode_volume, write_traces_csv
from .volume import (
    TissueMask,
    Volume4D,
    nifti_layout,
    normalize,
    read_gradient_table,
    read_nifti,
    write_gradient_table,
    write_nifti,
)

logger = logging.getLogger("inrcodec")

JOBS_ENV = "INRCODEC_JOBS"
EXIT_USAGE = 2


# --------------------------------------------------------------------------
# argument types


def positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def positive_float(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not value > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {text}")
    return value


def job_count(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value == 0:
        raise argparse.ArgumentTypeError("job count must be non-zero (-1 uses every core)")
    return value


def shell_spec(text: str):
    """``B:N`` -> ``(b-value, direction count)``."""
    try:
        b, n = text.split(":")
        b, n = float(b), int(n)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected B:N such as 1000:15, got {text!r}") from None
    if b <= 0 or n < 1:
        raise argparse.ArgumentTypeError(f"shell {text!r} needs b > 0 and N >= 1")
    return b, n


def _variant(text: str) -> str:
    try:
        return Variant.parse(text).label
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _default_jobs() -> int:
    raw = os.environ.get(JOBS_ENV, "1")
    try:
        return job_count(raw)
    except argparse.ArgumentTypeError:
        logger.warning("ignoring %s=%r", JOBS_ENV, raw)
        return 1


# --------------------------------------------------------------------------
# manifest


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


class Run:
    """Collects what a command read and wrote, then dumps the manifest."""

    def __init__(self, command: str, argv, args):
        self.command = command
        self.argv = list(argv)
        self.config = {
            k: (str(v) if isinstance(v, Path) else v)
            for k, v in vars(args).items() if k not in ("func",)
        }
        self.inputs = {}
        self.outputs = []
        self.seed = getattr(args, "seed", None)
        self.extra = {}
        self._start = time.perf_counter()

    def read(self, path):
        if path is not None:
            self.inputs[str(path)] = sha256_file(path)
        return path

    def wrote(self, path):
        self.outputs.append(str(path))
        return path

    def write_manifest(self, path) -> None:
        doc = {
            "command": self.command,
            "argv": self.argv,
            "cwd": os.getcwd(),
            "config": self.config,
            "inputs": self.inputs,
            "seed": self.seed,
            "tool_version": __version__,
            "wall_time": time.perf_counter() - self._start,
            "outputs": self.outputs,
        }
        doc.update(self.extra)
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True, default=_json_default)
            fh.write("\n")


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, float) and math.isinf(obj):
        return "inf"
    return str(obj)


def _manifest_path(args, stem) -> str:
    return args.manifest or f"{stem}.manifest.json"


def _fmt_db(value: float) -> str:
    return "inf" if math.isinf(value) else f"{value:.2f}"


# --------------------------------------------------------------------------
# commands


def _apply_mask(v: Volume4D, mask: TissueMask) -> Volume4D:
    """Flatten background to the in-brain minimum so it costs no dynamic range."""
    if mask.dims != v.spatial_dims:
        raise ShapeError(f"mask is {mask.dims}, volume is {v.spatial_dims}")
    brain = mask.select("brain")
    if not np.any(brain):
        return v
    data = v.data.copy()
    data[~brain] = data[brain].min()
    return Volume4D(data, v.voxel_size, header=v.header)


def cmd_encode(args, run: Run) -> int:
    v = read_nifti(run.read(args.input))
    mode = GridMode.parse(args.mode)
    mask = None
    if args.mask:
        mask = TissueMask.from_volume(read_nifti(run.read(args.mask)))
        v = _apply_mask(v, mask)
    spec = NetworkSpec(mode.in_dim, v.n_measurements, args.layers, args.units,
                       Variant.parse(args.variant), args.omega0)
    lr = args.lr if args.lr is not None else default_learning_rate(mode)
    config = TrainConfig(epochs=args.epochs, learning_rate=lr, seed=args.seed,
                         loss_log_stride=args.log_stride)

    vn = normalize(v)
    networks, traces = encode_volume(vn, spec, config, mode, n_jobs=args.jobs)
    art = pack(networks, spec, mode, vn.dims, vn.voxel_size, vn.norm_bounds,
               seed=args.seed, quantization=args.quant, backend=args.backend)
    size = art.save(run.wrote(args.output))
    trace_path = args.trace or f"{args.output}.trace.csv"
    write_traces_csv(traces, run.wrote(trace_path))

    train_psnr = psnr(float(np.mean([t.final_mse for t in traces])))
    rec = decode(art, n_jobs=args.jobs, normalized=True)
    decoded_psnr = psnr(float(np.mean((rec.data - vn.data) ** 2)))
    vox_offset, sample_bytes = nifti_layout(args.input)
    ratio = compression_ratio(vox_offset + sample_bytes, size)
    payload_ratio = compression_ratio(sample_bytes, len(art.payload))

    print(f"encoded {art.n_networks} network(s): {spec.variant.label} "
          f"{spec.hidden_layers}x{spec.hidden_units}, mode {args.mode}, {args.epochs} epochs")
    print(f"final training PSNR: {_fmt_db(train_psnr)} dB")
    print(f"decoded PSNR ({args.quant}): {_fmt_db(decoded_psnr)} dB")
    print(f"container: {size} bytes, compression ratio {ratio:.3f} "
          f"(payload ratio {payload_ratio:.3f})")
    run.extra["results"] = {
        "train_psnr": train_psnr,
        "decoded_psnr": decoded_psnr,
        "container_bytes": size,
        "compression_ratio": ratio,
        "payload_ratio": payload_ratio,
    }
    if mask is not None:
        brain = mask.select("brain")
        diff = (rec.data - vn.data)[brain]
        brain_psnr = psnr(float(np.mean(diff * diff)))
        print(f"masked: background flattened, {int(brain.sum())} brain voxels, "
              f"brain PSNR {_fmt_db(brain_psnr)} dB")
        run.extra["results"]["brain_psnr"] = brain_psnr
    run.write_manifest(_manifest_path(args, args.output))
    return 0


def cmd_decode(args, run: Run) -> int:
    art = CompressedArtifact.load(run.read(args.input))
    v = decode(art, n_jobs=args.jobs)
    write_nifti(v, run.wrote(args.output))
    print(f"decoded {art.dims} from {art.n_networks} network(s) into {args.output}")
    run.write_manifest(_manifest_path(args, args.output))
    return 0


def cmd_metrics(args, run: Run) -> int:
    truth = read_nifti(run.read(args.truth))
    test = read_nifti(run.read(args.test))
    mask = TissueMask.from_volume(read_nifti(run.read(args.mask))) if args.mask else None
    ratio = payload_ratio = None
    if args.artifact:
        art = CompressedArtifact.load(run.read(args.artifact))
        vox_offset, sample_bytes = nifti_layout(args.truth)
        ratio = compression_ratio(vox_offset + sample_bytes, len(art))
        payload_ratio = compression_ratio(sample_bytes, len(art.payload))
    report = compute_report(truth, test, mask=mask, floor=args.floor,
                            compression_ratio=ratio, payload_ratio=payload_ratio)
    json_path, csv_path = f"{args.out}.json", f"{args.out}.csv"
    with open(run.wrote(json_path), "w") as fh:
        fh.write(report.to_json() + "\n")
    with open(run.wrote(csv_path), "w", newline="") as fh:
        fh.write(report.to_csv())
    print(f"PSNR {_fmt_db(report.psnr)} dB (slice mean {_fmt_db(report.psnr_slice_mean)} dB), "
          f"SSIM {report.ssim_mean:.4f}")
    for label, (mean, std) in report.relative_error.items():
        print(f"relative error {label}: {mean:.3f} +/- {std:.3f} %")
    if ratio is not None:
        print(f"compression ratio {ratio:.3f} (payload {payload_ratio:.3f})")
    run.write_manifest(_manifest_path(args, args.out))
    return 0


def cmd_eval_dwi(args, run: Run) -> int:
    truth = read_nifti(run.read(args.truth))
    test = read_nifti(run.read(args.test))
    g = read_gradient_table(run.read(args.bvals), run.read(args.bvecs))
    mask = TissueMask.from_volume(read_nifti(run.read(args.mask))) if args.mask else None
    kwargs = dict(b_tensor=args.b_tensor, b_sh=args.b_sh, tol=args.tol)

    errors, rows = dwi_relative_errors(truth, test, g, mask, absolute=args.absolute, **kwargs)
    for r in rows:
        r["method"] = args.method
    if args.maps:
        for name, emap in errors.items():
            path = f"{args.maps}_{name}_relerr.nii"
            write_nifti(Volume4D(emap, truth.voxel_size), run.wrote(path))
    for fwhm in args.smooth_fwhm or []:
        smoothed = gaussian_smooth(truth, fwhm)
        _, srows = dwi_relative_errors(truth, smoothed, g, mask, absolute=args.absolute,
                                       **kwargs)
        for r in srows:
            r["method"] = f"smooth-fwhm{fwhm:g}"
        rows.extend(srows)
    if not rows:
        raise ShapeError("no downstream metric could be computed (missing shells?)")

    csv_path = f"{args.out}.csv"
    write_dwi_csv(rows, run.wrote(csv_path), method=args.method, fwhm_units="voxel")
    kind = "|relative error|" if args.absolute else "relative error"
    for r in rows:
        print(f"{r['method']:>16} {r['metric']:>5} {r['mask']:>5}: "
              f"{kind} {r['mean']:.3f} +/- {r['std']:.3f} % (n={r['n']})")
    run.write_manifest(_manifest_path(args, args.out))
    return 0


def cmd_phantom(args, run: Run) -> int:
    shells = dict(args.shell) if args.shell else {1000.0: 15, 5000.0: 20}
    scheme = make_scheme(n_b0=args.b0, shells=shells)
    snr = None if args.snr is None or math.isinf(args.snr) else args.snr
    v, mask, _ = make_phantom(args.dims, scheme, seed=args.seed, snr=snr,
                              voxel_size=args.voxel_size)
    prefix = args.prefix
    write_nifti(v, run.wrote(f"{prefix}.nii"))
    write_gradient_table(scheme, run.wrote(f"{prefix}.bval"), run.wrote(f"{prefix}.bvec"))
    write_nifti(mask.to_volume(v.voxel_size), run.wrote(f"{prefix}_mask.nii"))
    print(f"phantom {v.dims} (snr {'inf' if snr is None else snr}) written to {prefix}.*")
    run.write_manifest(_manifest_path(args, prefix))
    return 0


def cmd_rerun(args, run: Run) -> int:
    with open(args.manifest_file) as fh:
        doc = json.load(fh)
    argv = doc["argv"]
    if argv and argv[0] == "rerun":
        raise ValueError("refusing to rerun a rerun manifest")
    with _chdir(doc.get("cwd", os.getcwd())):
        return main(argv)


@contextmanager
def _chdir(path):
    old = os.getcwd()
    os.chdir(path)
    try:
        yield
    finally:
        os.chdir(old)


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="inrcodec",
        description="Compress 4D volumes by overfitting coordinate networks.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_manifest(p):
        p.add_argument("--manifest", help="manifest path (default: <output>.manifest.json)")

    jobs_help = f"parallel slice workers (default from ${JOBS_ENV}, else 1)"

    p = sub.add_parser("encode", help="train networks and write a container")
    p.add_argument("input", help="NIfTI volume (.nii or .nii.gz)")
    p.add_argument("output", help="container path")
    p.add_argument("--mode", choices=["2d", "3d"], default="2d")
    p.add_argument("--layers", type=positive_int, default=3, help="hidden layers")
    p.add_argument("--units", type=positive_int, default=256, help="units per hidden layer")
    p.add_argument("--variant", type=_variant, default="siren",
                   help="siren, siren-relu, mlp-relu, mlp-tanh or mlp-siren")
    p.add_argument("--epochs", type=positive_int, default=2000)
    p.add_argument("--lr", type=positive_float, default=None,
                   help="learning rate (default 3e-4 in 2d, 2e-4 in 3d)")
    p.add_argument("--omega0", type=positive_float, default=30.0)
    p.add_argument("--quant", choices=["f16", "f32"], default="f16")
    p.add_argument("--backend", choices=["lzma", "deflate", "none"], default="lzma")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mask", help="tissue label NIfTI; background is flattened before encoding")
    p.add_argument("--jobs", type=job_count, default=None, help=jobs_help)
    p.add_argument("--log-stride", type=positive_int, default=1,
                   help="record the loss every N epochs")
    p.add_argument("--trace", help="training trace CSV (default: <output>.trace.csv)")
    add_manifest(p)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", help="rebuild a NIfTI volume from a container")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--jobs", type=job_count, default=None, help=jobs_help)
    add_manifest(p)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("metrics", help="PSNR, SSIM and relative error between two volumes")
    p.add_argument("truth")
    p.add_argument("test")
    p.add_argument("--mask")
    p.add_argument("--artifact", help="container, to report compression ratios")
    p.add_argument("--floor", type=positive_float, default=1e-6,
                   help="denominator floor of the relative error")
    p.add_argument("-o", "--out", default="metrics", help="output prefix for .json/.csv")
    add_manifest(p)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("eval-dwi", help="relative error of FA, MD, RISH0 and RISH2")
    p.add_argument("truth")
    p.add_argument("test")
    p.add_argument("bvals")
    p.add_argument("bvecs")
    p.add_argument("--mask")
    p.add_argument("--b-tensor", type=positive_float, default=1000.0)
    p.add_argument("--b-sh", type=positive_float, default=5000.0)
    p.add_argument("--tol", type=float, default=100.0, help="shell b-value tolerance")
    p.add_argument("--method", default="test", help="label of the test rows")
    p.add_argument("--smooth-fwhm", type=positive_float, action="append",
                   help="add Gaussian-smoothing baseline rows (FWHM in voxels); repeatable")
    p.add_argument("--absolute", action="store_true", help="summarize |relative error|")
    p.add_argument("--maps", help="also write relative-error maps as <MAPS>_<metric>_relerr.nii")
    p.add_argument("-o", "--out", default="eval_dwi", help="output prefix for .csv")
    add_manifest(p)
    p.set_defaults(func=cmd_eval_dwi)

    p = sub.add_parser("phantom", help="write a synthetic diffusion phantom")
    p.add_argument("prefix", help="writes <prefix>.nii, .bval, .bvec and _mask.nii")
    p.add_argument("--dims", type=positive_int, nargs=3, default=[32, 32, 4])
    p.add_argument("--snr", type=positive_float, default=None,
                   help="Rician SNR relative to mean brain S0 (default: noiseless)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--b0", type=positive_int, default=1, help="number of b=0 volumes")
    p.add_argument("--shell", type=shell_spec, action="append",
                   help="B:N diffusion shell; repeatable (default 1000:15 and 5000:20)")
    p.add_argument("--voxel-size", type=positive_float, nargs=3, default=[2.0, 2.0, 2.0])
    add_manifest(p)
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("rerun", help="repeat the run recorded in a manifest")
    p.add_argument("manifest_file")
    p.set_defaults(func=cmd_rerun)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else 0
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "jobs", 0) is None:
        args.jobs = _default_jobs()

    run = Run(args.command, argv, args)
    try:
        return args.func(args, run)
    except CodecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
