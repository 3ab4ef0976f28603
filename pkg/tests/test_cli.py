import csv
import json

import numpy as np
import pytest

from inrcodec.cli import JOBS_ENV, build_parser, main
from inrcodec.volume import read_nifti

FAST = ["--layers", "2", "--units", "16", "--epochs", "40"]


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(["phantom", "ph", "--dims", "12", "12", "2", "--snr", "30",
                 "--shell", "1000:15", "--shell", "5000:16"]) == 0
    return tmp_path


def read_manifest(path):
    return json.loads(open(path).read())


def test_phantom_outputs(workdir):
    for name in ("ph.nii", "ph.bval", "ph.bvec", "ph_mask.nii", "ph.manifest.json"):
        assert (workdir / name).exists()
    assert read_nifti("ph.nii").dims == (12, 12, 2, 32)


def test_encode_decode_metrics_pipeline(workdir, capsys):
    assert main(["encode", "ph.nii", "ph.nrvc", *FAST]) == 0
    out = capsys.readouterr().out
    encoded_psnr = float(out.split("decoded PSNR (f16): ")[1].split()[0])
    assert "compression ratio" in out
    man = read_manifest("ph.nrvc.manifest.json")
    assert man["command"] == "encode" and man["seed"] == 0
    assert set(man["outputs"]) == {"ph.nrvc", "ph.nrvc.trace.csv"}
    assert list(man["inputs"]) == ["ph.nii"] and len(man["inputs"]["ph.nii"]) == 64
    rows = list(csv.DictReader(open("ph.nrvc.trace.csv")))
    assert rows[-1]["epoch"] == "40" and {r["network"] for r in rows} == {"0", "1"}

    assert main(["decode", "ph.nrvc", "rec.nii"]) == 0
    assert main(["metrics", "ph.nii", "rec.nii", "--mask", "ph_mask.nii",
                 "--artifact", "ph.nrvc", "-o", "m"]) == 0
    report = json.loads(open("m.json").read())
    # float32 NIfTI storage adds a little on top of the f16 drift
    assert abs(report["psnr"] - encoded_psnr) <= 0.5
    assert report["compression_ratio"] > 1
    assert set(report["relative_error"]) == {"WM", "GM", "CSF", "brain"}


def test_metrics_identical(workdir):
    assert main(["metrics", "ph.nii", "ph.nii", "-o", "same"]) == 0
    report = json.loads(open("same.json").read())
    assert report["psnr"] == "inf" and report["ssim_mean"] == 1.0


def test_eval_dwi_identical_noise_free(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    main(["phantom", "clean", "--dims", "10", "10", "2"])
    assert main(["eval-dwi", "clean.nii", "clean.nii", "clean.bval", "clean.bvec",
                 "--mask", "clean_mask.nii", "--smooth-fwhm", "1.5", "--maps", "maps"]) == 0
    rows = list(csv.DictReader(open("eval_dwi.csv")))
    same = [r for r in rows if r["method"] == "test"]
    smooth = [r for r in rows if r["method"] == "smooth-fwhm1.5"]
    assert {r["metric"] for r in same} == {"FA", "MD", "RISH0", "RISH2"}
    assert all(float(r["mean"]) == 0.0 for r in same)
    assert smooth and any(float(r["mean"]) != 0.0 for r in smooth)
    assert (tmp_path / "maps_FA_relerr.nii").exists()


def test_mask_option_reports_effect(workdir, capsys):
    assert main(["encode", "ph.nii", "m.nrvc", *FAST, "--mask", "ph_mask.nii"]) == 0
    out = capsys.readouterr().out
    assert "masked:" in out and "brain PSNR" in out
    assert "brain_psnr" in read_manifest("m.nrvc.manifest.json")["results"]


def test_rerun_byte_identical(workdir):
    assert main(["encode", "ph.nii", "a.nrvc", *FAST, "--seed", "3"]) == 0
    first = (workdir / "a.nrvc").read_bytes()
    trace = (workdir / "a.nrvc.trace.csv").read_bytes()
    (workdir / "a.nrvc").unlink()
    assert main(["rerun", "a.nrvc.manifest.json"]) == 0
    assert (workdir / "a.nrvc").read_bytes() == first
    assert (workdir / "a.nrvc.trace.csv").read_bytes() == trace


def test_inputs_not_mutated(workdir):
    before = (workdir / "ph.nii").read_bytes()
    main(["encode", "ph.nii", "b.nrvc", *FAST, "--mask", "ph_mask.nii"])
    assert (workdir / "ph.nii").read_bytes() == before


def test_usage_errors(workdir, capsys):
    assert main(["encode", "ph.nii", "x.nrvc", "--units", "0"]) == 2
    assert main(["encode", "ph.nii", "x.nrvc", "--variant", "gelu"]) == 2
    assert main(["nonsense"]) == 2
    assert not (workdir / "x.nrvc").exists()


def test_format_and_corruption_exit_codes(workdir):
    (workdir / "bad.nrvc").write_bytes(b"definitely not a container" * 5)
    assert main(["decode", "bad.nrvc", "o.nii"]) == 3
    main(["encode", "ph.nii", "c.nrvc", *FAST])
    blob = bytearray((workdir / "c.nrvc").read_bytes())
    blob[-1] ^= 0xFF
    (workdir / "c.nrvc").write_bytes(bytes(blob))
    assert main(["decode", "c.nrvc", "o.nii"]) == 5
    (workdir / "bad.nii").write_bytes(b"\x00" * 400)
    assert main(["metrics", "bad.nii", "ph.nii"]) == 3


def test_divergence_exit_code(workdir, capsys):
    code = main(["encode", "ph.nii", "d.nrvc", "--layers", "1", "--units", "4",
                 "--epochs", "50", "--lr", "1e300", "--variant", "relu"])
    assert code == 4
    assert "network" in capsys.readouterr().err


def test_jobs_env_default(monkeypatch):
    monkeypatch.setenv(JOBS_ENV, "3")
    from inrcodec import cli

    assert cli._default_jobs() == 3
    monkeypatch.setenv(JOBS_ENV, "zero")
    assert cli._default_jobs() == 1


def test_reference_architecture_flags():
    args = build_parser().parse_args(["encode", "a.nii", "b.nrvc", "--layers", "3", "--units", "256"])
    assert (args.layers, args.units, args.epochs, args.quant, args.mode) == (3, 256, 2000, "f16", "2d")
    assert args.lr is None and args.omega0 == 30.0
