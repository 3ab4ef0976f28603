import gzip
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from inrcodec.exceptions import EmptyShellError, FormatError, ShapeError, UnsupportedError
from inrcodec.volume import (
    GradientTable,
    Tissue,
    TissueMask,
    Volume4D,
    denormalize,
    nifti_layout,
    nifti_nbytes,
    normalize,
    read_gradient_table,
    read_nifti,
    select_shell,
    uncompressed_nifti_size,
    write_gradient_table,
    write_nifti,
)


def _roundtrip(v, path):
    write_nifti(v, path)
    return read_nifti(path)


class TestVolume4D:
    def test_3d_array_gets_one_measurement(self):
        v = Volume4D(np.zeros((2, 3, 4)))
        assert v.dims == (2, 3, 4, 1)

    def test_sample_count_matches_dims(self, rng):
        v = Volume4D(rng.normal(size=(3, 4, 5, 6)))
        assert np.prod(v.dims) == v.data.size

    def test_rejects_bad_rank(self):
        with pytest.raises(ShapeError):
            Volume4D(np.zeros((2, 2)))


class TestNifti:
    def test_roundtrip_small_float32(self, tmp_path, rng):
        data = rng.normal(size=(4, 4, 2, 3)).astype(np.float32)
        v = Volume4D(data, (1.0, 2.0, 3.0))
        back = _roundtrip(v, tmp_path / "a.nii")
        assert back.dims == (4, 4, 2, 3)
        assert back.voxel_size == (1.0, 2.0, 3.0)
        np.testing.assert_array_equal(back.data, data)

    def test_constant_volume(self, tmp_path):
        back = _roundtrip(Volume4D(np.full((3, 3, 3, 2), 7.5)), tmp_path / "c.nii")
        assert np.all(back.data == 7.5)

    def test_pixdim_fields(self, tmp_path):
        path = tmp_path / "p.nii"
        write_nifti(Volume4D(np.zeros((2, 2, 2, 2)), (1.5, 1.5, 3.0)), path)
        raw = path.read_bytes()
        assert struct.unpack_from("<3f", raw, 80) == (1.5, 1.5, 3.0)

    def test_gzip_roundtrip_and_determinism(self, tmp_path, rng):
        v = Volume4D(rng.normal(size=(4, 3, 2, 2)))
        write_nifti(v, tmp_path / "a.nii.gz")
        write_nifti(v, tmp_path / "b.nii.gz")
        assert (tmp_path / "a.nii.gz").read_bytes() == (tmp_path / "b.nii.gz").read_bytes()
        back = read_nifti(tmp_path / "a.nii.gz")
        np.testing.assert_array_equal(back.data, v.data.astype(np.float32))
        assert uncompressed_nifti_size(tmp_path / "a.nii.gz") == nifti_nbytes(v)

    def test_header_bytes_preserved(self, tmp_path, rng):
        path = tmp_path / "h.nii"
        write_nifti(Volume4D(rng.normal(size=(2, 2, 2, 2))), path)
        raw = bytearray(path.read_bytes())
        raw[148:148 + 11] = b"description"
        path.write_bytes(bytes(raw))
        v = read_nifti(path)
        write_nifti(v, tmp_path / "h2.nii")
        assert (tmp_path / "h2.nii").read_bytes()[148:159] == b"description"

    def test_wrong_magic(self, tmp_path):
        path = tmp_path / "m.nii"
        write_nifti(Volume4D(np.zeros((2, 2, 2, 1))), path)
        raw = bytearray(path.read_bytes())
        raw[344:348] = b"xxxx"
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError):
            read_nifti(path)

    def test_five_dimensional_unsupported(self, tmp_path):
        path = tmp_path / "5d.nii"
        write_nifti(Volume4D(np.zeros((2, 2, 2, 2))), path)
        raw = bytearray(path.read_bytes())
        struct.pack_into("<8h", raw, 40, 5, 2, 2, 2, 2, 1, 1, 1)
        path.write_bytes(bytes(raw))
        with pytest.raises(UnsupportedError):
            read_nifti(path)

    def test_int16_with_scaling_big_endian(self, tmp_path):
        # hand-built big-endian int16 image with scl_slope 0.5, offset 1
        hdr = bytearray(352)
        struct.pack_into(">i", hdr, 0, 348)
        struct.pack_into(">8h", hdr, 40, 3, 2, 2, 1, 1, 1, 1, 1)
        struct.pack_into(">2h", hdr, 70, 4, 16)
        struct.pack_into(">8f", hdr, 76, 1, 2, 2, 2, 1, 0, 0, 0)
        struct.pack_into(">f", hdr, 108, 352.0)
        struct.pack_into(">2f", hdr, 112, 0.5, 1.0)
        hdr[344:348] = b"n+1\x00"
        body = np.array([0, 2, 4, 6], dtype=">i2").tobytes()
        path = tmp_path / "be.nii.gz"
        path.write_bytes(gzip.compress(bytes(hdr) + body))
        v = read_nifti(path)
        assert v.dims == (2, 2, 1, 1)
        # Fortran order: x fastest
        np.testing.assert_array_equal(v.data[:, :, 0, 0], [[1.0, 3.0], [2.0, 4.0]])
        assert v.voxel_size == (2.0, 2.0, 2.0)

    def test_truncated_file(self, tmp_path):
        path = tmp_path / "t.nii"
        path.write_bytes(b"\x00" * 100)
        with pytest.raises(FormatError):
            read_nifti(path)

    def test_layout(self, tmp_path):
        path = tmp_path / "l.nii"
        write_nifti(Volume4D(np.zeros((4, 4, 2, 3))), path)
        assert nifti_layout(path) == (352, 4 * 4 * 2 * 3 * 4)

    @settings(max_examples=20, deadline=None)
    @given(arrays(np.float32, st.tuples(st.integers(1, 8), st.integers(1, 8),
                                        st.integers(1, 4), st.integers(1, 6)),
                  elements=st.floats(-1e6, 1e6, width=32)))
    def test_roundtrip_property(self, tmp_path_factory, data):
        path = tmp_path_factory.mktemp("rt") / "r.nii"
        v = Volume4D(data, (1.25, 1.5, 2.0))
        back = _roundtrip(v, path)
        assert back.dims == v.dims and back.voxel_size == v.voxel_size
        np.testing.assert_array_equal(back.data, data.astype(np.float64))


class TestGradientTable:
    def test_parse_columns(self, tmp_path):
        (tmp_path / "bvals").write_text("0 1000 1000\n")
        (tmp_path / "bvecs").write_text("1 0 0\n0 1 0\n0 0 1\n")
        g = read_gradient_table(tmp_path / "bvals", tmp_path / "bvecs")
        np.testing.assert_array_equal(g.bvals, [0, 1000, 1000])
        np.testing.assert_array_equal(g.bvecs, np.eye(3))

    def test_renormalizes(self, tmp_path):
        (tmp_path / "bvals").write_text("1000\n")
        (tmp_path / "bvecs").write_text("2\n0\n0\n")
        g = read_gradient_table(tmp_path / "bvals", tmp_path / "bvecs")
        np.testing.assert_array_equal(g.bvecs, [[1.0, 0.0, 0.0]])

    def test_length_mismatch(self, tmp_path):
        (tmp_path / "bvals").write_text("0 1000 1000\n")
        (tmp_path / "bvecs").write_text("1 0 0 0\n0 1 0 0\n0 0 1 0\n")
        with pytest.raises(FormatError):
            read_gradient_table(tmp_path / "bvals", tmp_path / "bvecs")

    def test_write_read(self, tmp_path, scheme):
        write_gradient_table(scheme, tmp_path / "b.bval", tmp_path / "b.bvec")
        g = read_gradient_table(tmp_path / "b.bval", tmp_path / "b.bvec")
        np.testing.assert_allclose(g.bvecs, scheme.bvecs, atol=1e-15)
        np.testing.assert_array_equal(g.bvals, scheme.bvals)
        weighted = g.bvals > 0
        np.testing.assert_allclose(np.linalg.norm(g.bvecs[weighted], axis=1), 1.0, atol=1e-6)


class TestNormalize:
    def test_linear_map(self):
        v = normalize(Volume4D(np.array([0.0, 1000.0, 2000.0]).reshape(3, 1, 1, 1)))
        np.testing.assert_array_equal(v.data.ravel(), [0.0, 0.5, 1.0])
        assert v.norm_bounds == (0.0, 2000.0)

    def test_unit_range_unchanged(self, rng):
        data = rng.uniform(size=(3, 3, 2, 2))
        data.flat[0], data.flat[1] = 0.0, 1.0
        v = normalize(Volume4D(data))
        np.testing.assert_array_equal(v.data, data)

    def test_constant(self):
        v = normalize(Volume4D(np.full((2, 2, 2, 2), 5.0)))
        assert np.all(v.data == 0.0) and v.norm_bounds == (5.0, 5.0)
        assert np.all(denormalize(v).data == 5.0)

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, (3, 4, 2, 2), elements=st.floats(-1e4, 1e4)))
    def test_idempotent_and_invertible(self, data):
        v = Volume4D(data)
        n1 = normalize(v)
        n2 = normalize(n1)
        np.testing.assert_array_equal(n2.data, n1.data)
        assert n2.norm_bounds == n1.norm_bounds
        assert n1.data.min() >= 0.0 and n1.data.max() <= 1.0
        lo, hi = n1.norm_bounds
        assert lo <= hi
        back = denormalize(n1).data
        ulp = np.spacing(np.float32(max(hi - lo, 1e-30)))
        assert np.max(np.abs(back - data)) <= max(ulp, 4 * np.spacing(np.abs(data).max()))


class TestSelectShell:
    def _table(self):
        bvals = np.array([0.0, 995.0, 1005.0, 5000.0])
        bvecs = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], dtype=float)
        return Volume4D(np.arange(8.0).reshape(2, 1, 1, 4)), GradientTable(bvals, bvecs)

    def test_window(self):
        v, g = self._table()
        sub, gs = select_shell(v, g, 1000, 100)
        np.testing.assert_array_equal(gs.bvals, [995, 1005])
        np.testing.assert_array_equal(sub.data, v.data[..., 1:3])

    def test_empty(self):
        v, g = self._table()
        with pytest.raises(EmptyShellError):
            select_shell(v, g, 3000, 10)

    def test_b0(self):
        v, g = self._table()
        _, gs = select_shell(v, g, 0, 0)
        np.testing.assert_array_equal(gs.bvals, [0.0])

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.sampled_from([0.0, 700.0, 1000.0, 2000.0]), min_size=1, max_size=12))
    def test_shells_partition(self, bvals):
        m = len(bvals)
        bvecs = np.tile([1.0, 0.0, 0.0], (m, 1))
        v = Volume4D(np.arange(float(m)).reshape(1, 1, 1, m))
        g = GradientTable(bvals, bvecs)
        pieces = [select_shell(v, g, b, 0.0)[0].data.ravel() for b in sorted(set(bvals))]
        assert sorted(np.concatenate(pieces)) == list(range(m))


class TestTissueMask:
    def test_select(self):
        mask = TissueMask(np.array([0, 1, 2, 3]).reshape(4, 1, 1))
        assert mask.select(Tissue.WM).sum() == 1
        assert mask.select("csf").sum() == 1
        assert mask.select("brain").sum() == 3

    def test_rejects_bad_labels(self):
        with pytest.raises(FormatError):
            TissueMask(np.full((2, 2, 2), 7))
