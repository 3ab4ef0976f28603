import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.pipeline import Pipeline

from inrcodec.codec import decode
from inrcodec.estimator import GaussianSmoother, SirenCodec
from inrcodec.exceptions import ShapeError
from inrcodec.volume import Volume4D


@pytest.fixture(scope="module")
def volume():
    rng = np.random.default_rng(0)
    x = np.linspace(0, np.pi, 8)
    base = np.sin(x)[:, None, None, None] * np.cos(x)[None, :, None, None]
    return 100 + 50 * base + rng.normal(scale=0.5, size=(8, 8, 2, 3))


@pytest.fixture(scope="module")
def fitted(volume):
    return SirenCodec(hidden_layers=2, hidden_units=16, epochs=60).fit(volume)


def test_get_params_and_clone():
    est = SirenCodec(hidden_units=32, variant="mlp-tanh")
    params = est.get_params()
    assert params["hidden_units"] == 32 and params["variant"] == "mlp-tanh"
    twin = clone(est)
    assert twin.get_params() == params and twin is not est
    est.set_params(epochs=5)
    assert est.epochs == 5


def test_fit_transform_shapes(volume, fitted):
    out = fitted.transform(volume)
    assert isinstance(out, np.ndarray) and out.shape == volume.shape
    rec = fitted.transform()
    assert isinstance(rec, Volume4D) and rec.dims == volume.shape
    assert len(fitted.networks_) == 2 and len(fitted.traces_) == 2
    assert fitted.compressed_size_ == len(fitted.artifact_.to_bytes())


def test_score_matches_decode(volume, fitted):
    rec = decode(fitted.artifact_)
    lo, hi = fitted.norm_bounds_
    mse = np.mean(((rec.data - volume) / (hi - lo)) ** 2)
    assert fitted.score(volume) == pytest.approx(-10 * np.log10(mse), abs=1e-9)


def test_predict_on_grid_matches_transform(volume, fitted):
    pos = np.array([[0, 0, 0], [7, 3, 1], [4, 5, 0]], dtype=float)
    pred = fitted.predict(pos)
    rec = fitted.transform(volume)
    for row, (i, j, k) in zip(pred, pos.astype(int)):
        np.testing.assert_array_equal(row, rec[i, j, k])


def test_predict_rejects_bad_slice(fitted):
    with pytest.raises(ShapeError):
        fitted.predict([[0, 0, 5]])


def test_from_artifact_roundtrip(volume, fitted, tmp_path):
    path = tmp_path / "a.nrvc"
    fitted.artifact_.save(path)
    other = SirenCodec.from_artifact(path)
    assert other.get_params()["hidden_units"] == 16 and other.mode == "2d"
    np.testing.assert_array_equal(other.transform(volume), fitted.transform(volume))


def test_not_fitted():
    with pytest.raises(NotFittedError):
        SirenCodec().transform()


def test_invalid_params(volume):
    with pytest.raises(ValueError):
        SirenCodec(hidden_units=0, epochs=1).fit(volume)
    with pytest.raises(ValueError):
        SirenCodec(quantization="f8", epochs=1, hidden_units=2).fit(volume)
    with pytest.raises(ValueError):
        SirenCodec(epochs=1).fit(np.full((2, 2, 2), np.nan))


def test_shape_mismatch(fitted):
    with pytest.raises(ShapeError):
        fitted.transform(np.zeros((4, 4, 2, 3)))


def test_volume_mode(volume):
    est = SirenCodec(mode="3d", hidden_layers=1, hidden_units=8, epochs=5).fit(volume)
    assert len(est.networks_) == 1 and est.transform(volume).shape == volume.shape
    assert SirenCodec.from_artifact(est.artifact_).mode == "3d"


def test_smoother_pipeline(volume):
    pipe = Pipeline([("smooth", GaussianSmoother(fwhm=1.5))])
    out = pipe.fit_transform(volume)
    assert out.shape == volume.shape and out.var() < volume.var()
    with pytest.raises(ValueError):
        GaussianSmoother(fwhm=0).fit(volume)
