import json

import numpy as np
import pytest
from scipy.ndimage import gaussian_filter
from scipy.stats import gennorm

from rootsr.brisque import (
    BrisqueModelError,
    SvrModel,
    aggd_fit,
    brisque_features,
    brisque_score,
    flip_permutation,
    ggd_fit,
    load_model,
    mscn,
)
from rootsr.errors import DegenerateInputError
from rootsr.synthgen import SceneParams, generate_scene


def aggd_samples(rng, alpha, sl, sr, n):
    """Asymmetric GGD: each side a half generalized Gaussian with its own scale."""
    mag = np.abs(gennorm.rvs(alpha, size=n, random_state=rng))
    left = rng.random(n) < sl / (sl + sr)  # side probability proportional to scale
    return np.where(left, -sl * mag, sr * mag)


@pytest.mark.parametrize("alpha", [1.0, 2.0, 4.0])
def test_ggd_alpha_recovered(alpha):
    x = gennorm.rvs(alpha, scale=0.7, size=100_000, random_state=np.random.default_rng(int(alpha * 10)))
    a, var = ggd_fit(x)
    assert abs(a / alpha - 1) <= 0.10
    assert var == pytest.approx(np.mean(x * x))


def test_aggd_gaussian():
    x = np.random.default_rng(1).standard_normal(100_000)
    fit = aggd_fit(x)
    assert 1.8 <= fit.alpha <= 2.2
    assert abs(fit.sigma_l / fit.sigma_r - 1) <= 0.05


def test_aggd_laplace():
    x = np.random.default_rng(2).laplace(size=100_000)
    assert 0.9 <= aggd_fit(x).alpha <= 1.1


def test_aggd_symmetric_pool_has_zero_eta():
    x = np.random.default_rng(3).gamma(2.0, size=50_000)
    fit = aggd_fit(np.concatenate([x, -x]))
    assert abs(fit.mean_eta) <= 1e-12
    assert fit.sigma_l == pytest.approx(fit.sigma_r)


@pytest.mark.parametrize("alpha", [1.0, 2.0, 4.0])
def test_aggd_asymmetric_recovery(alpha):
    rng = np.random.default_rng(7)
    x = aggd_samples(rng, alpha, 0.5, 1.0, 100_000)
    fit = aggd_fit(x)
    assert abs(fit.alpha / alpha - 1) <= 0.10
    assert fit.mean_eta > 0  # heavier right side shifts the mean right


def test_fit_degenerate():
    with pytest.raises(DegenerateInputError):
        ggd_fit(np.ones(100))
    with pytest.raises(DegenerateInputError):
        aggd_fit(np.arange(10.0))
    with pytest.raises(DegenerateInputError):
        aggd_fit(np.abs(np.random.default_rng(0).standard_normal(200)))


@pytest.fixture(scope="module")
def scene_img():
    return generate_scene(SceneParams(height=96, width=96, seed=5)).image


def test_features_shape_and_determinism(scene_img):
    f = brisque_features(scene_img)
    assert f.shape == (36,) and np.all(np.isfinite(f))
    assert np.array_equal(f, brisque_features(scene_img))


def mscn_oracle(gray255):
    """MSCN through scipy's separable Gaussian filter (7 taps, sigma 7/6, reflect)."""
    kw = dict(sigma=7 / 6, truncate=3 / (7 / 6), mode="reflect")
    mu = gaussian_filter(gray255, **kw)
    sd = np.sqrt(np.abs(gaussian_filter(gray255 * gray255, **kw) - mu * mu))
    return (gray255 - mu) / (sd + 1.0)


def test_mscn_matches_separable_oracle(scene_img):
    gray = scene_img.mean(axis=2) * 255
    assert np.allclose(mscn(gray), mscn_oracle(gray), atol=1e-9)


def test_white_noise_mscn_alpha():
    img = np.random.default_rng(4).standard_normal((128, 128)) * 0.08 + 0.5
    alpha = brisque_features(np.clip(img, 0, 1)[:, :, None])[0]
    assert alpha == pytest.approx(ggd_fit(mscn_oracle(np.clip(img, 0, 1) * 255))[0])
    # local normalisation over ~17 effective samples makes white-noise MSCN platykurtic
    assert 2.5 <= alpha <= 3.5


@pytest.mark.xfail(strict=True, reason="7x7 local normalisation makes white-noise MSCN platykurtic (alpha about 3)")
def test_white_noise_mscn_alpha_near_two():
    img = np.random.default_rng(4).standard_normal((128, 128)) * 0.08 + 0.5
    assert abs(brisque_features(np.clip(img, 0, 1)[:, :, None])[0] - 2.0) <= 0.3


def test_mscn_near_invariant_to_affine_scaling():
    gray = np.random.default_rng(6).random((64, 64)) * 255
    a = mscn(gray)
    b = mscn((0.5 * gray / 255 + 0.25) * 255)
    assert np.sqrt(np.mean((a - b) ** 2)) / np.sqrt(np.mean(a * a)) < 0.05


def test_constant_and_small_images():
    with pytest.raises(DegenerateInputError):
        brisque_features(np.full((40, 40, 1), 0.5))
    with pytest.raises(ValueError):
        brisque_features(np.zeros((20, 40, 1)))


@pytest.mark.parametrize("kind", ["lr", "ud", "transpose"])
def test_flip_permutation(scene_img, kind):
    img = scene_img[:64, :64]
    flipped = {"lr": img[:, ::-1], "ud": img[::-1], "transpose": img.transpose(1, 0, 2)}[kind]
    assert np.allclose(brisque_features(flipped), brisque_features(img)[flip_permutation(kind)], rtol=1e-9, atol=1e-9)


def _model(**kw):
    d = {
        "version": 1,
        "kernel": "rbf",
        "gamma": 0.05,
        "bias": 12.5,
        "feature_min": [0.0] * 36,
        "feature_max": [2.0] * 36,
        "support_vectors": [],
        "coefficients": [],
    }
    d.update(kw)
    return d


def test_zero_model_returns_bias(tmp_path, scene_img):
    path = tmp_path / "m.json"
    path.write_text(json.dumps(_model(support_vectors=[[0.3] * 36], coefficients=[0.0])))
    assert brisque_score(brisque_features(scene_img), path) == 12.5


def test_single_support_vector_at_query(scene_img):
    feats = brisque_features(scene_img)
    model = SvrModel(0.05, 1.0, feats - 1.0, feats + 1.0, np.zeros((1, 36)), np.array([3.0]))
    # the query scales to the centre of its range, i.e. the support vector itself
    assert brisque_score(feats, model) == pytest.approx(4.0)


def test_model_errors(tmp_path):
    with pytest.raises(BrisqueModelError):
        load_model(tmp_path / "missing.json")
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(_model(version=2)))
    with pytest.raises(BrisqueModelError, match="version"):
        load_model(p)
    p.write_text(json.dumps(_model(feature_min=[0.0] * 5)))
    with pytest.raises(BrisqueModelError):
        load_model(p)
    p.write_text("{")
    with pytest.raises(BrisqueModelError):
        load_model(p)
