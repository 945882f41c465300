import numpy as np
import pytest

from dmplug.errors import ContractError
from dmplug.fixtures import (gmm_fixture, lowrank_gaussian_fixture, make_fixture,
                             smooth_image_prior, smooth_images_fixture)


@pytest.mark.parametrize("kind", ["gmm", "lowrank_gaussian", "smooth_images"])
def test_fixtures_are_seeded(kind):
    a = make_fixture(kind, seed=3, n=20)
    b = make_fixture(kind, seed=3, n=20)
    c = make_fixture(kind, seed=4, n=20)
    assert np.array_equal(a.samples, b.samples)
    assert not np.array_equal(a.samples, c.samples)


def test_unknown_fixture_kind():
    with pytest.raises(ContractError):
        make_fixture("faces")


def test_lowrank_samples_live_on_the_affine_subspace():
    fx = lowrank_gaussian_fixture(seed=1, n=50, dim=8, rank=3)
    U, mean = fx.params["basis"], fx.params["mean"]
    d = fx.samples - mean
    assert np.allclose(d - (d @ U) @ U.T, 0, atol=1e-12)
    assert np.allclose(U.T @ U, np.eye(3), atol=1e-12)


def test_lowrank_rank_checked():
    with pytest.raises(ContractError):
        lowrank_gaussian_fixture(dim=4, rank=5)


def test_lowrank_prior_covariance_matches_samples():
    fx = lowrank_gaussian_fixture(seed=0, n=20000, dim=4, rank=2)
    cov = fx.prior().covs[0]
    assert np.allclose(np.cov(fx.samples.T), cov, atol=0.03)


def test_gmm_prior_matches_generator():
    fx = gmm_fixture(seed=2, n=10, dim=3, components=2)
    p = fx.prior()
    assert p.dim == 3 and len(p.weights) == 2


def test_smooth_images_range_and_shape():
    fx = smooth_images_fixture(seed=0, n=30)
    assert fx.samples.shape == (30, 16, 16)
    assert fx.samples.min() >= 0.0 and fx.samples.max() <= 1.0


def test_smooth_prior_matches_unclipped_statistics():
    prior = smooth_image_prior(side=8, sigma=1.5)
    # mean pixel variance is normalized to the target spread
    assert np.mean(np.diag(prior.covs[0])) == pytest.approx(0.18 ** 2)
    fx = smooth_images_fixture(seed=1, n=4000, side=8, sigma=1.5)
    emp = np.cov(fx.samples.reshape(4000, -1).T)
    # clipping removes a little variance; correlations survive
    assert np.allclose(emp, prior.covs[0], atol=0.006)


def test_floor_adds_high_frequency_energy():
    hi = lambda x: np.abs(np.fft.fft2(x)[:, 8, 8]).mean()  # noqa: E731
    plain = smooth_images_fixture(seed=0, n=50, floor=0.0).samples
    floored = smooth_images_fixture(seed=0, n=50, floor=0.05).samples
    assert hi(floored) > 5 * hi(plain)
