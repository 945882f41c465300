"""Seeded desk-scale datasets with known generating distributions."""

from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .score import GmmPrior

__all__ = [
    "Fixture", "make_fixture", "gmm_fixture", "lowrank_gaussian_fixture",
    "smooth_images_fixture", "smooth_image_prior", "lowrank_prior",
]

SMOOTH_MEAN = 0.5
SMOOTH_STD = 0.18


@dataclass
class Fixture:
    kind: str
    samples: np.ndarray
    params: dict

    def prior(self):
        """Analytic Gaussian(-mixture) prior matching the generating distribution."""
        p = self.params
        if self.kind == "gmm":
            return GmmPrior(p["weights"], p["means"], p["covs"])
        if self.kind == "lowrank_gaussian":
            return lowrank_prior(p["mean"], p["basis"], p["scales"], p.get("sample_shape"))
        return smooth_image_prior(p["side"], p["sigma"], p["floor"])


def gmm_fixture(seed=0, n=2000, dim=2, components=2, separation=3.0, spread=0.3):
    rng = np.random.default_rng(seed)
    weights = np.full(components, 1.0 / components)
    dirs = rng.standard_normal((components, dim))
    means = separation * dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    covs = np.stack([spread ** 2 * np.eye(dim)] * components)
    prior = GmmPrior(weights, means, covs)
    return Fixture("gmm", prior.sample(n, rng),
                   {"weights": weights, "means": means, "covs": covs})


def lowrank_prior(mean, basis, scales, sample_shape=None):
    mean = np.asarray(mean, dtype=np.float64).ravel()
    U = np.asarray(basis, dtype=np.float64)
    s = np.asarray(scales, dtype=np.float64)
    cov = (U * s ** 2) @ U.T
    return GmmPrior.gaussian(mean, 0.5 * (cov + cov.T), sample_shape)


def lowrank_gaussian_fixture(seed=0, n=1000, dim=16, rank=2, scales=None, mean_level=0.5,
                             sample_shape=None):
    """Samples ``mean + U diag(scales) c`` with orthonormal ``U`` (dim x rank)."""
    if not 1 <= rank <= dim:
        raise ContractError("need 1 <= rank <= dim")
    rng = np.random.default_rng(seed)
    U, _ = np.linalg.qr(rng.standard_normal((dim, rank)))
    scales = np.linspace(1.0, 0.5, rank) if scales is None else np.asarray(scales, dtype=np.float64)
    mean = mean_level + 0.1 * rng.standard_normal(dim)
    c = rng.standard_normal((n, rank))
    samples = mean + (c * scales) @ U.T
    if sample_shape is not None:
        samples = samples.reshape((n,) + tuple(sample_shape))
    return Fixture("lowrank_gaussian", samples,
                   {"mean": mean, "basis": U, "scales": scales, "sample_shape": sample_shape})


def _blur_transfer(side, sigma, floor):
    """Gaussian low-pass response with a constant stop-band floor."""
    f = np.fft.fftfreq(side)
    r2 = f[:, None] ** 2 + f[None, :] ** 2
    return (1.0 - floor) * np.exp(-2.0 * (np.pi * sigma) ** 2 * r2) + floor


def smooth_image_prior(side=16, sigma=2.0, floor=0.05):
    """Gaussian law of the unclipped smooth images: a circular low-pass filter applied to white noise."""
    H = _blur_transfer(side, sigma, floor)
    d = side * side
    # circulant blur matrix from its impulse response
    h = np.real(np.fft.ifft2(H))
    idx = np.arange(side)
    di = (idx[:, None] - idx[None, :]) % side
    B = h[di[:, None, :, None], di[None, :, None, :]].reshape(d, d)
    cov = B @ B.T
    cov *= SMOOTH_STD ** 2 / np.mean(np.diag(cov))
    return GmmPrior.gaussian(np.full(d, SMOOTH_MEAN), 0.5 * (cov + cov.T), (side, side))


def smooth_images_fixture(seed=0, n=1000, side=16, sigma=2.0, floor=0.05):
    """Low-pass filtered white noise, scaled around 0.5 and clipped to [0, 1].

    ``floor`` is the filter's stop-band gain relative to DC; it leaves a faint
    high-frequency texture on top of the smooth component.
    """
    rng = np.random.default_rng(seed)
    H = _blur_transfer(side, sigma, floor)
    w = rng.standard_normal((n, side, side))
    f = np.real(np.fft.ifft2(np.fft.fft2(w) * H))
    pixel_std = np.sqrt(np.sum(H ** 2)) / side
    x = SMOOTH_MEAN + SMOOTH_STD * f / pixel_std
    return Fixture("smooth_images", np.clip(x, 0.0, 1.0),
                   {"side": side, "sigma": sigma, "floor": floor})


def make_fixture(kind, seed=0, **kwargs):
    makers = {
        "gmm": gmm_fixture,
        "lowrank_gaussian": lowrank_gaussian_fixture,
        "smooth_images": smooth_images_fixture,
    }
    if kind not in makers:
        raise ContractError(f"unknown fixture kind {kind!r}")
    return makers[kind](seed=seed, **kwargs)
