"""Reconstruction quality (PSNR, SSIM) and frequency-band errors."""

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError

__all__ = [
    "psnr", "ssim", "dft2", "idft2", "band_index", "fbe", "band_energy_fractions",
    "psnr_gap", "BAND_EDGES",
]

# upper edges of the five radial bands, as fractions of the Nyquist radius;
# the last band also takes the corner frequencies beyond Nyquist
BAND_EDGES = (0.2, 0.4, 0.6, 0.8, 1.0)


def _arr(x):
    return np.asarray(getattr(x, "data", x), dtype=np.float64)


def psnr(x, ref):
    """PSNR in dB for unit peak value; ``math.inf`` when MSE < 1e-12."""
    x, ref = _arr(x), _arr(ref)
    if x.shape != ref.shape:
        raise ContractError(f"psnr: shapes {x.shape} and {ref.shape} differ")
    err = float(np.mean((x - ref) ** 2))
    if err < 1e-12:
        return math.inf
    return 10.0 * math.log10(1.0 / err)


def _gauss_window(side=11, sigma=1.5):
    r = np.arange(side) - side // 2
    g = np.exp(-(r ** 2) / (2 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(x, ref, window=11, sigma=1.5, k1=0.01, k2=0.03, data_range=1.0):
    """Mean local SSIM over all fully-covered window positions.

    Leading axes are treated as separate planes and averaged.
    """
    x, ref = _arr(x), _arr(ref)
    if x.shape != ref.shape:
        raise ContractError(f"ssim: shapes {x.shape} and {ref.shape} differ")
    if x.ndim < 2 or min(x.shape[-2:]) < window:
        raise ContractError(f"image {x.shape} smaller than the {window}x{window} window")
    w = _gauss_window(window, sigma)
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2

    def filt(a):
        return np.tensordot(sliding_window_view(a, w.shape, axis=(-2, -1)), w,
                            axes=([-2, -1], [0, 1]))

    mx, my = filt(x), filt(ref)
    vx = filt(x * x) - mx * mx
    vy = filt(ref * ref) - my * my
    cxy = filt(x * ref) - mx * my
    s = ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
    return float(np.mean(s))


def _check_pow2_square(x):
    if x.ndim != 2 or x.shape[0] != x.shape[1]:
        raise ContractError(f"need a square 2-D array, got {x.shape}")
    n = x.shape[0]
    if n < 1 or n & (n - 1):
        raise ContractError(f"side {n} is not a power of two")


def dft2(x):
    """2-D discrete Fourier transform of a power-of-two square image."""
    x = np.asarray(getattr(x, "data", x))
    _check_pow2_square(x)
    return np.fft.fft2(x)


def idft2(F):
    F = np.asarray(F)
    _check_pow2_square(F)
    return np.fft.ifft2(F)


def band_index(n):
    """Band number (0..4) for every bin of an n x n spectrum."""
    f = np.fft.fftfreq(n)
    rho = np.sqrt(f[:, None] ** 2 + f[None, :] ** 2) / 0.5
    return np.minimum(np.searchsorted(BAND_EDGES, rho, side="right"), len(BAND_EDGES) - 1)


def fbe(xhat, ref):
    """Mean relative Fourier error |F(ref) - F(xhat)| / |F(ref)| per radial band."""
    xhat, ref = _arr(xhat), _arr(ref)
    if xhat.shape != ref.shape:
        raise ContractError(f"fbe: shapes {xhat.shape} and {ref.shape} differ")
    Fr, Fx = dft2(ref), dft2(xhat)
    mag = np.abs(Fr)
    keep = mag >= 1e-12
    rel = np.abs(Fr - Fx) / np.where(keep, mag, 1.0)
    bands = band_index(ref.shape[0])
    out = []
    for b in range(len(BAND_EDGES)):
        sel = keep & (bands == b)
        if not np.any(sel):
            raise ContractError(f"band {b + 1} is empty after excluding zero-magnitude bins")
        out.append(float(np.mean(rel[sel])))
    return out


def band_energy_fractions(x):
    """Fraction of spectral energy |F|^2 in each radial band."""
    F = dft2(_arr(x))
    e = np.abs(F) ** 2
    bands = band_index(e.shape[0])
    total = e.sum()
    return [float(e[bands == b].sum() / total) for b in range(len(BAND_EDGES))]


def psnr_gap(psnrs, es_index):
    """Distance in dB between the best PSNR of a trace and the PSNR at ``es_index``."""
    vals = [p for p in (psnrs or []) if p is not None]
    if not vals:
        raise ContractError("trace has no PSNR values")
    return abs(max(vals) - psnrs[es_index])
