"""Measurement operators: downsampling, masking, (non)linear and blind blur, tilt.

All operators act on the last two axes of an image tensor and are
differentiable in the image and in any trainable kernel logits or tilt field.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ContractError

__all__ = [
    "downsample", "apply_mask", "random_mask", "conv_blur", "softmax_kernel",
    "tilt_warp", "nonlinear_blur", "gaussian_kernel", "delta_kernel",
    "Identity", "Downsample", "Inpaint", "ConvBlur", "NonlinearBlur", "BlindBlur",
    "TiltThenBlur", "apply",
]


def downsample(x, factor):
    """Area-average downsampling by an integer factor."""
    if factor == 1:
        return ad.as_tensor(x)
    return ad.avg_pool2d(x, factor)


def apply_mask(x, m):
    x = ad.as_tensor(x)
    m = np.asarray(m.data if isinstance(m, ad.Tensor) else m, dtype=np.float64)
    if m.shape != x.shape:
        raise ContractError(f"mask shape {m.shape} differs from image {x.shape}")
    return ad.mul(x, m)


def random_mask(shape, drop=0.7, rng=None):
    """Binary mask with a fraction ``drop`` of zeros, shared across leading channels."""
    rng = rng if rng is not None else np.random.default_rng()
    plane = (rng.random(shape[-2:]) >= drop).astype(np.float64)
    return np.broadcast_to(plane, shape).copy()


def conv_blur(x, k):
    return ad.conv2d_same(x, k)


def softmax_kernel(b):
    """Map free logits onto the probability simplex, keeping the kernel shape."""
    b = ad.as_tensor(b)
    return ad.softmax(b, axis=None)


def tilt_warp(x, phi, max_disp=None):
    phi = ad.as_tensor(phi)
    if max_disp is not None and np.max(np.abs(phi.data), initial=0.0) > max_disp:
        raise ContractError(f"tilt magnitude exceeds bound {max_disp}")
    return ad.bilinear_warp(x, phi)


def nonlinear_blur(x, g, gamma=2.2):
    """Pointwise power ``x**gamma`` followed by convolution with ``g``."""
    if gamma <= 0:
        raise ContractError(f"gamma must be positive, got {gamma}")
    return ad.conv2d_same(ad.power(x, gamma), g)


def gaussian_kernel(side, sigma):
    if side < 1 or side % 2 == 0:
        raise ContractError(f"kernel side must be odd and positive, got {side}")
    if sigma <= 0:
        raise ContractError("sigma must be positive")
    r = np.arange(side) - side // 2
    k = np.exp(-(r[:, None] ** 2 + r[None, :] ** 2) / (2.0 * sigma ** 2))
    return k / k.sum()


def delta_kernel(side):
    k = np.zeros((side, side))
    k[side // 2, side // 2] = 1.0
    return k


class Operator:
    linear = True
    blind = False

    def __call__(self, x, params=None):
        return self.apply(x, params)


@dataclass(frozen=True, eq=False)
class Identity(Operator):
    def apply(self, x, params=None):
        return ad.as_tensor(x)


@dataclass(frozen=True, eq=False)
class Downsample(Operator):
    factor: int = 2

    def apply(self, x, params=None):
        return downsample(x, self.factor)


@dataclass(frozen=True, eq=False)
class Inpaint(Operator):
    mask: np.ndarray

    def apply(self, x, params=None):
        return apply_mask(x, self.mask)


@dataclass(frozen=True, eq=False)
class ConvBlur(Operator):
    kernel: np.ndarray

    def apply(self, x, params=None):
        return conv_blur(x, self.kernel)


@dataclass(frozen=True, eq=False)
class NonlinearBlur(Operator):
    kernel: np.ndarray
    gamma: float = 2.2
    linear = False

    def apply(self, x, params=None):
        return nonlinear_blur(x, self.kernel, self.gamma)


@dataclass(frozen=True, eq=False)
class BlindBlur(Operator):
    """Unknown kernel, parameterized by logits under a softmax."""

    kernel_side: int = 5
    linear = False
    blind = True

    def apply(self, x, params=None):
        if not params or "kernel_logits" not in params:
            raise ContractError("BlindBlur needs params['kernel_logits']")
        return conv_blur(x, softmax_kernel(params["kernel_logits"]))


@dataclass(frozen=True, eq=False)
class TiltThenBlur(Operator):
    """Tilt field warp followed by convolution with a softmax kernel."""

    kernel_side: int = 5
    max_tilt: float = 2.0
    linear = False
    blind = True

    def apply(self, x, params=None):
        if not params or "kernel_logits" not in params or "tilt" not in params:
            raise ContractError("TiltThenBlur needs params['kernel_logits'] and params['tilt']")
        warped = tilt_warp(x, params["tilt"], self.max_tilt)
        return conv_blur(warped, softmax_kernel(params["kernel_logits"]))


def apply(op, x, params=None):
    return op.apply(x, params)
