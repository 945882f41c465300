"""Measurement corruption: Gaussian, impulse, shot and speckle noise."""

from dataclasses import dataclass

import numpy as np

from .errors import ContractError

__all__ = ["NoiseSpec", "NOISE_LEVELS", "corrupt"]

# low / high settings per kind
NOISE_LEVELS = {
    "gaussian_var": {"low": 0.08, "high": 0.12},
    "impulse": {"low": 0.03, "high": 0.06},
    "shot": {"low": 60.0, "high": 25.0},
    "speckle": {"low": 0.15, "high": 0.20},
}
KINDS = ("none", "gaussian_sigma") + tuple(NOISE_LEVELS)


@dataclass(frozen=True)
class NoiseSpec:
    """A noise kind plus either a named level or an explicit parameter.

    The parameter is a standard deviation for ``gaussian_sigma``, a variance for
    ``gaussian_var`` and ``speckle``, a replacement probability for
    ``impulse`` and a Poisson rate scale for ``shot``.
    """

    kind: str = "gaussian_sigma"
    level: str = None
    param: float = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ContractError(f"unknown noise kind {self.kind!r}")
        if self.level is not None and self.level not in ("low", "high"):
            raise ContractError(f"noise level must be 'low' or 'high', got {self.level!r}")

    @property
    def value(self):
        if self.param is not None:
            return float(self.param)
        if self.kind == "none":
            return 0.0
        if self.kind == "gaussian_sigma":
            return 0.01
        return NOISE_LEVELS[self.kind][self.level or "low"]


def corrupt(x, spec, rng):
    """Return a corrupted copy of ``x`` (values in [0, 1]), clipped back to [0, 1]."""
    x = np.asarray(getattr(x, "data", x), dtype=np.float64)
    if np.any(x < 0) or np.any(x > 1):
        raise ContractError("noise models expect inputs in [0, 1]")
    v = spec.value
    if spec.kind == "none":
        out = x.copy()
    elif spec.kind == "gaussian_sigma":
        out = x + v * rng.standard_normal(x.shape)
    elif spec.kind == "gaussian_var":
        out = x + np.sqrt(v) * rng.standard_normal(x.shape)
    elif spec.kind == "impulse":
        hit = rng.random(x.shape) < v
        salt = rng.random(x.shape) < 0.5
        out = np.where(hit, salt.astype(np.float64), x)
    elif spec.kind == "shot":
        out = rng.poisson(v * x) / v
    else:  # speckle
        out = x * (1.0 + np.sqrt(v) * rng.standard_normal(x.shape))
    return np.clip(out, 0.0, 1.0)
