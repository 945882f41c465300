"""DDIM/DDPM reverse steps and the composed reverse map R(z)."""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ContractError
from .schedule import pick_substeps

__all__ = ["ReverseProcess", "predict_x0", "ddim_step", "ddpm_step", "reverse_fn", "sample"]

VARIANTS = ("ddim", "ddpm")


@dataclass(frozen=True, eq=False)
class ReverseProcess:
    """A prior, its schedule, and the ascending substep list traversed by R.

    ``variant`` is ``"ddim"`` (deterministic, eta = 0) or ``"ddpm"``.
    """

    prior: object
    schedule: object
    substeps: tuple = None
    variant: str = "ddim"

    def __post_init__(self):
        steps = self.substeps
        if steps is None:
            steps = pick_substeps(self.schedule, 3)
        steps = tuple(int(s) for s in steps)
        if not steps or any(b <= a for a, b in zip(steps, steps[1:])):
            raise ContractError("substeps must be strictly increasing and nonempty")
        if steps[0] < 1 or steps[-1] > self.schedule.T:
            raise ContractError(f"substeps must lie in [1, {self.schedule.T}]")
        if self.variant not in VARIANTS:
            raise ContractError(f"unknown variant {self.variant!r}")
        object.__setattr__(self, "substeps", steps)

    @classmethod
    def with_steps(cls, prior, schedule, k=3, variant="ddim"):
        return cls(prior, schedule, tuple(pick_substeps(schedule, k)), variant)

    @property
    def sample_shape(self):
        return self.prior.sample_shape

    def pairs(self):
        """(t, t_prev) pairs in traversal order, ending with t_prev = 0."""
        down = self.substeps[::-1]
        return list(zip(down, down[1:] + (0,)))


def _x0_from_eps(x_t, eps, abar):
    return ad.scale(ad.sub(x_t, ad.scale(eps, np.sqrt(1.0 - abar))), 1.0 / np.sqrt(abar))


def predict_x0(x_t, t, rp, eps=None):
    """Clean-signal estimate implied by ``x_t`` and the noise prediction."""
    if not 1 <= t <= rp.schedule.T:
        raise ContractError(f"step {t} outside [1, {rp.schedule.T}]")
    x_t = ad.as_tensor(x_t)
    if eps is None:
        eps = rp.prior.eval(t, x_t)
    return _x0_from_eps(x_t, eps, rp.schedule.alpha_bar(t))


def ddim_step(x_t, t, t_prev, rp, eps=None):
    """Deterministic DDIM move from step ``t`` to ``t_prev`` (0 = clean endpoint)."""
    if not 0 <= t_prev < t:
        raise ContractError(f"need 0 <= t_prev < t, got t={t}, t_prev={t_prev}")
    x_t = ad.as_tensor(x_t)
    if eps is None:
        eps = rp.prior.eval(t, x_t)
    x0 = predict_x0(x_t, t, rp, eps)
    if t_prev == 0:
        return x0
    abar_prev = rp.schedule.alpha_bar(t_prev)
    return ad.add(ad.scale(x0, np.sqrt(abar_prev)), ad.scale(eps, np.sqrt(1.0 - abar_prev)))


def ddpm_step(x_t, t, rp, rng, t_prev=None):
    """Stochastic DDPM move; skipping steps uses the respaced beta 1 - abar_t/abar_prev.

    No noise is injected on the final move to t_prev = 0.
    """
    if t_prev is None:
        t_prev = t - 1
    if not 1 <= t <= rp.schedule.T or not 0 <= t_prev < t:
        raise ContractError(f"invalid DDPM move {t} -> {t_prev}")
    if rng is None:
        raise ContractError("DDPM steps need a random generator")
    x_t = ad.as_tensor(x_t)
    abar = rp.schedule.alpha_bar(t)
    alpha = abar / rp.schedule.alpha_bar(t_prev)
    beta = 1.0 - alpha
    eps = rp.prior.eval(t, x_t)
    mean = ad.scale(ad.sub(x_t, ad.scale(eps, beta / np.sqrt(1.0 - abar))), 1.0 / np.sqrt(alpha))
    if t_prev == 0:
        return mean
    return ad.add(mean, np.sqrt(beta) * rng.standard_normal(x_t.shape))


def reverse_fn(z, rp, rng=None, return_path=False):
    """R(z): run the reverse chain over ``rp.substeps`` down to the clean endpoint.

    With ``return_path`` the list of intermediate states (starting with z) is
    returned instead of only the endpoint.
    """
    z = ad.as_tensor(z)
    if rp.variant == "ddpm" and ad._active_tape() is not None:
        raise ContractError("cannot differentiate through the stochastic DDPM chain")
    x = z
    path = [z]
    for t, t_prev in rp.pairs():
        if rp.variant == "ddim":
            x = ddim_step(x, t, t_prev, rp)
        else:
            x = ddpm_step(x, t, rp, rng, t_prev)
        path.append(x)
    return path if return_path else x


def sample(rp, n, rng):
    """Draw ``n`` seeds from N(0, I) and push them through the reverse chain.

    Returns an array of shape (n, *sample_shape).
    """
    if n < 1:
        raise ContractError("need n >= 1")
    z = rng.standard_normal((n,) + tuple(rp.sample_shape))
    with ad.no_tape():
        return reverse_fn(z, rp, rng).data
