"""ADAM and L-BFGS over named groups of tensors."""

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, OptimizerError

__all__ = ["ParamGroup", "AdamState", "Adam", "adam_step", "LbfgsResult", "lbfgs_minimize"]


@dataclass
class ParamGroup:
    name: str
    tensors: list
    lr: float

    def __post_init__(self):
        if not self.lr >= 0:
            raise ContractError(f"group {self.name!r}: learning rate must be >= 0")


@dataclass
class AdamState:
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    step: int = 0


def adam_step(groups, grads, state, betas=(0.9, 0.999), eps=1e-8):
    """One bias-corrected ADAM update, in place on the group tensors.

    ``grads`` is a list aligned with ``groups`` whose entries are lists of
    arrays aligned with each group's tensors.
    """
    if len(grads) != len(groups):
        raise ContractError("gradient list does not match parameter groups")
    b1, b2 = betas
    if not state.m:
        state.m = [[np.zeros_like(t.data) for t in g.tensors] for g in groups]
        state.v = [[np.zeros_like(t.data) for t in g.tensors] for g in groups]
    for group, gs in zip(groups, grads):
        for g in gs:
            if not np.all(np.isfinite(g)):
                raise OptimizerError("non-finite gradient", group.name)
    state.step += 1
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for gi, (group, gs) in enumerate(zip(groups, grads)):
        for ti, (t, g) in enumerate(zip(group.tensors, gs)):
            m = state.m[gi][ti]
            v = state.v[gi][ti]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            t.data = t.data - group.lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return groups


class Adam:
    def __init__(self, groups, betas=(0.9, 0.999), eps=1e-8):
        self.groups = list(groups)
        self.betas = betas
        self.eps = eps
        self.state = AdamState()

    def step(self, grads=None):
        if grads is None:
            grads = [[t.grad for t in g.tensors] for g in self.groups]
        adam_step(self.groups, grads, self.state, self.betas, self.eps)


@dataclass
class LbfgsResult:
    params: list
    losses: list
    grad_norm: float
    n_iter: int
    converged: bool
    line_search_failed: bool = False


def _flatten(arrays):
    return np.concatenate([np.ravel(a) for a in arrays]) if arrays else np.zeros(0)


def _unflatten(vec, shapes):
    out, i = [], 0
    for s in shapes:
        n = int(np.prod(s))
        out.append(vec[i:i + n].reshape(s))
        i += n
    return out


def lbfgs_minimize(objective, x0, memory=10, max_iter=100, gtol=1e-10, c1=1e-4,
                   max_backtracks=40, callback=None):
    """Minimize ``objective`` with L-BFGS and backtracking Armijo steps.

    ``objective(params) -> (loss, grads)`` takes and returns lists of arrays
    shaped like ``x0``. ``callback(k, params, loss)`` runs after each accepted
    step and may return True to stop. When backtracking fails the best point
    so far is returned with ``line_search_failed`` set.
    """
    shapes = [np.shape(a) for a in x0]
    x = _flatten([np.asarray(a, dtype=np.float64) for a in x0])

    def f(vec):
        loss, grads = objective(_unflatten(vec.copy(), shapes))
        return float(loss), _flatten(grads)

    loss, g = f(x)
    losses = [loss]
    s_hist, y_hist, rho_hist = [], [], []
    converged = False
    failed = False
    k = 0
    while k < max_iter:
        gnorm = np.linalg.norm(g)
        if gnorm <= gtol:
            converged = True
            break
        # two-loop recursion
        q = g.copy()
        alphas = []
        for s, y, rho in zip(reversed(s_hist), reversed(y_hist), reversed(rho_hist)):
            a = rho * (s @ q)
            alphas.append(a)
            q -= a * y
        if s_hist:
            gamma = (s_hist[-1] @ y_hist[-1]) / (y_hist[-1] @ y_hist[-1])
        else:
            gamma = min(1.0, 1.0 / gnorm)
        r = gamma * q
        for (s, y, rho), a in zip(zip(s_hist, y_hist, rho_hist), reversed(alphas)):
            b = rho * (y @ r)
            r += s * (a - b)
        d = -r
        slope = g @ d
        if slope >= 0:
            # curvature history went bad; restart from steepest descent
            s_hist.clear(), y_hist.clear(), rho_hist.clear()
            d = -g * min(1.0, 1.0 / gnorm)
            slope = g @ d

        step = 1.0
        for _ in range(max_backtracks):
            x_new = x + step * d
            loss_new, g_new = f(x_new)
            if np.isfinite(loss_new) and loss_new <= loss + c1 * step * slope:
                break
            step *= 0.5
        else:
            failed = True
            warnings.warn("L-BFGS line search failed; returning best point so far",
                          RuntimeWarning, stacklevel=2)
            break

        s = x_new - x
        y = g_new - g
        sy = s @ y
        if sy > 1e-12 * (np.linalg.norm(s) * np.linalg.norm(y) + 1e-300):
            s_hist.append(s)
            y_hist.append(y)
            rho_hist.append(1.0 / sy)
            if len(s_hist) > memory:
                s_hist.pop(0), y_hist.pop(0), rho_hist.pop(0)
        x, loss, g = x_new, loss_new, g_new
        losses.append(loss)
        k += 1
        if callback is not None and callback(k, _unflatten(x.copy(), shapes), loss):
            break
    else:
        converged = np.linalg.norm(g) <= gtol

    return LbfgsResult(_unflatten(x, shapes), losses, float(np.linalg.norm(g)), k,
                       bool(converged), failed)
