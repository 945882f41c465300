"""Noise predictors: the exact Gaussian-mixture oracle and a trainable MLP.

Both expose ``eval(t, x) -> eps`` where ``x`` has the prior's sample shape or
a leading batch axis in front of it. The convention throughout is
``eps = -sqrt(1 - abar_t) * score``.
"""

import threading
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, DomainError, TrainingError
from .optim import Adam, ParamGroup

__all__ = [
    "GmmPrior", "AnalyticScore", "NeuralScore", "TrainConfig",
    "analytic_epsilon", "train_score",
]


def _as_batch(x, sample_shape):
    """Flatten ``x`` to (n, d); return the flat tensor and the original shape."""
    d = int(np.prod(sample_shape))
    if x.shape == tuple(sample_shape):
        return ad.reshape(x, (1, d)), x.shape
    if x.shape[1:] == tuple(sample_shape):
        return ad.reshape(x, (x.shape[0], d)), x.shape
    raise ContractError(f"input shape {x.shape} does not match sample shape {sample_shape}")


class GmmPrior:
    """Gaussian mixture over flattened samples of shape ``sample_shape``."""

    def __init__(self, weights, means, covs, sample_shape=None):
        self.weights = np.array(weights, dtype=np.float64)
        self.means = np.array(means, dtype=np.float64)
        self.covs = np.array(covs, dtype=np.float64)
        J, d = self.means.shape
        if self.weights.shape != (J,) or np.any(self.weights <= 0):
            raise ContractError("mixture weights must be positive, one per component")
        if not np.isclose(self.weights.sum(), 1.0, atol=1e-12):
            raise ContractError("mixture weights must sum to 1")
        if self.covs.shape != (J, d, d):
            raise ContractError(f"covariances must have shape {(J, d, d)}")
        if not np.allclose(self.covs, np.swapaxes(self.covs, 1, 2)):
            raise ContractError("covariances must be symmetric")
        self.sample_shape = tuple(sample_shape) if sample_shape is not None else (d,)
        if int(np.prod(self.sample_shape)) != d:
            raise ContractError("sample shape does not match mean dimension")
        self._cache = {}
        self._lock = threading.Lock()

    @property
    def dim(self):
        return self.means.shape[1]

    @classmethod
    def gaussian(cls, mean, cov, sample_shape=None):
        mean = np.asarray(mean, dtype=np.float64).ravel()
        return cls([1.0], [mean], [cov], sample_shape)

    def marginal(self, abar):
        """Per-component (mean, precision, log-determinant) at cumulative product ``abar``."""
        key = float(abar)
        with self._lock:
            hit = self._cache.get(key)
        if hit is not None:
            return hit
        d = self.dim
        comps = []
        for mu, cov in zip(self.means, self.covs):
            C = abar * cov + (1.0 - abar) * np.eye(d)
            try:
                L = np.linalg.cholesky(C)
            except np.linalg.LinAlgError:
                raise DomainError(f"component covariance is singular at abar={abar}") from None
            Linv = np.linalg.inv(L)
            P = Linv.T @ Linv
            P = 0.5 * (P + P.T)
            comps.append((np.sqrt(abar) * mu, P, 2.0 * np.sum(np.log(np.diag(L)))))
        with self._lock:
            self._cache[key] = comps
        return comps

    def sample(self, n, rng):
        comp = rng.choice(len(self.weights), size=n, p=self.weights)
        out = np.empty((n, self.dim))
        for j in range(len(self.weights)):
            idx = np.flatnonzero(comp == j)
            if len(idx) == 0:
                continue
            w, V = np.linalg.eigh(self.covs[j])
            root = V * np.sqrt(np.clip(w, 0, None))
            out[idx] = self.means[j] + rng.standard_normal((len(idx), self.dim)) @ root.T
        return out.reshape(n, *self.sample_shape)


def analytic_epsilon(prior, schedule, t, x):
    """Exact noise prediction of a Gaussian-mixture prior at step ``t``.

    Differentiable in ``x`` when recorded on a tape.
    """
    if not 1 <= t <= schedule.T:
        raise ContractError(f"step {t} outside [1, {schedule.T}]")
    abar = schedule.alpha_bar(t)
    x = ad.as_tensor(x)
    x2, shape = _as_batch(x, prior.sample_shape)
    comps = prior.marginal(abar)
    if len(comps) == 1:
        m, P, _ = comps[0]
        score = ad.neg(ad.matmul(ad.sub(x2, m), P))
    else:
        n = x2.shape[0]
        logits, pulls = [], []
        for logw, (m, P, logdet) in zip(np.log(prior.weights), comps):
            diff = ad.sub(x2, m)
            pull = ad.matmul(diff, P)
            quad = ad.sum(ad.mul(pull, diff), axis=1)
            logits.append(ad.reshape(ad.add(ad.scale(quad, -0.5), logw - 0.5 * logdet), (n, 1)))
            pulls.append(pull)
        w = ad.softmax(ad.concat(logits, axis=1), axis=1)
        score = None
        for j, pull in enumerate(pulls):
            term = ad.mul(w[:, j:j + 1], pull)
            score = term if score is None else ad.add(score, term)
        score = ad.neg(score)
    eps = ad.scale(score, -np.sqrt(1.0 - abar))
    return ad.reshape(eps, shape)


class AnalyticScore:
    """Closed-form noise predictor for a :class:`GmmPrior` under a schedule."""

    kind = "analytic"

    def __init__(self, prior, schedule):
        self.prior = prior
        self.schedule = schedule

    @property
    def sample_shape(self):
        return self.prior.sample_shape

    def eval(self, t, x):
        return analytic_epsilon(self.prior, self.schedule, t, x)


class NeuralScore:
    """MLP noise predictor on flattened inputs with a per-step embedding table.

    The embedding row for step t is added to the first hidden pre-activation.
    A learned per-step gain times the input is added to the output, so the
    near-identity response in directions the data does not occupy does not
    have to pass through the hidden bottleneck.
    """

    kind = "neural"

    def __init__(self, sample_shape, T, widths=(128, 128, 128), seed=0, params=None):
        self.sample_shape = tuple(sample_shape)
        self.T = int(T)
        self.widths = tuple(int(w) for w in widths)
        if not self.widths:
            raise ContractError("need at least one hidden layer")
        if params is None:
            params = self._init(np.random.default_rng(seed))
        self.params = {k: Tensor(v, requires_grad=True) for k, v in params.items()}

    @property
    def dim(self):
        return int(np.prod(self.sample_shape))

    def _init(self, rng):
        sizes = (self.dim,) + self.widths + (self.dim,)
        p = {}
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            std = 1.0 / np.sqrt(a)
            if i == len(sizes) - 2:
                std *= 0.1
            p[f"W{i}"] = rng.standard_normal((a, b)) * std
            p[f"b{i}"] = np.zeros(b)
        p["emb"] = rng.standard_normal((self.T, self.widths[0])) * 0.1
        p["skip"] = np.ones(self.T)
        return p

    def names(self):
        n = len(self.widths) + 1
        return [k for i in range(n) for k in (f"W{i}", f"b{i}")] + ["emb", "skip"]

    def tensors(self):
        return [self.params[k] for k in self.names()]

    def copy(self):
        return NeuralScore(self.sample_shape, self.T, self.widths,
                           params={k: v.data.copy() for k, v in self.params.items()})

    def eval(self, t, x):
        x = ad.as_tensor(x)
        x2, shape = _as_batch(x, self.sample_shape)
        n = x2.shape[0]
        t = np.asarray(t, dtype=np.int64)
        if t.ndim == 0:
            t = np.full(n, int(t))
        if t.shape != (n,):
            raise ContractError(f"need one step index per sample, got {t.shape} for {n} samples")
        if np.any(t < 1) or np.any(t > self.T):
            raise ContractError(f"step index outside [1, {self.T}]")
        p = self.params
        h = ad.add(ad.add(ad.matmul(x2, p["W0"]), p["b0"]), ad.take(p["emb"], t - 1, axis=0))
        h = ad.silu(h)
        for i in range(1, len(self.widths)):
            h = ad.silu(ad.add(ad.matmul(h, p[f"W{i}"]), p[f"b{i}"]))
        k = len(self.widths)
        out = ad.add(ad.matmul(h, p[f"W{k}"]), p[f"b{k}"])
        gain = ad.reshape(ad.take(p["skip"], t - 1, axis=0), (n, 1))
        out = ad.add(out, ad.mul(gain, x2))
        return ad.reshape(out, shape)


@dataclass
class TrainConfig:
    steps: int = 4000
    batch: int = 64
    lr: float = 1e-3
    seed: int = 0
    # restrict training to these step indices (None: uniform over 1..T)
    timesteps: tuple = None


def train_score(dataset, schedule, net, config=None):
    """Fit ``net`` with the denoising objective; returns (trained copy, losses).

    Each step draws a batch of samples, step indices and Gaussian noise from a
    private generator seeded by ``config.seed``.
    """
    config = config or TrainConfig()
    data = np.asarray(dataset, dtype=np.float64)
    if len(data) == 0:
        raise ContractError("dataset is empty")
    if data.shape[1:] != net.sample_shape:
        raise ContractError(f"samples have shape {data.shape[1:]}, net expects {net.sample_shape}")
    if net.T != schedule.T:
        raise ContractError("network embedding table does not match schedule length")
    net = net.copy()
    rng = np.random.default_rng(config.seed)
    steps_pool = (np.arange(1, schedule.T + 1) if config.timesteps is None
                  else np.asarray(config.timesteps, dtype=np.int64))
    opt = Adam([ParamGroup("net", net.tensors(), config.lr)])
    abar = np.asarray(schedule.alpha_bars)
    history = []
    bshape = (config.batch,) + net.sample_shape
    for step in range(config.steps):
        idx = rng.integers(0, len(data), size=config.batch)
        t = rng.choice(steps_pool, size=config.batch)
        eps = rng.standard_normal(bshape)
        a = abar[t].reshape((-1,) + (1,) * len(net.sample_shape))
        xt = np.sqrt(a) * data[idx] + np.sqrt(1.0 - a) * eps
        with ad.Tape() as tape:
            loss = ad.mse(net.eval(t, xt), eps)
        value = loss.item()
        if not np.isfinite(value):
            raise TrainingError("denoising loss became non-finite", step)
        opt.step([tape.backward(loss, net.tensors())])
        history.append(value)
    return net, history
