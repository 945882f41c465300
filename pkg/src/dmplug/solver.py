"""Seed-space optimization through the reverse map, with windowed-variance early stopping.

The reconstruction is ``x = R(z)``; the solver minimizes ``mse(y, A(R(z)))``
over the seed ``z`` (and, for blind operators, kernel logits and a tilt
field). No explicit regularizer is added.
"""

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ContractError, SolveError
from .metrics import fbe, psnr, ssim
from .optim import Adam, ParamGroup, lbfgs_minimize
from .reverse import reverse_fn

__all__ = [
    "SeedVariables", "EsConfig", "EsState", "es_update", "window_variance",
    "SolveConfig", "SolveTrace", "SolveResult", "objective", "solve", "solve_blind",
    "init_variables",
]

# window / patience pairs used for the two robustness tasks
ES_SUPER_RESOLUTION = (10, 100)
ES_NONLINEAR_DEBLUR = (50, 300)


@dataclass
class SeedVariables:
    z: ad.Tensor
    kernel_logits: ad.Tensor = None
    tilt: ad.Tensor = None

    def params(self):
        p = {}
        if self.kernel_logits is not None:
            p["kernel_logits"] = self.kernel_logits
        if self.tilt is not None:
            p["tilt"] = self.tilt
        return p

    def snapshot(self):
        return {k: v.data.copy() for k, v in self.named().items()}

    def named(self):
        out = {"z": self.z}
        if self.kernel_logits is not None:
            out["kernel"] = self.kernel_logits
        if self.tilt is not None:
            out["tilt"] = self.tilt
        return out


@dataclass
class EsConfig:
    window: int = 10
    patience: int = 100
    enabled: bool = True

    def __post_init__(self):
        if self.window < 2:
            raise ContractError("ES window must be at least 2")
        if self.patience < 1:
            raise ContractError("ES patience must be at least 1")


def window_variance(frames):
    """Mean squared Frobenius distance of each frame to the window mean."""
    stack = np.stack([np.ravel(f) for f in frames])
    dev = stack - stack.mean(axis=0)
    return float(np.sum(dev * dev) / len(frames))


class EsState:
    """Running state of the windowed-moving-variance detector."""

    def __init__(self, config):
        self.config = config
        self.queue = deque()
        self.var_min = np.inf
        self.last_var = None
        self.stagnant = 0
        self.best_index = None
        self.best_recon = None
        self.best_snapshot = None
        self.updates = 0


def es_update(state, recon, snapshot=None, index=None):
    """Push one reconstruction; return ``"stop"`` once VAR_min has stagnated.

    The window variance is only computed once the queue holds ``window``
    reconstructions. A strict decrease records the current reconstruction and
    ``snapshot`` as the best so far and resets the stagnation counter.
    """
    cfg = state.config
    index = state.updates if index is None else index
    state.updates += 1
    state.queue.append(np.array(recon, dtype=np.float64, copy=True))
    if len(state.queue) > cfg.window:
        state.queue.popleft()
    state.last_var = None
    if len(state.queue) < cfg.window:
        return "continue"
    var = window_variance(state.queue)
    state.last_var = var
    if var < state.var_min:
        state.var_min = var
        state.best_index = index
        state.best_recon = state.queue[-1]
        state.best_snapshot = snapshot
        state.stagnant = 0
    else:
        state.stagnant += 1
    return "stop" if state.stagnant >= cfg.patience else "continue"


@dataclass
class SolveConfig:
    max_iters: int = 5000
    optimizer: str = "adam"
    lr_z: float = 1e-2
    lr_kernel: float = 1e-1
    lr_tilt: float = 1e-7
    es: EsConfig = field(default_factory=lambda: EsConfig(enabled=False))
    seed: int = 0
    tilt_init_std: float = 0.01
    lbfgs_memory: int = 10
    # ground truth for PSNR/SSIM tracking and how often to compute band errors
    x_true: np.ndarray = None
    fbe_every: int = 0
    ssim_every: int = 1


@dataclass
class SolveTrace:
    loss: list = field(default_factory=list)
    psnr: list = field(default_factory=list)
    ssim: list = field(default_factory=list)
    var: list = field(default_factory=list)
    fbe: list = field(default_factory=list)

    def __len__(self):
        return len(self.loss)

    def rows(self):
        for i in range(len(self.loss)):
            yield {
                "iter": i,
                "loss": self.loss[i],
                "psnr": self.psnr[i] if self.psnr else None,
                "ssim": self.ssim[i] if self.ssim else None,
                "var": self.var[i] if self.var else None,
                "fbe": self.fbe[i] if self.fbe else None,
            }


@dataclass
class SolveResult:
    final: np.ndarray
    best: np.ndarray
    best_index: int
    trace: SolveTrace
    stop_reason: str
    variables: dict
    best_variables: dict
    kernel: np.ndarray = None
    tilt: np.ndarray = None

    @property
    def iterations(self):
        return len(self.trace)


def objective(y, op, variables, rp):
    """``mse(y, A(R(z)))`` as a taped scalar; also returns the reconstruction."""
    x = reverse_fn(variables.z, rp)
    pred = op.apply(x, variables.params())
    y = ad.as_tensor(y)
    if pred.shape != y.shape:
        raise ContractError(f"operator output {pred.shape} does not match measurement {y.shape}")
    return ad.mse(y, pred), x


def init_variables(rp, op, config):
    """Seed from N(0, I); kernel logits at zero; tilt from N(0, tilt_init_std^2).

    Each variable draws from its own child stream of ``config.seed``.
    """
    ss = np.random.SeedSequence(config.seed)
    z_ss, tilt_ss = ss.spawn(2)
    shape = tuple(rp.sample_shape)
    z = ad.Tensor(np.random.default_rng(z_ss).standard_normal(shape), requires_grad=True)
    logits = tilt = None
    if op.blind:
        s = op.kernel_side
        logits = ad.Tensor(np.zeros((s, s)), requires_grad=True)
        if hasattr(op, "max_tilt"):
            phi = np.random.default_rng(tilt_ss).standard_normal((2,) + shape[-2:])
            tilt = ad.Tensor(phi * config.tilt_init_std, requires_grad=True)
    return SeedVariables(z, logits, tilt)


def _groups(variables, config):
    lrs = {"z": config.lr_z, "kernel": config.lr_kernel, "tilt": config.lr_tilt}
    return [ParamGroup(name, [t], lrs[name]) for name, t in variables.named().items()]


class _Recorder:
    def __init__(self, config):
        self.config = config
        self.trace = SolveTrace()
        self.es = EsState(config.es) if config.es.enabled else None
        self.x_true = None if config.x_true is None else np.asarray(config.x_true, dtype=np.float64)

    def record(self, it, loss, recon, variables):
        tr, cfg = self.trace, self.config
        tr.loss.append(loss)
        if self.x_true is not None:
            tr.psnr.append(psnr(recon, self.x_true))
            if cfg.ssim_every and it % cfg.ssim_every == 0:
                tr.ssim.append(ssim(recon, self.x_true))
            else:
                tr.ssim.append(None)
            if cfg.fbe_every and it % cfg.fbe_every == 0:
                tr.fbe.append(fbe(recon, self.x_true))
            else:
                tr.fbe.append(None)
        if self.es is None:
            return "continue"
        decision = es_update(self.es, recon, variables.snapshot(), it)
        tr.var.append(self.es.last_var)
        return decision


def _evaluate(y, op, variables, rp):
    with ad.Tape() as tape:
        loss, x = objective(y, op, variables, rp)
    tensors = list(variables.named().values())
    grads = tape.backward(loss, tensors)
    return loss.item(), x.data, grads


def _run(y, op, rp, config, variables=None):
    if rp.variant != "ddim":
        raise ContractError("seed optimization needs the deterministic DDIM chain")
    y = np.asarray(getattr(y, "data", y), dtype=np.float64)
    variables = variables or init_variables(rp, op, config)
    rec = _Recorder(config)
    stop_reason = "max_iters"
    last_recon = None

    if config.optimizer == "adam":
        opt = Adam(_groups(variables, config))
        for it in range(config.max_iters):
            loss, recon, grads = _evaluate(y, op, variables, rp)
            if not np.isfinite(loss):
                raise SolveError(f"non-finite loss at iteration {it}", rec.trace)
            last_recon = recon
            if rec.record(it, loss, recon, variables) == "stop":
                stop_reason = "es_triggered"
                break
            opt.step([[g] for g in grads])
            last_recon = None
    elif config.optimizer == "lbfgs":
        tensors = list(variables.named().values())
        cache = {}

        def f(params):
            for t, p in zip(tensors, params):
                t.data = p
            loss, recon, grads = _evaluate(y, op, variables, rp)
            cache["recon"] = recon
            return loss, grads

        def callback(k, params, loss):
            for t, p in zip(tensors, params):
                t.data = p
            if not np.isfinite(loss):
                raise SolveError(f"non-finite loss at iteration {k - 1}", rec.trace)
            return rec.record(k - 1, loss, cache["recon"], variables) == "stop"

        if config.max_iters > 0:
            res = lbfgs_minimize(f, [t.data.copy() for t in tensors], memory=config.lbfgs_memory,
                                 max_iter=config.max_iters, callback=callback)
            if rec.es is not None and rec.es.stagnant >= config.es.patience:
                stop_reason = "es_triggered"
            else:
                for t, p in zip(tensors, res.params):
                    t.data = p
    else:
        raise ContractError(f"unknown optimizer {config.optimizer!r}")

    if last_recon is None:
        with ad.no_tape():
            last_recon = reverse_fn(variables.z, rp).data
    final_vars = variables.snapshot()
    if rec.es is not None and rec.es.best_recon is not None:
        best, best_index, best_vars = rec.es.best_recon, rec.es.best_index, rec.es.best_snapshot
    else:
        best, best_index, best_vars = last_recon, max(len(rec.trace) - 1, 0), final_vars

    kernel = tilt = None
    if variables.kernel_logits is not None:
        with ad.no_tape():
            kernel = ad.softmax(variables.kernel_logits).data
    if variables.tilt is not None:
        tilt = variables.tilt.data.copy()
    return SolveResult(last_recon, best, best_index, rec.trace, stop_reason,
                       final_vars, best_vars, kernel, tilt)


def solve(y, op, rp, config=None, variables=None):
    """Recover ``x = R(z*)`` from a measurement of a known operator."""
    if op.blind:
        raise ContractError("use solve_blind for operators with unknown kernels")
    return _run(y, op, rp, config or SolveConfig(), variables)


def solve_blind(y, op, rp, config=None, variables=None):
    """Jointly recover the seed, the softmax kernel and (for tilt-then-blur) the tilt field."""
    if not op.blind:
        raise ContractError("solve_blind needs a blind operator")
    return _run(y, op, rp, config or SolveConfig(max_iters=10000), variables)
