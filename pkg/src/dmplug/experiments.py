"""Named experiments behind the command line: build fixtures, run, write outputs.

Every run is reproducible from ``(config, seed)``. The run seed is split into
independent child streams (data, operator, noise, solver, baseline, training)
so adding a consumer never perturbs the others.
"""

import csv
import json
import math
import os
from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .baseline import InterleaveConfig, interleave_solve
from .config import config_to_dict
from .errors import ConfigError
from .fixtures import make_fixture
from .io import load_checkpoint, save_checkpoint, save_image
from .metrics import band_energy_fractions, fbe, psnr, ssim
from .noise import NoiseSpec, corrupt
from .operators import (BlindBlur, Downsample, Identity, Inpaint, NonlinearBlur, TiltThenBlur,
                        conv_blur, gaussian_kernel, random_mask, tilt_warp)
from .reverse import ReverseProcess, sample
from .schedule import make_linear_schedule, pick_substeps
from .score import AnalyticScore, NeuralScore, TrainConfig, train_score
from .solver import EsConfig, SolveConfig, solve, solve_blind

__all__ = [
    "Streams", "Problem", "build_schedule", "build_prior", "build_problem",
    "run_train_score", "run_sample", "run_solve", "run_compare", "run_spectra",
    "write_trajectory", "write_results", "TRAJECTORY_COLUMNS",
]

TRAJECTORY_COLUMNS = ["iter", "loss", "psnr", "ssim", "var",
                      "fbe1", "fbe2", "fbe3", "fbe4", "fbe5"]
_STREAMS = ("data", "operator", "noise", "solver", "baseline", "train", "sample")


class Streams:
    """Named child generators derived from a single run seed."""

    def __init__(self, seed):
        children = np.random.SeedSequence(seed).spawn(len(_STREAMS))
        self._ss = dict(zip(_STREAMS, children))

    def rng(self, name):
        return np.random.default_rng(self._ss[name])

    def int_seed(self, name):
        return int(self._ss[name].generate_state(1, np.uint64)[0])


@dataclass
class Problem:
    x_true: np.ndarray
    y: np.ndarray
    op: object
    # measurement operator used to synthesize y when op is blind
    true_kernel: np.ndarray = None
    true_tilt: np.ndarray = None


def build_schedule(cfg):
    return make_linear_schedule(cfg.T, cfg.beta_start, cfg.beta_end)


def _fixture(cfg, n, seed=None):
    d = cfg.data
    seed = d.train_seed if seed is None else seed
    if d.fixture == "smooth_images":
        return make_fixture("smooth_images", seed=seed, n=n, side=d.side,
                            sigma=d.sigma, floor=d.floor)
    if d.fixture == "lowrank_gaussian":
        return make_fixture("lowrank_gaussian", seed=seed, n=n, dim=d.side * d.side,
                            rank=d.rank, sample_shape=(d.side, d.side))
    if d.fixture == "gmm":
        return make_fixture("gmm", seed=seed, n=n, dim=d.dim)
    raise ConfigError(f"data.fixture: unknown fixture {d.fixture!r}")


def _target(cfg):
    """Held-out ground truth: never one of the training samples."""
    d = cfg.data
    if d.fixture == "smooth_images":
        return _fixture(cfg, 1, seed=d.target_seed).samples[0]
    # the low-rank structure depends on the fixture seed, so draw from its law instead
    prior = _fixture(cfg, 1).prior()
    return prior.sample(1, np.random.default_rng(d.target_seed))[0]


def build_prior(cfg, schedule=None):
    """Return ``(prior, schedule)`` for the configured prior selection."""
    if cfg.prior.kind == "checkpoint":
        net, schedule, _ = load_checkpoint(cfg.prior.checkpoint)
        return net, schedule
    schedule = schedule or build_schedule(cfg)
    return AnalyticScore(_fixture(cfg, 1).prior(), schedule), schedule


def _reverse(cfg):
    prior, schedule = build_prior(cfg)
    return ReverseProcess(prior, schedule, tuple(pick_substeps(schedule, cfg.solver.substeps)))


def _smooth_tilt(shape, bound, rng):
    raw = rng.standard_normal((2,) + shape)
    k = gaussian_kernel(5, 1.5)
    with ad.no_tape():
        field = np.stack([conv_blur(ad.Tensor(raw[i]), k).data for i in range(2)])
    return field * (0.5 * bound / np.max(np.abs(field)))


def build_problem(cfg, streams):
    """Ground truth, operator and measurement for an image task."""
    if cfg.data.fixture == "gmm":
        raise ConfigError("data.fixture: image tasks need smooth_images or lowrank_gaussian")
    x_true = _target(cfg)
    o = cfg.operator
    shape = x_true.shape
    kernel = tilt = None
    task = cfg.task
    if task == "sr":
        op = Downsample(o.factor)
    elif task == "inpaint":
        op = Inpaint(random_mask(shape, o.drop, streams.rng("operator")))
    elif task == "nblur":
        op = NonlinearBlur(gaussian_kernel(o.kernel_side, o.kernel_sigma), o.gamma)
    elif task == "bid":
        op = BlindBlur(o.blind_kernel_side)
        kernel = gaussian_kernel(o.blind_kernel_side, o.kernel_sigma)
    elif task == "turbulence":
        op = TiltThenBlur(o.blind_kernel_side, o.max_tilt)
        kernel = gaussian_kernel(o.blind_kernel_side, o.kernel_sigma)
        tilt = _smooth_tilt(shape, o.max_tilt, streams.rng("operator"))
    else:  # regress, denoise
        op = Identity()

    with ad.no_tape():
        if task == "bid":
            clean = conv_blur(ad.Tensor(x_true), kernel).data
        elif task == "turbulence":
            clean = conv_blur(tilt_warp(ad.Tensor(x_true), tilt, o.max_tilt), kernel).data
        else:
            clean = op.apply(ad.Tensor(x_true)).data
    if task == "regress":
        y = clean.copy()
    else:
        n = cfg.noise
        y = corrupt(clean, NoiseSpec(n.kind, n.level, n.param), streams.rng("noise"))
    return Problem(x_true, y, op, kernel, tilt)


SSIM_WINDOW = 11


def _ssim_or_none(x, ref):
    # SSIM is undefined for images smaller than its window
    if min(np.shape(ref)[-2:]) < SSIM_WINDOW:
        return None
    return ssim(x, ref)


def _solve_config(cfg, streams, x_true, fbe_every=None):
    s = cfg.solver
    ssim_every = s.ssim_every if min(x_true.shape[-2:]) >= SSIM_WINDOW else 0
    return SolveConfig(
        max_iters=s.max_iters, optimizer=s.optimizer, lr_z=s.lr_z, lr_kernel=s.lr_kernel,
        lr_tilt=s.lr_tilt, es=EsConfig(s.es.window, s.es.patience, s.es.enabled),
        seed=streams.int_seed("solver"), lbfgs_memory=s.lbfgs_memory, x_true=x_true,
        fbe_every=s.fbe_every if fbe_every is None else fbe_every, ssim_every=ssim_every,
    )


def _echo(cfg):
    """Resolved config for results.json; the output directory is left out so that
    reruns into different directories produce identical files."""
    d = config_to_dict(cfg)
    d.pop("out", None)
    return d


def _num(v):
    if v is None:
        return None
    v = float(v)
    return v if math.isfinite(v) else None


def _residual(y, op, x, params=None):
    with ad.no_tape():
        pred = op.apply(ad.Tensor(x), params).data
    return float(np.linalg.norm(y - pred) / np.linalg.norm(y))


def write_trajectory(path, trace):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAJECTORY_COLUMNS)
        for row in trace.rows():
            bands = row["fbe"] if row["fbe"] is not None else [None] * 5
            vals = [row["iter"], row["loss"], row["psnr"], row["ssim"], row["var"], *bands]
            w.writerow(["" if v is None else repr(float(v)) if i else v for i, v in enumerate(vals)])


def write_results(path, payload):
    def clean(o):
        if isinstance(o, dict):
            return {k: clean(v) for k, v in o.items()}
        if isinstance(o, (list, tuple)):
            return [clean(v) for v in o]
        if isinstance(o, (float, np.floating)):
            return _num(o)
        if isinstance(o, np.integer):
            return int(o)
        return o

    with open(path, "w") as fh:
        json.dump(clean(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _solve(cfg, problem, streams, fbe_every=None):
    rp = _reverse(cfg)
    sc = _solve_config(cfg, streams, problem.x_true, fbe_every)
    if problem.op.blind:
        return solve_blind(problem.y, problem.op, rp, sc), rp
    return solve(problem.y, problem.op, rp, sc), rp


def _solve_summary(res, problem):
    xt = problem.x_true
    params = {}
    if res.kernel is not None:
        params["kernel_logits"] = ad.Tensor(np.log(np.maximum(res.kernel, 1e-300)))
    if res.tilt is not None:
        params["tilt"] = ad.Tensor(res.tilt)
    out = {
        "iterations": res.iterations,
        "stop_reason": res.stop_reason,
        "best_index": res.best_index,
        "final_psnr": psnr(res.final, xt),
        "final_ssim": _ssim_or_none(res.final, xt),
        "best_psnr": psnr(res.best, xt),
        "best_ssim": _ssim_or_none(res.best, xt),
        "final_loss": res.trace.loss[-1] if res.trace.loss else None,
        "final_residual": _residual(problem.y, problem.op, res.final, params or None),
    }
    if res.trace.psnr:
        p = np.asarray(res.trace.psnr)
        out["peak_psnr"] = float(p.max())
        out["peak_index"] = int(p.argmax())
    if problem.true_kernel is not None and res.kernel is not None:
        out["kernel_tv"] = 0.5 * float(np.abs(res.kernel - problem.true_kernel).sum())
    return out


def _save_images(out, res):
    save_image(os.path.join(out, "recon.pfm"), res.final)
    save_image(os.path.join(out, "recon.pgm"), res.final)
    save_image(os.path.join(out, "best.pgm"), res.best)
    if res.kernel is not None:
        save_image(os.path.join(out, "kernel.pfm"), res.kernel)
    if res.tilt is not None:
        for i, name in enumerate("yx"):
            save_image(os.path.join(out, f"tilt_{name}.pfm"), res.tilt[i])


def run_solve(cfg, out):
    streams = Streams(cfg.seed)
    problem = build_problem(cfg, streams)
    res, _ = _solve(cfg, problem, streams)
    write_trajectory(os.path.join(out, "trajectory.csv"), res.trace)
    _save_images(out, res)
    save_image(os.path.join(out, "truth.pgm"), problem.x_true)
    results = {"experiment": "solve", "task": cfg.task, "config": _echo(cfg),
               "measurement_psnr": _measurement_psnr(problem), **_solve_summary(res, problem)}
    write_results(os.path.join(out, "results.json"), results)
    return results


def _measurement_psnr(problem):
    if problem.y.shape == problem.x_true.shape:
        return psnr(problem.y, problem.x_true)
    return None


PROGRESS_MARKS = tuple(i / 10 for i in range(11))


def _at_progress(values):
    """Sample a per-step trace at fixed fractions of its own length."""
    if not values:
        return [None] * len(PROGRESS_MARKS)
    last = len(values) - 1
    return [float(values[round(f * last)]) for f in PROGRESS_MARKS]


def run_compare(cfg, out):
    """DMPlug and the interleaving baseline on the same measurement."""
    streams = Streams(cfg.seed)
    problem = build_problem(cfg, streams)
    if problem.op.blind:
        raise ConfigError("task: compare needs a known operator (not bid/turbulence)")
    res, rp = _solve(cfg, problem, streams)
    b = cfg.baseline
    steps = None if b.substeps is None else tuple(pick_substeps(rp.schedule, b.substeps))
    base = interleave_solve(problem.y, problem.op, rp,
                            InterleaveConfig(b.zeta, steps, b.variant), streams.rng("baseline"))
    # the two arms take different numbers of steps, so residuals are also
    # reported against the fraction of each run completed
    ynorm = float(np.linalg.norm(problem.y))
    dm_resid = [float(np.sqrt(v * problem.y.size)) / ynorm for v in res.trace.loss]
    write_trajectory(os.path.join(out, "trajectory.csv"), res.trace)
    _save_images(out, res)
    save_image(os.path.join(out, "baseline.pgm"), base.recon)
    results = {
        "experiment": "compare", "task": cfg.task, "config": _echo(cfg),
        "dmplug": _solve_summary(res, problem),
        "baseline": {"final_residual": base.final_residual,
                     "psnr": psnr(base.recon, problem.x_true),
                     "ssim": _ssim_or_none(base.recon, problem.x_true),
                     "steps": len(base.residuals), "residuals": list(base.residuals)},
        "progress": {"fractions": list(PROGRESS_MARKS),
                     "dmplug_iterations": res.iterations,
                     "dmplug_residual": _at_progress(dm_resid),
                     "baseline_residual": _at_progress(base.residuals)},
    }
    write_results(os.path.join(out, "results.json"), results)
    return results


def run_spectra(cfg, out):
    """Solve while recording the five band errors at every iteration."""
    streams = Streams(cfg.seed)
    problem = build_problem(cfg, streams)
    res, _ = _solve(cfg, problem, streams, fbe_every=cfg.solver.fbe_every or 1)
    write_trajectory(os.path.join(out, "trajectory.csv"), res.trace)
    _save_images(out, res)
    rows = [f for f in res.trace.fbe if f is not None]
    marks = {}
    for frac in (0.1, 0.5, 1.0):
        i = min(len(res.trace.fbe) - 1, int(frac * len(res.trace.fbe)))
        if i >= 0 and res.trace.fbe[i] is not None:
            marks[f"fbe_at_{int(frac * 100)}pct"] = list(res.trace.fbe[i])
    results = {
        "experiment": "spectra", "task": cfg.task, "config": _echo(cfg),
        "truth_band_energy": list(band_energy_fractions(problem.x_true - problem.x_true.mean())),
        "final_fbe": list(fbe(res.final, problem.x_true)),
        "recorded": len(rows), **marks, **_solve_summary(res, problem),
    }
    write_results(os.path.join(out, "results.json"), results)
    return results


def run_train_score(cfg, out):
    streams = Streams(cfg.seed)
    schedule = build_schedule(cfg)
    fx = _fixture(cfg, cfg.data.n_train)
    shape = fx.samples.shape[1:]
    t = cfg.train
    net = NeuralScore(shape, schedule.T, tuple(t.widths), seed=streams.int_seed("train") % 2 ** 32)
    steps = tuple(pick_substeps(schedule, cfg.solver.substeps)) if t.timesteps == "substeps" else None
    tc = TrainConfig(steps=t.steps, batch=t.batch, lr=t.lr, seed=streams.int_seed("train"),
                     timesteps=steps)
    net, history = train_score(fx.samples, schedule, net, tc)
    path = os.path.join(out, "score.ckpt")
    save_checkpoint(path, net, schedule, {"fixture": fx.kind, "fixture_params": {
        k: v for k, v in fx.params.items() if isinstance(v, (int, float, str))}})
    with open(os.path.join(out, "train_loss.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "loss"])
        for i, v in enumerate(history):
            w.writerow([i, repr(float(v))])
    tail = history[-min(len(history), 100):] or [float("nan")]
    results = {"experiment": "train-score", "config": _echo(cfg), "checkpoint": "score.ckpt",
               "steps": len(history), "final_loss_mean100": float(np.mean(tail))}
    write_results(os.path.join(out, "results.json"), results)
    return results


def run_sample(cfg, out, n=16):
    streams = Streams(cfg.seed)
    prior, schedule = build_prior(cfg)
    rp = ReverseProcess(prior, schedule, tuple(pick_substeps(schedule, cfg.solver.substeps)))
    xs = sample(rp, n, streams.rng("sample"))
    np.save(os.path.join(out, "samples.npy"), xs)
    if xs.ndim == 3:
        for i, x in enumerate(xs[:min(n, 16)]):
            save_image(os.path.join(out, f"sample_{i:02d}.pgm"), x)
    flat = xs.reshape(n, -1)
    results = {"experiment": "sample", "config": _echo(cfg), "n": n,
               "mean": float(flat.mean()), "std": float(flat.std()),
               "min": float(flat.min()), "max": float(flat.max())}
    write_results(os.path.join(out, "results.json"), results)
    return results


def with_overrides(cfg, **kw):
    """Copy of ``cfg`` with top-level or ``section.field`` overrides applied."""
    cfg = replace(cfg)
    for key, value in kw.items():
        if value is None:
            continue
        if "." in key:
            section, name = key.split(".", 1)
            if "." in name:
                sub, leaf = name.split(".", 1)
                inner = replace(getattr(getattr(cfg, section), sub), **{leaf: value})
                setattr(cfg, section, replace(getattr(cfg, section), **{sub: inner}))
            else:
                setattr(cfg, section, replace(getattr(cfg, section), **{name: value}))
        else:
            cfg = replace(cfg, **{key: value})
    return cfg.validate()
