"""Command line entry point.

    dmplug <subcommand> [--config PATH] [--seed N] [--out DIR] [overrides]

Subcommands: train-score, sample, solve, regress, compare, spectra.
Exit status is 0 on success, 2 for configuration errors and 3 for runtime
failures. ``DMPLUG_THREADS`` caps how many ``--runs`` execute in parallel.
"""

import argparse
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor

from . import experiments as ex
from .config import ExperimentConfig, load_config
from .errors import ConfigError

log = logging.getLogger("dmplug")

SUBCOMMANDS = ("train-score", "sample", "solve", "regress", "compare", "spectra")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad flags, which matches the config-error code
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: config error: {message}\n")


def build_parser():
    p = _Parser(prog="dmplug", description="Seed-space diffusion inversion at desk scale.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in SUBCOMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="JSON experiment config")
        s.add_argument("--seed", type=int, help="run seed (unsigned 64-bit)")
        s.add_argument("--out", help="output directory")
        s.add_argument("--runs", type=int, help="independent runs with seeds seed, seed+1, ...")
        s.add_argument("--task", help="override task")
        s.add_argument("--checkpoint", help="use a trained score checkpoint as the prior")
        if name in ("solve", "regress", "compare", "spectra"):
            s.add_argument("--max-iters", type=int)
            s.add_argument("--optimizer", choices=("adam", "lbfgs"))
            s.add_argument("--lr", type=float, help="learning rate for the seed")
            s.add_argument("--noise-param", type=float)
            s.add_argument("--es", action="store_true", default=None,
                           help="enable windowed-variance early stopping")
        if name == "train-score":
            s.add_argument("--steps", type=int)
        if name == "sample":
            s.add_argument("--n", type=int, default=16)
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def resolve_config(args):
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    task = args.task
    if args.command == "regress" and task is None and cfg.task not in ("regress", "denoise"):
        task = "regress"
    over = {
        "seed": args.seed, "out": args.out, "runs": args.runs, "task": task,
        "solver.max_iters": getattr(args, "max_iters", None),
        "solver.optimizer": getattr(args, "optimizer", None),
        "solver.lr_z": getattr(args, "lr", None),
        "noise.param": getattr(args, "noise_param", None),
        "solver.es.enabled": getattr(args, "es", None),
        "train.steps": getattr(args, "steps", None),
    }
    if args.checkpoint:
        over["prior.kind"] = "checkpoint"
        over["prior.checkpoint"] = args.checkpoint
    return ex.with_overrides(cfg, **over)


def _run_one(command, cfg, out, args):
    os.makedirs(out, exist_ok=True)
    if command == "train-score":
        return ex.run_train_score(cfg, out)
    if command == "sample":
        return ex.run_sample(cfg, out, args.n)
    if command in ("solve", "regress"):
        return ex.run_solve(cfg, out)
    if command == "compare":
        return ex.run_compare(cfg, out)
    return ex.run_spectra(cfg, out)


def _threads():
    raw = os.environ.get("DMPLUG_THREADS", "")
    try:
        return max(1, int(raw)) if raw else (os.cpu_count() or 1)
    except ValueError:
        raise ConfigError(f"DMPLUG_THREADS must be an integer, got {raw!r}") from None


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
        threads = _threads()
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG

    # each run owns its seed, RNG streams and output subdirectory
    jobs = []
    for r in range(cfg.runs):
        run_cfg = ex.with_overrides(cfg, seed=(cfg.seed + r) % 2 ** 64, runs=1)
        out = cfg.out if cfg.runs == 1 else os.path.join(cfg.out, f"run_{r:03d}")
        jobs.append((run_cfg, out))
    try:
        if len(jobs) == 1:
            results = [_run_one(args.command, jobs[0][0], jobs[0][1], args)]
        else:
            with ThreadPoolExecutor(max_workers=min(threads, len(jobs))) as pool:
                futs = [pool.submit(_run_one, args.command, c, o, args) for c, o in jobs]
                results = [f.result() for f in futs]
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as e:  # anything else is a runtime failure of the experiment
        log.debug("run failed", exc_info=True)
        print(f"runtime error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    for (_, out), res in zip(jobs, results):
        log.info("%s -> %s", args.command, out)
        summary = {k: res[k] for k in ("final_psnr", "best_psnr", "final_residual") if k in res}
        print(f"{args.command}: wrote {out}" + "".join(
            f" {k}={v:.4g}" for k, v in summary.items() if isinstance(v, float)))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
