#!/usr/bin/env python
"""Early-learning-then-overfitting on a denoising problem, and where the
windowed-variance rule stops.

A small score network is trained on smooth 16x16 images first (about half a
minute at the default 3000 steps), then the seed is fit to a noisy image with
A = identity. The PSNR against the clean image rises, peaks, then falls as
the noise is absorbed.

    python demos/denoise_early_stopping.py [--train-steps 3000] [--iters 6000]
"""

import argparse
import csv

import numpy as np

from dmplug.fixtures import smooth_images_fixture
from dmplug.noise import NoiseSpec, corrupt
from dmplug.operators import Identity
from dmplug.reverse import ReverseProcess
from dmplug.schedule import make_linear_schedule
from dmplug.score import NeuralScore, TrainConfig, train_score
from dmplug.solver import EsConfig, SolveConfig, solve


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--train-steps", type=int, default=3000)
    ap.add_argument("--iters", type=int, default=6000)
    ap.add_argument("--lr", type=float, default=0.1)
    ap.add_argument("--window", type=int, default=50)
    ap.add_argument("--patience", type=int, default=300)
    ap.add_argument("--csv", default=None, help="write iter,psnr,var here")
    args = ap.parse_args()

    sch = make_linear_schedule()
    data = smooth_images_fixture(seed=0, n=4000).samples
    net, losses = train_score(data, sch, NeuralScore((16, 16), sch.T, seed=0), TrainConfig(
        steps=args.train_steps, batch=128, lr=1e-3, seed=0, timesteps=(334, 667, 1000)))
    print(f"score net: loss {np.mean(losses[:100]):.4f} -> {np.mean(losses[-100:]):.4f}")
    rp = ReverseProcess.with_steps(net, sch, 3)

    x = smooth_images_fixture(seed=100, n=1).samples[0]
    y = corrupt(x, NoiseSpec("gaussian_sigma", param=0.08), np.random.default_rng(100))

    cfg = SolveConfig(max_iters=args.iters, lr_z=args.lr, x_true=x, ssim_every=0,
                      es=EsConfig(args.window, args.patience, enabled=True))
    # run past the stopping point too, so the whole curve is visible
    full = solve(y, Identity(), rp, SolveConfig(max_iters=args.iters, lr_z=args.lr,
                                                x_true=x, ssim_every=0))
    es = solve(y, Identity(), rp, cfg)

    p = np.array(full.trace.psnr)
    print(f"peak  {p.max():.2f} dB at iter {p.argmax()}")
    print(f"final {p[-1]:.2f} dB at iter {len(p) - 1}")
    print(f"ES    {es.trace.psnr[es.best_index]:.2f} dB at iter {es.best_index} "
          f"({es.stop_reason} after {es.iterations} iters)")

    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "psnr", "var"])
            var = es.trace.var + [None] * (len(p) - len(es.trace.var))
            for i, (a, v) in enumerate(zip(p, var)):
                w.writerow([i, a, "" if v is None else v])


if __name__ == "__main__":
    main()
