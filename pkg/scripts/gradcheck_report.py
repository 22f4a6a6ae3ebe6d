#!/usr/bin/env python3
"""Finite-difference check of every potential network of a graph."""
import argparse
import time

import numpy as np
import torch

from dnbp.diffcore.gradcheck import relative_errors, stratified_coords
from dnbp.graph import NOISE_DIM, Potentials, pendulum_graph, spider_graph


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--task", choices=("pendulum", "spider"), default="pendulum")
    ap.add_argument("--inputs", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    torch.set_num_threads(1)
    torch.manual_seed(args.seed)
    pot = Potentials(pendulum_graph() if args.task == "pendulum" else spider_graph())
    gen = torch.Generator().manual_seed(args.seed)
    n = args.inputs

    def project(k):
        w = torch.randn(k, generator=gen, dtype=torch.float64)
        return lambda m, x: m(x) @ w

    def scalar(m, x):
        return m(x).squeeze(-1)

    enc = pot.encoders["0"]
    cases = [
        ("conv encoder", enc, torch.rand(n, 3, 128, 128, generator=gen), project(10),
         dict(coords=stratified_coords(enc, 1), n_directions=4, chunk=1)),
        ("unary head", pot.unary_heads["0"], torch.randn(n, 12, generator=gen), scalar, {}),
        ("pairwise density", pot.pair_density["0-1"], torch.rand(n, 2, generator=gen) * 2 - 1,
         scalar, {}),
        ("pairwise sampler", pot.pair_sampler["0-1"], torch.randn(n, NOISE_DIM, generator=gen),
         project(2), {}),
        ("diffusion", pot.diffusion["0"], torch.randn(n, NOISE_DIM, generator=gen), project(2), {}),
    ]
    for name, module, x, f, kw in cases:
        kw = {"coords": stratified_coords(module, 64), "n_directions": 16, **kw}
        t = time.monotonic()
        err = relative_errors(module, f, x, **kw)
        print(f"{name:18s} max {float(err.max()):.2e}  median {float(np.median(err)):.2e}  "
              f"{time.monotonic() - t:.1f} s")


if __name__ == "__main__":
    main()
