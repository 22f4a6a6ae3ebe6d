#!/usr/bin/env python3
"""Marginal entropy of a trained pendulum model under a sweeping occluder."""
import argparse

import numpy as np
import torch

from dnbp.evaluation.analysis import build_occluder_sequence, occlusion_entropy_report
from dnbp.training import load_potentials


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("checkpoint")
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--frames", type=int, default=60)
    args = ap.parse_args()

    torch.set_num_threads(1)
    pot, _ = load_potentials(args.checkpoint)
    pot.eval()
    traces = [occlusion_entropy_report(pot, build_occluder_sequence(args.frames, s), seed=s)
              for s in range(args.seeds)]
    occ = np.concatenate([t.occluded for t in traces])
    ent = np.concatenate([t.entropies for t in traces])
    print(f"{int(occ.sum())} of {len(occ)} frames occluded")
    for v in range(ent.shape[1]):
        print(f"node {v}: occluded {ent[occ, v].mean():.3f} nats, clear {ent[~occ, v].mean():.3f} nats")


if __name__ == "__main__":
    main()
