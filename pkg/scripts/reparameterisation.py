"""Rescale one latent by alpha and compare QEM trajectories.

For each builtin with a designated scaled latent, runs QEM on the original
and the rescaled model with the same seed, maps the rescaled trajectory
back, and prints the largest relative deviation per alpha.
"""
import argparse

import numpy as np

from qem.models import scale_trajectory
from qem.oracles import make_instance
from qem.qem import QemConfig, run_qem


def max_deviation(base, scaled, target, alpha):
    worst = 0.0
    for lat in base.latents:
        got = scaled.mean_params(lat)
        if lat == target:
            got = scale_trajectory(got, alpha)
        ref = base.mean_params(lat)
        worst = max(worst, float(np.max(np.abs(got - ref) / np.maximum(np.abs(ref), 1e-12))))
    return worst


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--models", nargs="+", default=["radon_linear", "radon_full", "bus_mini", "occupancy_mini"])
    ap.add_argument("--alphas", nargs="+", type=float, default=[1e-1, 1e-2, 1e-3, 1e-4, 1e-6])
    ap.add_argument("--K", type=int, default=10)
    ap.add_argument("--iterations", type=int, default=50)
    args = ap.parse_args()
    cfg = QemConfig(K=args.K, iterations=args.iterations, seed=2, timing=False)
    for name in args.models:
        inst = make_instance(name, seed=0)
        base = run_qem(inst.model, cfg)
        for alpha in args.alphas:
            s = inst.scaled(alpha)
            dev = max_deviation(base, run_qem(s.model, cfg), s.builtin.scaled_latent, alpha)
            print(f"{name:15s} {s.builtin.scaled_latent:18s} alpha={alpha:<8g} max relative deviation {dev:.2e}",
                  flush=True)


if __name__ == "__main__":
    main()
