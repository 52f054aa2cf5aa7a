"""Convergence traces of QEM on the radon models.

Writes one trace CSV per (model, K) to the output directory and prints the
log evidence averaged over the first and last ten iterations, plus the
moment error against the exact posterior where one exists.
"""
import argparse
from pathlib import Path

import numpy as np

from qem.oracles import make_instance
from qem.errors import UnsupportedModelError
from qem.qem import QemConfig, run_qem


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--models", nargs="+", default=["radon_linear", "radon_full"])
    ap.add_argument("--K", nargs="+", type=int, default=[3, 10, 30])
    ap.add_argument("--iterations", type=int, default=250)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", type=Path, default=Path("out/convergence"))
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    for name in args.models:
        inst = make_instance(name, seed=args.seed)
        try:
            truth = inst.exact().first_moments
        except UnsupportedModelError:
            truth = None
        for K in args.K:
            cfg = QemConfig(K=K, iterations=args.iterations, seed=args.seed, timing=False)
            trace = run_qem(inst.model, cfg, test_model=inst.test_model, truth=truth)
            (args.out / f"{name}_K{K}.csv").write_text(trace.to_csv())
            le = trace.log_evidence
            line = f"{name:13s} K={K:3d}  log evidence {le[:10].mean():9.3f} -> {le[-10:].mean():9.3f}"
            if truth is not None:
                mse = trace.moment_mse
                line += f"  moment MSE {mse[0]:.3g} -> {mse[-1]:.3g}"
            print(line, flush=True)


if __name__ == "__main__":
    main()
