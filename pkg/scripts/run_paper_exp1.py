#!/usr/bin/env python3
"""Rank sweep R = 1..4 on the sine dataset (N=16, M=4, L=2pi).

Prints the MSE between the quantum mean and the full-rank classical mean at the
training inputs for each R, and optionally writes the full grid table.
"""
import argparse
import time

import numpy as np

from qahsgpr.experiment import export, preset, run_experiment, synthesize_dataset, with_overrides
from qahsgpr.hsgpr import build_expansion, reduced_gpr_direct
from qahsgpr.qpipeline import quantum_gpr


def rank_sweep(cfg):
    ds = synthesize_dataset(cfg.dataset, cfg.L)
    be = build_expansion(ds, cfg.domain(), cfg.hyperparams())
    ref = reduced_gpr_direct(be, ds, cfg.hyperparams(), ds.xs).means
    out = []
    for R in cfg.ranks:
        t0 = time.perf_counter()
        q = quantum_gpr(be, ds, ds.xs, cfg.quantum.qpca(), R=R, workers=cfg.workers)
        out.append((R, float(np.mean((q.means - ref) ** 2)), time.perf_counter() - t0))
    return out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--tau", type=int, default=13)
    ap.add_argument("--mode", default="analytic", choices=["analytic", "shots"])
    ap.add_argument("--out", help="also write the grid table (csv/json by suffix)")
    args = ap.parse_args()

    cfg = with_overrides(preset("paper-exp1"), tau=args.tau, mode=args.mode)
    print(f"tau={args.tau} mode={args.mode}")
    prev = np.inf
    for R, mse, dt in rank_sweep(cfg):
        mark = "" if mse < prev else "  (not decreasing)"
        print(f"R={R}  mse={mse:.6e}  {dt:.1f}s{mark}")
        prev = mse

    if args.out:
        table = run_experiment(cfg)
        export(table, "json" if args.out.endswith(".json") else "csv", args.out)
        print("wrote", args.out)


if __name__ == "__main__":
    main()
