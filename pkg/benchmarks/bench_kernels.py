#!/usr/bin/env python3
"""Benchmark the fused forward/backward kernel: numba vs pure numpy.

Builds a synthetic dataset, then times full epochs of batched
forward+backward+Adam under each backend. The same arithmetic runs in both
cases; only the execution engine differs.

Usage: python3 benchmarks/bench_kernels.py [--users 400] [--epochs 3]
"""

import argparse
import time

from cafata import TrainingConfig, Variant
from cafata.kernels import HAVE_NUMBA
from cafata.synthetic import PlantedConfig, planted_dataset
from cafata.training import train


def time_training(dataset, backend: str, epochs: int, dim: int) -> float:
    config = TrainingConfig(
        variant=Variant.CA_FATA,
        dimension=dim,
        max_epochs=epochs,
        patience=epochs,
        seed=0,
        backend=backend,
    )
    start = time.perf_counter()
    train(dataset, config)
    return time.perf_counter() - start


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--users", type=int, default=400)
    parser.add_argument("--items", type=int, default=150)
    parser.add_argument("--per-user", type=int, default=30)
    parser.add_argument("--dim", type=int, default=16)
    parser.add_argument("--epochs", type=int, default=3)
    args = parser.parse_args()

    cfg = PlantedConfig(
        n_users=args.users,
        n_items=args.items,
        interactions_per_user=args.per_user,
        hidden_dim=8,
        seed=0,
    )
    dataset, _ = planted_dataset(cfg)
    n_train = len(dataset.train)
    visits = n_train * args.epochs
    print(f"dataset: {n_train} train interactions, dim={args.dim}, "
          f"{args.epochs} epochs ({visits} sample visits)")

    if HAVE_NUMBA:
        # warm up compilation outside the timed region
        time_training(dataset, "numba", 1, args.dim)
        t_numba = time_training(dataset, "numba", args.epochs, args.dim)
        print(f"numba : {t_numba:8.3f}s  ({visits / t_numba:12,.0f} samples/s)")
    else:
        t_numba = None
        print("numba : not installed")

    t_numpy = time_training(dataset, "numpy", args.epochs, args.dim)
    print(f"numpy : {t_numpy:8.3f}s  ({visits / t_numpy:12,.0f} samples/s)")

    if t_numba:
        print(f"speedup: {t_numpy / t_numba:.1f}x")


if __name__ == "__main__":
    main()
