"""Up-and-out call prices on coupled grids, plus where the truncation cap sits."""

import argparse

import numpy as np

from truncem import BarrierOptionSpec, EnsembleConfig, ModelParams, make_truncation, price


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n-paths", type=int, default=10_000)
    ap.add_argument("--seeds", type=int, nargs="+", default=[1, 2, 3])
    ap.add_argument("--strike", type=float, default=0.2)
    ap.add_argument("--barrier", type=float, default=2.0)
    ap.add_argument("--levels", type=int, nargs="+", default=[7, 8, 9, 10])
    args = ap.parse_args()

    model = ModelParams.reference_example()
    builder = make_truncation(model, paper_compat=True)
    spec = BarrierOptionSpec(args.strike, args.barrier, 1.0)
    base = 2.0 ** -max(args.levels)
    for k in args.levels:
        print(f"delta=2^-{k}: cap on x = {builder(2.0 ** -k).cap:.4f}")
    for seed in args.seeds:
        ens = EnsembleConfig(args.n_paths, seed, 1.0)
        ps = np.array([price(spec, ens, model, builder(2.0 ** -k), base_delta=base).price for k in args.levels])
        print(f"seed {seed}: prices {np.round(ps, 5).tolist()}  successive |diff| {np.round(np.abs(np.diff(ps)), 5).tolist()}")


if __name__ == "__main__":
    main()
