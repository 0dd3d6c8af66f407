"""Strong error against a fine coupled reference, for the oracle and reference models."""

import argparse

import numpy as np

from truncem import EnsembleConfig, ModelParams, estimate_strong_error, make_truncation


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n-paths", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=5)
    ap.add_argument("--coarsest", type=int, default=6, help="log2 of the coarsest step")
    ap.add_argument("--finest", type=int, default=12)
    ap.add_argument("--ref", type=int, default=15)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()

    deltas = tuple(2.0 ** -k for k in range(args.coarsest, args.finest + 1))
    ens = EnsembleConfig(args.n_paths, args.seed, 1.0, 2.0, deltas, 2.0 ** -args.ref)
    ref = ModelParams.reference_example()
    oracle = ModelParams(alpha1=1, mu1=1, sigma1=0.3, rho=1, theta=1, alpha2=0, mu2=1, sigma2=0,
                         r=1, phi=1, x0=0.5, phi0=1)
    runs = (("oracle (linear, constant variance)", oracle, make_truncation(oracle)),
            ("reference, h = delta^-1/2", ref, make_truncation(ref, paper_compat=True)))
    for label, model, builder in runs:
        rep = estimate_strong_error(ens, model, builder, workers=args.workers)
        print(f"{label}: fitted order {rep.fitted_order:.3f}")
        for d, e, s in zip(rep.deltas, rep.errors, rep.per_delta_stderr):
            print(f"  delta=2^{int(np.log2(d)):d}  error={e:.5g}  se={s:.2g}")


if __name__ == "__main__":
    main()
