"""Newton iteration count against a shrinking direct-guess error, with the log2 fit.

    python3 scripts/asymptote.py --tau 1 --nmax 17 --samples 5
"""
import argparse

import numpy as np

from nhns.analysis import iteration_asymptote_experiment
from nhns.schemes import SchemeParams
from nhns.training import DatasetSpec, generate_sample


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--dim", type=int, default=1)
    ap.add_argument("--tau", type=float, default=1.0)
    ap.add_argument("--nmax", type=int, default=None)
    ap.add_argument("--samples", type=int, default=1)
    ap.add_argument("--seed", type=int, default=1_000_003)
    ap.add_argument("--prefix", default="asymptote")
    args = ap.parse_args()

    n, eps = (512, 0.01) if args.dim == 1 else (128, 0.02)
    nmax = args.nmax if args.nmax is not None else (17 if args.dim == 1 else 12)
    spec = DatasetSpec(args.dim, n, 0, 0, seed=args.seed)
    p = SchemeParams(args.tau, eps, spec.grid)
    for i in range(args.samples):
        exp = iteration_asymptote_experiment(p, generate_sample(spec, i), nmax)
        path = f"{args.prefix}_{i}.csv"
        with open(path, "w") as fh:
            fh.write(exp.to_csv())
        res = np.abs(exp.residuals()[exp.fit_mask()])
        print(f"sample {i}: eps0={exp.eps0:.3e} C~={exp.c_tilde:.3f} "
              f"max|res|={res.max():.3f} counts={exp.counts.tolist()} -> {path}")


if __name__ == "__main__":
    main()
