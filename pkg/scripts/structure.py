"""Energy and max|u| trajectories of the midpoint solver and the pure ETD integrator.

    python3 scripts/structure.py --samples 20 --out-dir structure
"""
import argparse
import os

import numpy as np

from nhns.hybrid import RunConfig, run, run_etd
from nhns.schemes import EtdParams, SchemeParams
from nhns.training import DatasetSpec, generate_sample


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--taus", default="0.5,1,2")
    ap.add_argument("--T", type=float, default=4.0)
    ap.add_argument("--samples", type=int, default=1)
    ap.add_argument("--seed", type=int, default=1_000_003)
    ap.add_argument("--out-dir", default="structure")
    args = ap.parse_args()

    spec = DatasetSpec(1, 512, 0, 0, seed=args.seed)
    data = [generate_sample(spec, i) for i in range(args.samples)]
    for tau in (float(t) for t in args.taus.split(",")):
        p = SchemeParams(tau, 0.01, spec.grid)
        for name in ("midpoint", "etd"):
            rise, over = [], []
            for i, u0 in enumerate(data):
                if name == "midpoint":
                    rep = run(RunConfig(p, t_end=args.T), u0)
                else:
                    rep = run_etd(EtdParams(p), u0, args.T)
                if i == 0:
                    rep.write_csv(os.path.join(args.out_dir, f"{name}_tau{tau:g}"))
                rise.append(np.diff(rep.energy).max())
                over.append(max(rep.max_abs) - 1)
            print(f"{name:>8} tau={tau:<4g} largest energy change {max(rise):+.3e}  "
                  f"max|u|-1: worst {max(over):+.3e}, samples above 1+1e-10: "
                  f"{sum(o > 1e-10 for o in over)}/{len(data)}")


if __name__ == "__main__":
    main()
