"""Mean Newton iterations per step for direct, ETD and (optionally) neural guesses.

    python3 scripts/iteration_table.py --seeds 100 --eps-tol 1e-8 --out iterations.csv
    python3 scripts/iteration_table.py --checkpoint desk.ckpt --taus 2
"""
import argparse
import csv

from nhns.hybrid import Direct, EtdPredictor, Neural, bench
from nhns.net import read_checkpoint
from nhns.newton import NewtonConfig
from nhns.schemes import SchemeParams
from nhns.training import DatasetSpec, generate_sample


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--dim", type=int, default=1)
    ap.add_argument("--n", type=int, default=None)
    ap.add_argument("--eps", type=float, default=None)
    ap.add_argument("--taus", default="0.5,1,2")
    ap.add_argument("--seeds", type=int, default=100)
    ap.add_argument("--seed", type=int, default=1_000_003)
    ap.add_argument("--eps-tol", type=float, default=1e-8)
    ap.add_argument("--gmres-tol", type=float, default=1e-10)
    ap.add_argument("--checkpoint", action="append", default=[],
                    help="network checkpoint; used for the tau stored in its metadata")
    ap.add_argument("--out", default="iterations.csv")
    args = ap.parse_args()

    n = args.n or (512 if args.dim == 1 else 128)
    eps = args.eps or (0.01 if args.dim == 1 else 0.02)
    spec = DatasetSpec(args.dim, n, 0, 0, seed=args.seed)
    data = [generate_sample(spec, i) for i in range(args.seeds)]
    nets = {read_checkpoint(p).meta.get("tau"): read_checkpoint(p) for p in args.checkpoint}
    cfg = NewtonConfig(eps_tol=args.eps_tol, gmres_tol=args.gmres_tol)

    table = []
    for tau in (float(t) for t in args.taus.split(",")):
        strategies = {"direct": Direct(), "etd": EtdPredictor(tau)}
        if tau in nets:
            strategies["neural"] = Neural(nets[tau])
        for row in bench(SchemeParams(tau, eps, spec.grid), strategies, data, newton=cfg):
            table.append(row)
            print(f"tau={tau:<4g} {row['strategy']:>7}  mean iters {row['mean_iters']:.2f}")
    with open(args.out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(table[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(table)


if __name__ == "__main__":
    main()
