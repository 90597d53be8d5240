"""Desk-scale training run (256 samples, 50 epochs) and a held-out iteration check.

    python3 scripts/desk_train.py --tau 2 --out desk_tau2.ckpt
"""
import argparse

import numpy as np

from nhns.hybrid import Direct, Neural, bench
from nhns.net import FULL_1D, ConvNet, write_checkpoint
from nhns.schemes import SchemeParams
from nhns.training import DatasetSpec, TrainConfig, evaluate, generate_dataset, generate_sample, split, train


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--tau", type=float, default=2.0)
    ap.add_argument("--epochs", type=int, default=50)
    ap.add_argument("--n-train", type=int, default=256)
    ap.add_argument("--n-test", type=int, default=32)
    ap.add_argument("--batch-size", type=int, default=32)
    ap.add_argument("--lr0", type=float, default=4e-4)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--held-out", type=int, default=20)
    ap.add_argument("--out", default="desk.ckpt")
    ap.add_argument("--history", default="desk_history.csv")
    args = ap.parse_args()

    spec = DatasetSpec(1, 512, args.n_train, args.n_test, seed=args.seed)
    tr, te = split(spec, generate_dataset(spec))
    params = SchemeParams(args.tau, 0.01, spec.grid)
    net = ConvNet.init(FULL_1D, np.random.default_rng(args.seed))
    start = evaluate(params, net, tr)
    cfg = TrainConfig(tau=args.tau, eps_interface=0.01, epochs=args.epochs, lr0=args.lr0,
                      batch_size=args.batch_size, seed=args.seed)
    best, hist = train(net, tr, te, cfg, spec.grid,
                       callback=lambda r: print(f"epoch {r['epoch']:3d}  train {r['train_loss']:.3e}  "
                                                f"test {r['test_loss']:.3e}", flush=True))
    write_checkpoint(args.out, best)
    with open(args.history, "w") as fh:
        fh.write(hist.to_csv())
    print(f"untrained loss {start:.3e}, final train loss {hist.rows[-1]['train_loss']:.3e}")

    held = DatasetSpec(1, 512, 0, 0, seed=1_000_003)
    data = [generate_sample(held, i) for i in range(args.held_out)]
    for row in bench(params, {"direct": Direct(), "neural": Neural(best)}, data):
        print(f"{row['strategy']:>7}: mean iters {row['mean_iters']:.2f}")


if __name__ == "__main__":
    main()
