"""Command-line entry point: ``nhns {gen-data,train,predict,run,bench,theory}``.

Every option can also be given in a flat ``key = value`` config file
(``--config``); explicit flags win over the file, and ``NHNS_SEED``
overrides the file's seed.  Exit codes: 0 ok, 2 usage, 3 numerical
failure, 4 I/O.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from nhns import analysis, hybrid
from nhns.grid import Field, FormatError, GridSpec, l2_norm, save_field, load_field, field_to_csv
from nhns.net import (FULL_1D, FULL_2D, CheckpointError, ConvNet, ConvSpec, forward,
                      read_checkpoint, write_checkpoint)
from nhns.newton import NewtonConfig, NewtonError, newton_solve
from nhns.schemes import EtdParams, SchemeParams
from nhns.training import (DatasetSpec, TrainConfig, TrainingError, generate_dataset,
                           generate_sample, load_dataset, save_dataset, train)

log = logging.getLogger("nhns")

EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 2, 3, 4

# held-out initial data for run/bench/theory come from this dataset seed offset
EVAL_SEED_OFFSET = 1_000_003

PRESETS = {
    "desk1d": dict(dim=1, n=512, eps=0.01, n_train=256, n_test=32, epochs=50),
    "full1d": dict(dim=1, n=512, eps=0.01, n_train=3200, n_test=320, epochs=500),
    "full2d": dict(dim=2, n=128, eps=0.02, n_train=3200, n_test=320, epochs=500),
}


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# config handling

def read_config(path) -> dict:
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected 'key = value'")
            k, v = (s.strip() for s in line.split("=", 1))
            out[k.replace("-", "_")] = v
    return out


def _known_keys(parser) -> dict:
    keys = {}
    for sub in _subparsers(parser).values():
        for act in sub._actions:
            if act.dest not in ("help", "config", "command", "theory_command"):
                keys[act.dest] = act
            if isinstance(act, argparse._SubParsersAction):
                for p in act.choices.values():
                    for a in p._actions:
                        if a.dest != "help":
                            keys[a.dest] = a
    return keys


def _subparsers(parser) -> dict:
    for act in parser._actions:
        if isinstance(act, argparse._SubParsersAction):
            return act.choices
    return {}


def _convert(action, raw: str):
    if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
        return raw.lower() in ("1", "true", "yes", "on")
    conv = action.type or str
    return conv(raw)


def _apply_defaults(parser, argv) -> None:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    values = {}
    if known.config:
        values = read_config(known.config)
    keys = _known_keys(parser)
    unknown = sorted(set(values) - set(keys))
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    resolved = {k: _convert(keys[k], v) for k, v in values.items()}
    if os.environ.get("NHNS_SEED"):
        resolved["seed"] = int(os.environ["NHNS_SEED"])
    if not resolved:
        return
    for sub in _subparsers(parser).values():
        sub.set_defaults(**resolved)
        for act in sub._actions:
            if isinstance(act, argparse._SubParsersAction):
                for p in act.choices.values():
                    p.set_defaults(**resolved)


def _floats(s: str) -> list[float]:
    return [float(x) for x in s.split(",") if x.strip()]


def _strs(s: str) -> list[str]:
    return [x.strip() for x in s.split(",") if x.strip()]


# --------------------------------------------------------------------------
# shared builders

def _grid(args) -> GridSpec:
    n = args.n if args.n is not None else (512 if args.dim == 1 else 128)
    return GridSpec(args.dim, n)


def _eps(args) -> float:
    if args.eps is not None:
        return args.eps
    return 0.01 if args.dim == 1 else 0.02


def _newton_cfg(args) -> NewtonConfig:
    return NewtonConfig(args.eps_tol, args.max_outer, args.gmres_tol,
                        args.gmres_restart, args.gmres_max_iter)


def _eval_spec(args, grid) -> DatasetSpec:
    return DatasetSpec(dim=grid.dim, n=grid.n, n_train=0, n_test=0, m1=args.m1,
                       m2=args.m2, seed=args.seed + EVAL_SEED_OFFSET)


def _initial_field(args, grid) -> np.ndarray:
    if getattr(args, "input", None):
        f = load_field(args.input)
        if f.grid.dim != grid.dim or f.grid.n != grid.n:
            raise UsageError(f"input field grid {f.grid} does not match {grid}")
        return f.array()
    return generate_sample(_eval_spec(args, grid), getattr(args, "sample", 0))


def _load_net(path) -> ConvNet:
    return read_checkpoint(path)


def _strategy(name, args, params):
    if name == "direct":
        return hybrid.Direct()
    if name == "etd":
        return hybrid.EtdPredictor(args.tau_etd or params.tau, args.krylov_dim)
    if name == "neural":
        if not args.checkpoint:
            raise UsageError("strategy 'neural' needs --checkpoint")
        paths = args.checkpoint if isinstance(args.checkpoint, list) else [args.checkpoint]
        nets = [_load_net(p) for p in paths]
        for net in nets:
            if math.isclose(net.meta.get("tau", params.tau), params.tau):
                return hybrid.Neural(net)
        return hybrid.Neural(nets[0])
    raise UsageError(f"unknown strategy {name!r}")


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


# --------------------------------------------------------------------------
# commands

def cmd_gen_data(args) -> int:
    if args.count is None or args.count < 1:
        raise UsageError("--count must be a positive integer")
    grid = _grid(args)
    spec = DatasetSpec(dim=grid.dim, n=grid.n, n_train=args.count, n_test=0,
                       modes=args.modes, m1=args.m1, m2=args.m2, seed=args.seed)
    data = generate_dataset(spec)
    save_dataset(args.out, data, grid.dim)
    peaks = np.max(np.abs(data.reshape(len(data), -1)), axis=1)
    print(f"wrote {len(data)} {grid.dim}D fields (n={grid.n}) to {args.out}; "
          f"max-norm in [{peaks.min():.17g}, {peaks.max():.17g}]")
    return 0


def cmd_train(args) -> int:
    if args.preset:
        # preset values fill in whatever was not given explicitly
        for k, v in PRESETS[args.preset].items():
            if not args._explicit.get(k):
                setattr(args, k, v)
    grid = _grid(args)
    n_train = args.n_train if args.n_train is not None else 3200
    n_test = args.n_test if args.n_test is not None else 320
    epochs = args.epochs if args.epochs is not None else 500
    spec = DatasetSpec(dim=grid.dim, n=grid.n, n_train=n_train, n_test=n_test,
                       modes=args.modes, m1=args.m1, m2=args.m2, seed=args.seed)
    if args.data:
        data = load_dataset(args.data)
        if data.shape[1:] != grid.shape:
            raise UsageError(f"dataset shape {data.shape[1:]} != grid {grid.shape}")
        if len(data) < n_train + n_test:
            n_test = max(0, len(data) - n_train)
    else:
        data = generate_dataset(spec)
    tr, te = data[:n_train], data[n_train:n_train + n_test]
    cfg = TrainConfig(tau=args.tau, eps_interface=_eps(args), epochs=epochs, lr0=args.lr0,
                      lr_halving_period=args.lr_halving_period,
                      weight_decay=args.weight_decay, batch_size=args.batch_size,
                      seed=args.seed)
    if args.arch == "full":
        cspec = FULL_1D if grid.dim == 1 else FULL_2D
    else:
        cspec = ConvSpec(grid.dim, tuple(int(c) for c in _strs(args.channels)), args.kernel)
    if args.final_tanh:
        cspec = ConvSpec(cspec.dim, cspec.channels, cspec.kernel, True)
    net = ConvNet.init(cspec, np.random.default_rng(args.seed))
    log.info("training %d-parameter network on %d samples", net.num_params(), len(tr))
    try:
        best, hist = train(net, tr, te, cfg, grid)
    except TrainingError as e:
        if args.history:
            with open(args.history, "w") as fh:
                fh.write(e.history.to_csv())
        print(f"training aborted: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    write_checkpoint(args.out, best)
    if args.history:
        with open(args.history, "w") as fh:
            fh.write(hist.to_csv())
    first, last = hist.rows[0]["train_loss"], hist.rows[-1]["train_loss"]
    print(f"wrote {best.num_params()}-parameter checkpoint to {args.out}; "
          f"train loss {first:.4e} -> {last:.4e}")
    return 0


def cmd_predict(args) -> int:
    net = _load_net(args.checkpoint)
    grid = _grid(args)
    u0 = _initial_field(args, grid)
    params = SchemeParams(args.tau if args.tau is not None else net.meta.get("tau", 1.0),
                          _eps(args), grid)
    pred = forward(net, u0)
    if args.out:
        save_field(args.out, Field.from_array(grid, pred))
    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write(field_to_csv(Field.from_array(grid, pred)))
    sol, _ = newton_solve(params, u0, pred, _newton_cfg(args))
    print(f"L2 distance to Newton-converged step: {float(l2_norm(pred - sol, grid)):.6e}")
    return 0


def cmd_run(args) -> int:
    grid = _grid(args)
    params = SchemeParams(args.tau, _eps(args), grid)
    u0 = _initial_field(args, grid)
    os.makedirs(args.out_dir, exist_ok=True)
    if args.strategy == "etd-pure":
        rep = hybrid.run_etd(EtdParams(params, args.krylov_dim), u0, args.T, args.record_every)
        rep.write_csv(args.out_dir)
        print(f"etd-pure: final max|u| = {rep.max_abs[-1]:.6f}, energy = {rep.energy[-1]:.6e}")
        return 0
    strat = _strategy(args.strategy, args, params)
    cfg = hybrid.RunConfig(params, _newton_cfg(args), strat, args.T, args.record_every)
    try:
        rep = hybrid.run(cfg, u0)
    except hybrid.RunError as e:
        e.report.write_csv(args.out_dir)
        print(f"run failed: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    rep.write_csv(args.out_dir)
    if args.save_final:
        save_field(args.save_final, Field.from_array(grid, rep.final))
    print(f"{args.strategy}: {len(rep.steps)} steps, mean iters "
          f"{np.mean(rep.iterations):.2f}, wall {rep.wall_time:.3f}s, "
          f"final max|u| = {rep.max_abs[-1]:.6f}")
    return 0


def _bench_tau(args, tau: float, data) -> list[dict]:
    grid = _grid(args)
    params = SchemeParams(tau, _eps(args), grid)
    strategies = {}
    for name in _strs(args.strategies):
        if name == "etd":
            strategies[name] = hybrid.EtdPredictor(args.tau_etd or tau, args.krylov_dim)
        else:
            strategies[name] = _strategy(name, args, params)
    t_end = args.T if args.T is not None else tau
    got = hybrid.bench(params, strategies, data, t_end, _newton_cfg(args),
                       args.repeats, args.reference)
    direct = next((r for r in got if r["strategy"] == "direct"), None)
    for r in got:
        r["acc_rate_vs_direct"] = (
            hybrid.acceleration_rate(direct["mean_total_time"], r["mean_total_time"])
            if direct is not None and r is not direct else float("nan"))
    return got


def cmd_bench(args) -> int:
    grid = _grid(args)
    spec = _eval_spec(args, grid)
    data = [generate_sample(spec, i) for i in range(args.seeds)]
    taus = _floats(args.taus)
    if args.workers > 1:
        # timings from concurrent workers share the CPUs; iteration columns are unaffected
        job_args = argparse.Namespace(**{k: v for k, v in vars(args).items() if k != "func"})
        with ProcessPoolExecutor(args.workers) as pool:
            per_tau = list(pool.map(_bench_tau, [job_args] * len(taus), taus,
                                    [data] * len(taus)))
    else:
        per_tau = [_bench_tau(args, tau, data) for tau in taus]
    rows = [r for got in per_tau for r in got]
    for r in rows:
        print(f"dim={r['dim']} tau={r['tau']:g} {r['strategy']:>7}: mean iters "
              f"{r['mean_iters']:.2f}, total {r['mean_total_time']:.4f}s")
    header = hybrid.BENCH_COLUMNS + ["acc_rate_vs_direct"]
    _write_csv(args.out, header, [[r[h] for h in header] for r in rows])
    return 0


def cmd_theory(args) -> int:
    if args.theory_command == "covering":
        res = analysis.covering_number(analysis.CoveringQuery(args.alpha, args.beta,
                                                              args.eps_cover, args.d))
        print(res.value if res.representable else f"exceeds representable (log10 = {res.log10:.6g})")
        return 0
    grid = _grid(args)
    tau = args.tau if args.tau is not None else 1.0
    params = SchemeParams(tau, _eps(args), grid)
    u0 = _initial_field(args, grid)
    exp = analysis.iteration_asymptote_experiment(params, u0, args.nmax, _newton_cfg(args))
    text = exp.to_csv()
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    res = exp.residuals()[exp.fit_mask()]
    print(f"C~ = {exp.c_tilde:.4f}, eps0 = {exp.eps0:.4e}, max |residual| on fit range "
          f"= {np.max(np.abs(res)):.3f}", file=sys.stderr)
    return 0


# --------------------------------------------------------------------------
# parser

def _common(p, tau_default=1.0):
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--dim", type=int, default=1, choices=(1, 2))
    p.add_argument("--n", type=int, default=None, help="points per axis (512 / 128)")
    p.add_argument("--eps", type=float, default=None, help="interfacial width")
    p.add_argument("--tau", type=float, default=tau_default)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--modes", type=int, default=128)
    p.add_argument("--m1", type=int, default=16)
    p.add_argument("--m2", type=int, default=16)


def _newton_opts(p):
    p.add_argument("--eps-tol", type=float, default=1e-8)
    p.add_argument("--max-outer", type=int, default=1000)
    p.add_argument("--gmres-tol", type=float, default=1e-10)
    p.add_argument("--gmres-restart", type=int, default=50)
    p.add_argument("--gmres-max-iter", type=int, default=2000)
    p.add_argument("--krylov-dim", type=int, default=10)
    p.add_argument("--tau-etd", type=float, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nhns", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a dataset of random initial data")
    _common(p)
    p.add_argument("--count", type=int, default=None)
    p.add_argument("--out", default="data.bin")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train the network with the residual loss")
    _common(p)
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--data", help="dataset container (otherwise generated)")
    p.add_argument("--n-train", type=int, default=None)
    p.add_argument("--n-test", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr0", type=float, default=4e-4)
    p.add_argument("--lr-halving-period", type=int, default=50)
    p.add_argument("--weight-decay", type=float, default=1e-7)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--arch", choices=("full", "custom"), default="full")
    p.add_argument("--channels", default="1,4,4,1")
    p.add_argument("--kernel", type=int, default=5)
    p.add_argument("--final-tanh", action="store_true")
    p.add_argument("--out", default="net.ckpt")
    p.add_argument("--history", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="apply a checkpoint to one field")
    _common(p, tau_default=None)
    _newton_opts(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", help="field container; default is a generated sample")
    p.add_argument("--sample", type=int, default=0)
    p.add_argument("--out")
    p.add_argument("--csv")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("run", help="march to T and write diagnostics")
    _common(p)
    _newton_opts(p)
    p.add_argument("--T", type=float, default=4.0)
    p.add_argument("--strategy", choices=("direct", "neural", "etd", "etd-pure"),
                   default="direct")
    p.add_argument("--checkpoint", action="append")
    p.add_argument("--input")
    p.add_argument("--sample", type=int, default=0)
    p.add_argument("--record-every", type=int, default=1)
    p.add_argument("--out-dir", default="run_out")
    p.add_argument("--save-final")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("bench", help="average iteration counts and timings")
    _common(p)
    _newton_opts(p)
    p.add_argument("--taus", default="0.5,1,2")
    p.add_argument("--strategies", default="direct,etd")
    p.add_argument("--checkpoint", action="append")
    p.add_argument("--seeds", type=int, default=100)
    p.add_argument("--T", type=float, default=None, help="default: one step")
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--reference", action="store_true")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default="bench.csv")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("theory", help="iteration asymptote and covering number")
    tsub = p.add_subparsers(dest="theory_command", required=True)
    a = tsub.add_parser("asymptote")
    _common(a, tau_default=None)
    _newton_opts(a)
    a.add_argument("--nmax", type=int, default=17)
    a.add_argument("--input")
    a.add_argument("--sample", type=int, default=0)
    a.add_argument("--out")
    c = tsub.add_parser("covering")
    c.add_argument("--config")
    c.add_argument("--d", type=int, required=True)
    c.add_argument("--alpha", type=float, required=True)
    c.add_argument("--beta", type=float, required=True)
    c.add_argument("--eps", dest="eps_cover", type=float, required=True)
    p.set_defaults(func=cmd_theory)
    return parser


def _explicit_flags(argv) -> dict:
    return {a.lstrip("-").split("=")[0].replace("-", "_"): True
            for a in argv if a.startswith("--")}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_defaults(parser, argv)
    except UsageError as e:
        print(f"nhns: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as e:
        print(f"nhns: cannot read config: {e}", file=sys.stderr)
        return EXIT_IO
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    args._explicit = _explicit_flags(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    resolved = {k: v for k, v in vars(args).items() if k not in ("func", "_explicit")}
    log.info("resolved config: %s", json.dumps(resolved, default=str, sort_keys=True))
    warnings.simplefilter("default")
    try:
        return args.func(args)
    except UsageError as e:
        print(f"nhns: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (NewtonError, TrainingError, FloatingPointError) as e:
        print(f"nhns: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, FormatError, CheckpointError) as e:
        print(f"nhns: I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except ValueError as e:
        print(f"nhns: error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
