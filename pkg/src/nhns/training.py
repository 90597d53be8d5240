"""Random Fourier initial data and unsupervised residual training.

The network is trained to make the implicit midpoint residual
``Psi(u0, N(u0)) - N(u0)`` vanish; no solved targets are ever used.
"""
from __future__ import annotations

import csv
import io
import logging
import struct
import time
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from nhns.grid import FormatError, GridSpec, apply_laplacian
from nhns.net import AdamState, ConvNet, adam_step, backward, forward, forward_cached
from nhns.schemes import SchemeParams, residual

log = logging.getLogger(__name__)

DATA_MAGIC = b"NHNSDAT1"
MAX_RESAMPLES = 16


@dataclass(frozen=True)
class DatasetSpec:
    dim: int = 1
    n: int = 512
    n_train: int = 3200
    n_test: int = 320
    modes: int = 128
    m1: int = 16
    m2: int = 16
    decay_length: float = 4.0
    decay_2d: bool = False
    seed: int = 0

    @property
    def total(self) -> int:
        return self.n_train + self.n_test

    @property
    def grid(self) -> GridSpec:
        return GridSpec(self.dim, self.n)

    def train_indices(self) -> np.ndarray:
        return np.arange(self.n_train)

    def test_indices(self) -> np.ndarray:
        return np.arange(self.n_train, self.total)


@dataclass(frozen=True)
class TrainConfig:
    tau: float = 1.0
    eps_interface: float = 0.01
    epochs: int = 500
    lr0: float = 4e-4
    lr_halving_period: int = 50
    weight_decay: float = 1e-7
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.lr0 > 0:
            raise ValueError("lr0 must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


class TrainingError(RuntimeError):
    def __init__(self, msg, history):
        super().__init__(msg)
        self.history = history


def _rng(seed: int, index: int, attempt: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index, attempt)))


def _standard_normal(rng, shape):
    return rng.standard_normal(shape)


@lru_cache(maxsize=8)
def _basis(n: int, modes: int) -> tuple[np.ndarray, np.ndarray]:
    x = GridSpec(1, n).coords()
    i = np.arange(1, modes + 1)[:, None]
    return np.sin(i * x), np.cos(i * x)


def _normalise(u):
    peak = np.max(np.abs(u))
    if peak == 0.0 or not np.isfinite(peak):
        return None
    return u / peak


def generate_initial_data_1d(spec: DatasetSpec, index: int, draw=_standard_normal) -> np.ndarray:
    """Damped random sine/cosine series scaled to unit max-norm.

    ``draw(rng, shape)`` supplies the Gaussian coefficients; a degenerate
    all-zero sample is redrawn from the next RNG substream.
    """
    if spec.dim != 1:
        raise ValueError("generate_initial_data_1d needs dim == 1")
    S, C = _basis(spec.n, spec.modes)
    damp = np.exp(-np.arange(1, spec.modes + 1) / spec.decay_length)
    for attempt in range(MAX_RESAMPLES):
        rng = _rng(spec.seed, index, attempt)
        a = draw(rng, spec.modes)
        b = draw(rng, spec.modes)
        u = _normalise((a * damp) @ S + (b * damp) @ C)
        if u is not None:
            return u
    raise RuntimeError(f"sample {index} stayed degenerate after {MAX_RESAMPLES} draws")


def generate_initial_data_2d(spec: DatasetSpec, index: int, draw=_standard_normal) -> np.ndarray:
    """Four-term random tensor-product Fourier series scaled to unit max-norm."""
    if spec.dim != 2:
        raise ValueError("generate_initial_data_2d needs dim == 2")
    S1, C1 = _basis(spec.n, spec.m1)
    S2, C2 = _basis(spec.n, spec.m2)
    if spec.decay_2d:
        i = np.arange(1, spec.m1 + 1)[:, None]
        j = np.arange(1, spec.m2 + 1)[None, :]
        damp = np.exp(-(i + j) / spec.decay_length)
    else:
        damp = 1.0
    shape = (spec.m1, spec.m2)
    for attempt in range(MAX_RESAMPLES):
        rng = _rng(spec.seed, index, attempt)
        a, b, c, d = (draw(rng, shape) * damp for _ in range(4))
        u = S1.T @ a @ S2 + S1.T @ b @ C2 + C1.T @ c @ S2 + C1.T @ d @ C2
        u = _normalise(u)
        if u is not None:
            return u
    raise RuntimeError(f"sample {index} stayed degenerate after {MAX_RESAMPLES} draws")


def generate_sample(spec: DatasetSpec, index: int) -> np.ndarray:
    if spec.dim == 1:
        return generate_initial_data_1d(spec, index)
    return generate_initial_data_2d(spec, index)


def generate_dataset(spec: DatasetSpec, indices=None) -> np.ndarray:
    if indices is None:
        indices = range(spec.total)
    return np.stack([generate_sample(spec, int(i)) for i in indices])


def split(spec: DatasetSpec, data: np.ndarray):
    return data[: spec.n_train], data[spec.n_train: spec.total]


# --------------------------------------------------------------------------
# containers

def dataset_to_bytes(data: np.ndarray, dim: int) -> bytes:
    data = np.asarray(data, dtype=np.float64)
    n = data.shape[1]
    if data.shape[1:] != (n,) * dim:
        raise ValueError(f"dataset of shape {data.shape} is not {dim}D")
    head = DATA_MAGIC + struct.pack("<III", dim, n, data.shape[0])
    return head + data.astype("<f8").tobytes()


def dataset_from_bytes(blob: bytes) -> np.ndarray:
    if blob[:8] != DATA_MAGIC or len(blob) < 20:
        raise FormatError("not a dataset container (bad magic)")
    dim, n, count = struct.unpack_from("<III", blob, 8)
    need = 8 * count * n**dim
    if len(blob) - 20 != need:
        raise FormatError(f"dataset payload is {len(blob) - 20} bytes, expected {need}")
    arr = np.frombuffer(blob, dtype="<f8", offset=20).astype(np.float64)
    return arr.reshape((count,) + (n,) * dim)


def save_dataset(path, data, dim):
    with open(path, "wb") as fh:
        fh.write(dataset_to_bytes(data, dim))


def load_dataset(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return dataset_from_bytes(fh.read())


# --------------------------------------------------------------------------
# loss

def _sq_l2(r, grid):
    axes = tuple(range(r.ndim - grid.dim, r.ndim))
    return grid.cell_volume * np.sum(r * r, axis=axes)


def loss(params: SchemeParams, net: ConvNet, batch) -> float:
    """Mean squared discrete-L2 residual of the network's one-step prediction."""
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim == params.grid.dim:
        batch = batch[None]
    if batch.shape[0] == 0:
        raise ValueError("empty batch")
    v = forward(net, batch)
    return float(np.mean(_sq_l2(residual(params, batch, v), params.grid)))


def loss_gradient_wrt_output(params: SchemeParams, u_prev, v) -> np.ndarray:
    """L2-gradient ``2 J r`` of ``||R(v)||^2`` with respect to ``v``.

    ``J = tau/2 (eps^2 D_h + diag(1 - 3 m^2)) - I`` is symmetric.  The
    gradient with respect to the raw grid values is this field times
    ``h**dim``.
    """
    g = params.grid
    u_prev, v = g.check(u_prev), g.check(v)
    r = residual(params, u_prev, v)
    m = 0.5 * (u_prev + v)
    Jr = 0.5 * params.tau * (
        params.eps_interface**2 * apply_laplacian(params.laplacian, r)
        + (1.0 - 3.0 * m * m) * r
    ) - r
    return 2.0 * Jr


def loss_and_grad(params: SchemeParams, net: ConvNet, batch):
    """Loss and its exact parameter gradient ``(dWs, dbs)`` for a batch."""
    batch = np.asarray(batch, dtype=np.float64)
    B = batch.shape[0]
    v, cache = forward_cached(net, batch)
    r = residual(params, batch, v)
    value = float(np.mean(_sq_l2(r, params.grid)))
    gout = loss_gradient_wrt_output(params, batch, v) * (params.grid.cell_volume / B)
    return value, backward(net, cache, gout)


def evaluate(params: SchemeParams, net: ConvNet, data, chunk: int = 64) -> float:
    tot = 0.0
    for i in range(0, len(data), chunk):
        part = data[i:i + chunk]
        tot += loss(params, net, part) * len(part)
    return tot / len(data)


# --------------------------------------------------------------------------
# training loop

@dataclass
class History:
    rows: list[dict] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "lr", "train_loss", "test_loss", "wall_time"])
        for r in self.rows:
            w.writerow([r["epoch"], repr(r["lr"]), repr(r["train_loss"]),
                        repr(r["test_loss"]), repr(r["wall_time"])])
        return buf.getvalue()

    def column(self, key):
        return np.array([r[key] for r in self.rows])


def train(net: ConvNet, train_data, test_data, cfg: TrainConfig, grid: GridSpec,
          callback=None):
    """Adam on shuffled mini-batches; returns ``(best_net, history)``.

    ``best_net`` is a copy of the parameters with the lowest test loss (the
    last epoch's when there is no test set).
    """
    params = SchemeParams(cfg.tau, cfg.eps_interface, grid)
    state = AdamState.for_net(net, cfg.lr0, cfg.weight_decay, cfg.lr_halving_period)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(0xA11CE,)))
    hist = History()
    best, best_loss = net.copy(), np.inf
    n = len(train_data)
    t0 = time.perf_counter()
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        batch_losses = []
        for i in range(0, n, cfg.batch_size):
            idx = perm[i:i + cfg.batch_size]
            value, grads = loss_and_grad(params, net, train_data[idx])
            if not np.isfinite(value):
                raise TrainingError(f"non-finite loss at epoch {epoch}", hist)
            batch_losses.append(value * len(idx))
            adam_step(net, grads, state, epoch=epoch)
        train_loss = float(np.sum(batch_losses) / n)
        test_loss = evaluate(params, net, test_data) if len(test_data) else np.nan
        row = dict(epoch=epoch + 1, lr=state.lr, train_loss=train_loss,
                   test_loss=test_loss, wall_time=time.perf_counter() - t0)
        hist.rows.append(row)
        log.info("epoch %d lr %.3g train %.4e test %.4e", epoch + 1, state.lr,
                 train_loss, test_loss)
        score = test_loss if len(test_data) else train_loss
        if score <= best_loss or not len(test_data):
            best, best_loss = net.copy(), score
        if callback is not None:
            callback(row)
    best.meta.update(tau=cfg.tau, eps_interface=cfg.eps_interface, n=grid.n)
    return best, hist
