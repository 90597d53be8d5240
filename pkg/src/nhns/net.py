"""Reflect-padded convolutional time-stepper with hand-written gradients.

Activations are kept channels-last, ``(batch, *spatial, channels)``, so each
layer is one im2col matrix product.  Weights use the layout
``[c_in, c_out, k]`` (1D) or ``[c_in, c_out, k, k]`` (2D).
"""
from __future__ import annotations

import itertools
import json
import struct
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

CKPT_MAGIC = b"NHNSNET1"
# im2col matrices larger than this many float64 entries are built per chunk
COL_BUDGET = 1 << 24


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class ConvSpec:
    dim: int
    channels: tuple[int, ...]
    kernel: int
    final_tanh: bool = False

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        ch = self.channels
        if self.dim not in (1, 2):
            raise ValueError("dim must be 1 or 2")
        if len(ch) < 2 or ch[0] != 1 or ch[-1] != 1:
            raise ValueError(f"channels must start and end with 1, got {ch}")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ValueError("kernel size must be a positive odd integer")
        L = len(ch) - 1
        half = L // 2
        rising = all(ch[i] <= ch[i + 1] for i in range(half))
        falling = all(ch[i] >= ch[i + 1] for i in range(L - half, L))
        if not (rising and falling):
            raise ValueError(f"channels {ch} are not wide-in-the-middle")

    @property
    def num_layers(self) -> int:
        return len(self.channels) - 1

    @property
    def padding(self) -> int:
        return (self.kernel - 1) // 2

    def num_params(self) -> int:
        K = self.kernel**self.dim
        ch = self.channels
        return sum(ch[q] * ch[q + 1] * K + ch[q + 1] for q in range(self.num_layers))


FULL_1D = ConvSpec(1, (1, 8, 16, 32, 64, 32, 16, 8, 1), 21)
FULL_2D = ConvSpec(2, (1, 16, 32, 64, 32, 16, 1), 9)


@dataclass
class ConvNet:
    spec: ConvSpec
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    meta: dict = field(default_factory=dict)

    @classmethod
    def init(cls, spec: ConvSpec, rng: np.random.Generator, meta=None) -> "ConvNet":
        K = spec.kernel**spec.dim
        ws, bs = [], []
        for cin, cout in zip(spec.channels[:-1], spec.channels[1:]):
            bound = 1.0 / np.sqrt(cin * K)
            ws.append(rng.uniform(-bound, bound, (cin, cout) + (spec.kernel,) * spec.dim))
            bs.append(rng.uniform(-bound, bound, cout))
        return cls(spec, ws, bs, dict(meta or {}))

    @classmethod
    def zeros(cls, spec: ConvSpec) -> "ConvNet":
        ws = [
            np.zeros((cin, cout) + (spec.kernel,) * spec.dim)
            for cin, cout in zip(spec.channels[:-1], spec.channels[1:])
        ]
        return cls(spec, ws, [np.zeros(c) for c in spec.channels[1:]])

    def params(self) -> list[np.ndarray]:
        """Parameter arrays in checkpoint order (W1, b1, W2, b2, ...)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def num_params(self) -> int:
        return sum(p.size for p in self.params())

    def copy(self) -> "ConvNet":
        return ConvNet(
            self.spec,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            dict(self.meta),
        )

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params()])

    def set_flat(self, theta: np.ndarray) -> None:
        i = 0
        for p in self.params():
            p[...] = theta[i:i + p.size].reshape(p.shape)
            i += p.size

    def __call__(self, u):
        return forward(self, u)


# --------------------------------------------------------------------------
# primitives

def reflect_pad(x: np.ndarray, p: int) -> np.ndarray:
    """Mirror-pad every axis of a plane by ``p`` without repeating the edge."""
    x = np.asarray(x)
    if p == 0:
        return x.copy()
    if any(m <= p for m in x.shape):
        raise ValueError(f"padding {p} needs every extent > {p}, got {x.shape}")
    return np.pad(x, p, mode="reflect")


def reflect_pad_adjoint(g: np.ndarray, p: int, axes) -> np.ndarray:
    """Adjoint of reflect padding: fold the halo back onto its source samples."""
    for ax in axes:
        g = np.moveaxis(g, ax, -1)
        m = g.shape[-1] - 2 * p
        out = g[..., p:p + m].copy()
        if p:
            out[..., 1:p + 1] += g[..., :p][..., ::-1]
            out[..., m - 1 - p:m - 1] += g[..., m + p:][..., ::-1]
        g = np.moveaxis(out, -1, ax)
    return g


def correlate(W: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Valid, stride-1 cross-correlation of a kernel with a (padded) plane."""
    W = np.asarray(W, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    if W.ndim != X.ndim or any(k > m for k, m in zip(W.shape, X.shape)):
        raise ValueError(f"kernel {W.shape} does not fit plane {X.shape}")
    win = sliding_window_view(X, W.shape)
    return np.tensordot(win, W, axes=W.ndim)


def _spatial_axes(dim):
    return tuple(range(1, dim + 1))


def _im2col(xp: np.ndarray, k: int, dim: int) -> np.ndarray:
    # xp: (B, *padded, C) -> (B * N, C * k**dim) ordered (c, r[, s])
    win = sliding_window_view(xp, (k,) * dim, axis=_spatial_axes(dim))
    B = xp.shape[0]
    return win.reshape(B * int(np.prod(win.shape[1:dim + 1])), -1)


def _wmat(w: np.ndarray) -> np.ndarray:
    # [cin, cout, k..] -> (cin * k.., cout)
    return np.moveaxis(w, 1, -1).reshape(-1, w.shape[1])


def _chunks(B, per_sample):
    step = max(1, COL_BUDGET // max(per_sample, 1))
    return [slice(i, min(i + step, B)) for i in range(0, B, step)]


def _layer_forward(xp, w, b, dim):
    k = w.shape[-1]
    cin, cout = w.shape[:2]
    B = xp.shape[0]
    sp = tuple(s - (k - 1) for s in xp.shape[1:-1])
    N = int(np.prod(sp))
    Wm = _wmat(w)
    z = np.empty((B,) + sp + (cout,))
    for sl in _chunks(B, N * cin * k**dim):
        cols = _im2col(xp[sl], k, dim)
        z[sl] = (cols @ Wm).reshape((-1,) + sp + (cout,))
    z += b
    return z


def _layer_backward(xp, w, delta, dim):
    k = w.shape[-1]
    cin, cout = w.shape[:2]
    B = xp.shape[0]
    sp = delta.shape[1:-1]
    N = int(np.prod(sp))
    Wm = _wmat(w)
    dWm = np.zeros_like(Wm)
    dxp = np.zeros_like(xp)
    for sl in _chunks(B, N * cin * k**dim):
        d = delta[sl].reshape(-1, cout)
        cols = _im2col(xp[sl], k, dim)
        dWm += cols.T @ d
        dcols = (d @ Wm.T).reshape(delta[sl].shape[:-1] + (cin,) + (k,) * dim)
        tgt = dxp[sl]
        for off in itertools.product(range(k), repeat=dim):
            idx = (slice(None),) + tuple(slice(o, o + n) for o, n in zip(off, sp))
            tgt[idx] += dcols[(Ellipsis,) + off]
    dW = np.moveaxis(dWm.reshape((cin,) + (k,) * dim + (cout,)), -1, 1)
    db = delta.reshape(-1, cout).sum(axis=0)
    return dW, db, dxp


# --------------------------------------------------------------------------
# network passes

def _as_batch(net: ConvNet, u):
    u = np.asarray(u, dtype=np.float64)
    d = net.spec.dim
    if u.ndim == d:
        return u[None, ..., None], True
    if u.ndim == d + 1:
        return u[..., None], False
    raise ValueError(f"input of shape {u.shape} does not match a {d}D network")


def forward_cached(net: ConvNet, u):
    """Forward pass returning ``(output, cache)`` for :func:`backward`."""
    spec = net.spec
    x, single = _as_batch(net, u)
    p = spec.padding
    pad = [(0, 0)] + [(p, p)] * spec.dim + [(0, 0)]
    L = spec.num_layers
    padded, acts = [], []
    for q, (w, b) in enumerate(zip(net.weights, net.biases)):
        if p and any(s <= p for s in x.shape[1:-1]):
            raise ValueError("spatial extent must exceed the padding")
        xp = np.pad(x, pad, mode="reflect") if p else x
        z = _layer_forward(xp, w, b, spec.dim)
        x = np.tanh(z) if (q < L - 1 or spec.final_tanh) else z
        padded.append(xp)
        acts.append(x)
    out = x[..., 0]
    cache = {"padded": padded, "acts": acts, "single": single}
    return (out[0] if single else out), cache


def forward(net: ConvNet, u) -> np.ndarray:
    return forward_cached(net, u)[0]


def backward(net: ConvNet, cache, grad_out):
    """Gradients of ``<grad_out, forward(u)>`` w.r.t. ``(weights, biases)``."""
    if cache is None:
        raise ValueError("backward needs the cache from forward_cached")
    spec = net.spec
    g = np.asarray(grad_out, dtype=np.float64)
    g = g[None, ..., None] if cache["single"] else g[..., None]
    L = spec.num_layers
    p = spec.padding
    axes = _spatial_axes(spec.dim)
    dWs, dbs = [None] * L, [None] * L
    for q in reversed(range(L)):
        a = cache["acts"][q]
        delta = g * (1.0 - a * a) if (q < L - 1 or spec.final_tanh) else g
        dW, db, dxp = _layer_backward(cache["padded"][q], net.weights[q], delta, spec.dim)
        dWs[q], dbs[q] = dW, db
        if q:
            g = reflect_pad_adjoint(dxp, p, axes) if p else dxp
    return dWs, dbs


# --------------------------------------------------------------------------
# optimiser

@dataclass
class AdamState:
    first_moment: list[np.ndarray]
    second_moment: list[np.ndarray]
    lr0: float = 4e-4
    weight_decay: float = 0.0
    halving_period: int = 50
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    t: int = 0
    lr: float = 4e-4

    @classmethod
    def for_net(cls, net: ConvNet, lr0=4e-4, weight_decay=0.0, halving_period=50):
        ps = net.params()
        return cls(
            [np.zeros_like(p) for p in ps],
            [np.zeros_like(p) for p in ps],
            lr0=lr0,
            weight_decay=weight_decay,
            halving_period=halving_period,
            lr=lr0,
        )


def lr_at(epoch: int, lr0: float, halving_period: int = 50) -> float:
    return lr0 * 0.5 ** (epoch // halving_period)


def adam_step(net: ConvNet, grads, state: AdamState, epoch: int | None = None):
    """One Adam update in place; ``grads`` is ``(dWs, dbs)`` or a flat list.

    Weight decay is added to the gradient as ``weight_decay * theta``.
    """
    if isinstance(grads, tuple) and len(grads) == 2:
        flat = []
        for dw, db in zip(*grads):
            flat += [dw, db]
    else:
        flat = list(grads)
    if epoch is not None:
        state.lr = lr_at(epoch, state.lr0, state.halving_period)
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, g, m, v in zip(net.params(), flat, state.first_moment, state.second_moment):
        if state.weight_decay:
            g = g + state.weight_decay * p
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps_adam)
    return net, state


# --------------------------------------------------------------------------
# checkpoints

def save_checkpoint(net: ConvNet) -> bytes:
    spec = net.spec
    meta = dict(net.meta)
    meta["final_tanh"] = spec.final_tanh
    mb = json.dumps(meta, sort_keys=True).encode()
    head = CKPT_MAGIC + struct.pack(
        "<IIII", spec.dim, spec.num_layers, spec.kernel, len(spec.channels)
    )
    head += struct.pack(f"<{len(spec.channels)}I", *spec.channels)
    head += struct.pack("<I", len(mb)) + mb
    body = b"".join(p.astype("<f8").tobytes() for p in net.params())
    return head + body


def load_checkpoint(data: bytes) -> ConvNet:
    if data[:8] != CKPT_MAGIC:
        raise CheckpointError("bad checkpoint magic")
    try:
        dim, L, k, nch = struct.unpack_from("<IIII", data, 8)
        off = 24
        channels = struct.unpack_from(f"<{nch}I", data, off)
        off += 4 * nch
        (mlen,) = struct.unpack_from("<I", data, off)
        off += 4
        meta = json.loads(data[off:off + mlen].decode())
        off += mlen
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"truncated or corrupt checkpoint header: {e}") from e
    if nch != L + 1:
        raise CheckpointError("channel list length does not match layer count")
    spec = ConvSpec(dim, channels, k, bool(meta.pop("final_tanh", False)))
    net = ConvNet.zeros(spec)
    net.meta = meta
    need = 8 * spec.num_params()
    if len(data) - off != need:
        raise CheckpointError(
            f"checkpoint payload is {len(data) - off} bytes, expected {need}"
        )
    net.set_flat(np.frombuffer(data, dtype="<f8", offset=off).astype(np.float64))
    return net


def write_checkpoint(path, net: ConvNet) -> None:
    with open(path, "wb") as fh:
        fh.write(save_checkpoint(net))


def read_checkpoint(path) -> ConvNet:
    with open(path, "rb") as fh:
        return load_checkpoint(fh.read())
