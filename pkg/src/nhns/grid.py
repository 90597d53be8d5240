"""Uniform cell-centred grids on [-L, L]^d with homogeneous Neumann boundaries.

Fields are plain numpy arrays whose trailing ``dim`` axes are the spatial
axes, so every operator here also works on a leading batch axis.
"""
from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field

import numpy as np

FIELD_MAGIC = b"NHNSFIELD\x00\x00\x00"
FIELD_VERSION = 1
DENSE_CAP = 4096


class GridMismatchError(ValueError):
    """Raised when a field does not live on the expected grid."""


class FormatError(ValueError):
    """Raised when a binary container cannot be decoded."""


@dataclass(frozen=True)
class GridSpec:
    dim: int
    n: int
    domain_half_width: float = np.pi

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        if self.n < 3:
            raise ValueError(f"need at least 3 points per axis, got {self.n}")
        if not self.domain_half_width > 0:
            raise ValueError("domain_half_width must be positive")

    @property
    def h(self) -> float:
        return 2.0 * self.domain_half_width / self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dim

    @property
    def size(self) -> int:
        return self.n**self.dim

    @property
    def cell_volume(self) -> float:
        return self.h**self.dim

    def coords(self) -> np.ndarray:
        """Cell-centre coordinates along one axis."""
        L = self.domain_half_width
        return -L + (np.arange(self.n) + 0.5) * self.h

    def mesh(self) -> tuple[np.ndarray, ...]:
        x = self.coords()
        if self.dim == 1:
            return (x,)
        return tuple(np.meshgrid(x, x, indexing="ij"))

    def check(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=np.float64)
        if u.shape[u.ndim - self.dim:] != self.shape:
            raise GridMismatchError(
                f"field of shape {u.shape} does not match grid {self.shape}"
            )
        return u


@dataclass(frozen=True)
class Field:
    """A grid function with validated, immutable storage."""

    grid: GridSpec
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64).reshape(-1)
        if v.size != self.grid.size:
            raise GridMismatchError(
                f"expected {self.grid.size} values, got {v.size}"
            )
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_array(cls, grid: GridSpec, u: np.ndarray) -> "Field":
        return cls(grid, grid.check(u).reshape(-1))

    def array(self) -> np.ndarray:
        return self.values.reshape(self.grid.shape).copy()


# --------------------------------------------------------------------------
# Laplacian

def _lap_axis(u: np.ndarray, axis: int, inv_h2: float) -> np.ndarray:
    out = np.empty_like(u)
    u = np.moveaxis(u, axis, -1)
    o = np.moveaxis(out, axis, -1)
    o[..., 1:-1] = u[..., :-2] - 2.0 * u[..., 1:-1] + u[..., 2:]
    o[..., 0] = u[..., 1] - u[..., 0]
    o[..., -1] = u[..., -2] - u[..., -1]
    o *= inv_h2
    return out


@dataclass(frozen=True)
class LaplacianOp:
    """Matrix-free Neumann Laplacian ``D_h`` on a :class:`GridSpec`."""

    grid: GridSpec

    def __call__(self, u: np.ndarray) -> np.ndarray:
        return apply_laplacian(self, u)

    def assemble_dense(self) -> np.ndarray:
        return assemble_dense(self)


def apply_laplacian(op: LaplacianOp, u) -> np.ndarray:
    g = op.grid
    if isinstance(u, Field):
        if u.grid != g:
            raise GridMismatchError(f"field grid {u.grid} != operator grid {g}")
        u = u.array()
    u = g.check(u)
    inv_h2 = 1.0 / g.h**2
    out = _lap_axis(u, u.ndim - 1, inv_h2)
    if g.dim == 2:
        out += _lap_axis(u, u.ndim - 2, inv_h2)
    return out


def lambda_h(n: int, h: float) -> np.ndarray:
    """The 1D tridiagonal Neumann matrix."""
    A = np.zeros((n, n))
    i = np.arange(n)
    A[i, i] = -2.0
    A[i[:-1], i[:-1] + 1] = 1.0
    A[i[1:], i[1:] - 1] = 1.0
    A[0, 0] = A[-1, -1] = -1.0
    return A / h**2


def assemble_dense(op: LaplacianOp) -> np.ndarray:
    g = op.grid
    if g.size > DENSE_CAP:
        raise ValueError(
            f"dense assembly refused for {g.size} unknowns (cap {DENSE_CAP})"
        )
    L = lambda_h(g.n, g.h)
    if g.dim == 1:
        return L
    eye = np.eye(g.n)
    return np.kron(eye, L) + np.kron(L, eye)


def laplacian_eigh(grid: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    """Eigenpairs of the dense ``D_h`` (oracle use only)."""
    return np.linalg.eigh(assemble_dense(LaplacianOp(grid)))


# --------------------------------------------------------------------------
# norms

def l2_norm(u: np.ndarray, grid: GridSpec) -> np.ndarray:
    u = grid.check(u)
    axes = tuple(range(u.ndim - grid.dim, u.ndim))
    return np.sqrt(grid.cell_volume * np.sum(u * u, axis=axes))


def linf_norm(u: np.ndarray, grid: GridSpec) -> np.ndarray:
    u = grid.check(u)
    axes = tuple(range(u.ndim - grid.dim, u.ndim))
    return np.max(np.abs(u), axis=axes)


def hs_norm(u: np.ndarray, grid: GridSpec, s: float) -> float:
    """Sobolev norm of the even (cosine) extension of ``u``.

    The field is mirrored across every boundary, giving an exact periodic
    sample of its cosine extension on a domain of twice the width.  The
    coefficient normalisation makes ``hs_norm(u, g, 0) == l2_norm(u, g)``.
    Wavenumbers are physical (period ``2 * width``), with ``<0> = 1``.
    """
    u = grid.check(u)
    if u.ndim != grid.dim:
        raise ValueError("hs_norm takes a single field")
    if grid.n % 2:
        raise NotImplementedError("Hs norm requires an even number of points")
    if s < 0:
        raise ValueError("s must be non-negative")
    ext = u
    for ax in range(grid.dim):
        ext = np.concatenate([ext, np.flip(ext, axis=ax)], axis=ax)
    m = 2 * grid.n
    c = np.fft.fftn(ext) / ext.size
    width = 2.0 * grid.domain_half_width
    k1 = np.fft.fftfreq(m, d=1.0 / m) * (2.0 * np.pi / (2.0 * width))
    kk = np.meshgrid(*([k1] * grid.dim), indexing="ij")
    kabs = np.sqrt(sum(k * k for k in kk))
    bracket = np.where(kabs == 0.0, 1.0, kabs)
    total = np.sum(bracket ** (2 * s) * np.abs(c) ** 2)
    return float(np.sqrt(width**grid.dim * total))


def norm(u, grid: GridSpec, kind: str = "L2", s: float = 0.0) -> float:
    """Discrete norm of a single field; ``kind`` is ``L2``, ``Linf`` or ``Hs``."""
    if isinstance(u, Field):
        grid, u = u.grid, u.array()
    kind = kind.lower()
    if kind in ("l2", "l2_discrete"):
        return float(l2_norm(u, grid))
    if kind == "linf":
        return float(linf_norm(u, grid))
    if kind == "hs":
        return hs_norm(u, grid, s)
    raise ValueError(f"unknown norm kind {kind!r}")


# --------------------------------------------------------------------------
# serialisation

def field_to_bytes(f: Field) -> bytes:
    head = FIELD_MAGIC + struct.pack("<III", FIELD_VERSION, f.grid.dim, f.grid.n)
    return head + f.values.astype("<f8").tobytes()


def field_from_bytes(data: bytes, domain_half_width: float = np.pi) -> Field:
    if len(data) < 24 or data[:12] != FIELD_MAGIC:
        raise FormatError("not a field container (bad magic)")
    version, dim, n = struct.unpack("<III", data[12:24])
    if version != FIELD_VERSION:
        raise FormatError(f"unsupported field container version {version}")
    grid = GridSpec(dim, n, domain_half_width)
    payload = data[24:]
    if len(payload) != 8 * grid.size:
        raise FormatError(
            f"truncated field payload: {len(payload)} bytes, need {8 * grid.size}"
        )
    return Field(grid, np.frombuffer(payload, dtype="<f8").astype(np.float64))


def save_field(path, f: Field) -> None:
    with open(path, "wb") as fh:
        fh.write(field_to_bytes(f))


def load_field(path) -> Field:
    with open(path, "rb") as fh:
        return field_from_bytes(fh.read())


def field_to_csv(f: Field) -> str:
    buf = io.StringIO()
    np.savetxt(buf, f.values, fmt="%.17g")
    return buf.getvalue()
