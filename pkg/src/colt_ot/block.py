"""Block CoLT matrices for problems on an N x M grid.

A :class:`BlockColtRepr` is an (NM x NM) matrix split into M x M blocks of
size N. Only the diagonal blocks (each a :class:`~colt_ot.colt.ColtRepr`)
and two families of block ratio vectors are stored. Off-diagonal blocks are
row scalings of the diagonal block in their column::

    A[i+1, j] = diag(block_ratios_lower[i]) @ A[i, j]      for j <= i
    A[i-1, j] = diag(block_ratios_upper[i-1]) @ A[i, j]    for i <= j

Vectors are blocked column-major over the grid: node ``(i, j)`` (row ``i``
of N, column ``j`` of M) sits at index ``i + j * N``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .colt import (
    MAX_DENSE_N,
    ColtRepr,
    check_dense_allowed,
    is_cross_compatible,
    kernel_1d,
    to_dense,
)

__all__ = [
    "BlockColtRepr",
    "block_cmv",
    "block_cmv_transpose",
    "block_transpose",
    "block_hadamard",
    "block_scale",
    "block_identity",
    "kernel_2d",
    "block_to_dense",
    "block_is_cross_compatible",
    "block_w1",
    "random_block_colt",
]


def _frozen(a, shape, name):
    a = np.array(a, dtype=np.float64, copy=True)
    if a.shape != shape:
        raise ValueError(f"{name}: expected shape {shape}, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} must be finite")
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class BlockColtRepr:
    """Stacked storage: row ``k`` of each 2D array belongs to block ``k``."""

    gamma: np.ndarray
    ratios: np.ndarray
    gamma_sup: np.ndarray
    ratios_sup: np.ndarray
    block_ratios_lower: np.ndarray
    block_ratios_upper: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.gamma, dtype=np.float64)
        if g.ndim != 2 or g.shape[0] < 1 or g.shape[1] < 1:
            raise ValueError("gamma must be a nonempty (m, n) array")
        m, n = g.shape
        shapes = {
            "gamma": (m, n),
            "ratios": (m, n - 1),
            "gamma_sup": (m, n - 1),
            "ratios_sup": (m, max(n - 2, 0)),
            "block_ratios_lower": (m - 1, n),
            "block_ratios_upper": (m - 1, n),
        }
        for name, shape in shapes.items():
            object.__setattr__(self, name, _frozen(getattr(self, name), shape, name))
        for name in ("ratios", "ratios_sup", "block_ratios_lower", "block_ratios_upper"):
            if np.any(getattr(self, name) == 0):
                raise ValueError(f"{name} must be nonzero")

    @classmethod
    def from_blocks(cls, diag_blocks, block_ratios_lower, block_ratios_upper):
        diag_blocks = list(diag_blocks)
        n = diag_blocks[0].n
        if any(b.n != n for b in diag_blocks):
            raise ValueError("diagonal blocks must share one size")
        m = len(diag_blocks)
        stacked = [np.array([b.vectors[k] for b in diag_blocks]).reshape(m, -1) for k in range(4)]
        return cls(*stacked,
                   np.asarray(block_ratios_lower, dtype=np.float64).reshape(m - 1, n),
                   np.asarray(block_ratios_upper, dtype=np.float64).reshape(m - 1, n))

    @property
    def n(self):
        return self.gamma.shape[1]

    @property
    def m(self):
        return self.gamma.shape[0]

    @property
    def size(self):
        return self.n * self.m

    @property
    def diag_blocks(self):
        return tuple(
            ColtRepr.from_vectors(self.gamma[k], self.ratios[k], self.gamma_sup[k], self.ratios_sup[k])
            for k in range(self.m)
        )

    @property
    def arrays(self):
        return (self.gamma, self.ratios, self.gamma_sup, self.ratios_sup,
                self.block_ratios_lower, self.block_ratios_upper)


def _as_block_vector(x, a):
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size != a.size:
        raise ValueError(f"block vector of length {a.size} expected, got shape {x.shape}")
    return x


def block_cmv(a, x, counter=None):
    """``dense(a) @ x`` in O(NM)."""
    x = _as_block_vector(x, a)
    if counter is not None:
        return _block_cmv_counted(a, x, counter)
    out = np.empty(a.size)
    _kernels.block_cmv(*a.arrays, x, out, np.empty((a.m, a.n)))
    return out


def _block_cmv_counted(a, x, counter):
    from .colt import cmv

    n, m = a.n, a.m
    blocks = a.diag_blocks
    ax = [cmv(blocks[k], x[k * n:(k + 1) * n], counter=counter) for k in range(m)]
    out = np.empty(a.size)
    p = ax[0]
    out[:n] = p
    for k in range(1, m):
        p = a.block_ratios_lower[k - 1] * p + ax[k]
        counter.vector_ops += 2 * n
        out[k * n:(k + 1) * n] = p
    q = np.zeros(n)
    for k in range(m - 1, 0, -1):
        q = a.block_ratios_upper[k - 1] * (q + ax[k])
        counter.vector_ops += 2 * n
        out[(k - 1) * n:k * n] += q
        counter.vector_ops += n
    return out


def block_is_cross_compatible(a, rtol=1e-10):
    """True iff ``dense(a).T`` is again a block CoLT matrix.

    Besides every diagonal block being cross-compatible, the block just
    above (below) the diagonal must be a column scaling of the diagonal
    block in its row. Those column factors become the transpose's block
    ratios; see :func:`block_transpose`.
    """
    if not all(is_cross_compatible(b, rtol) for b in a.diag_blocks):
        return False
    try:
        rho_l, rho_u = _transpose_block_ratios(a)
    except ZeroDivisionError:
        return False
    g, r, gp, rp, bl, bu = a.arrays
    for k in range(a.m - 1):
        # A[k, k+1] = diag(bu[k]) A[k+1, k+1] must equal A[k, k] diag(rho_l[k])
        above = _scaled_vectors(bu[k], (g[k + 1], r[k + 1], gp[k + 1], rp[k + 1]), rows=True)
        target = _scaled_vectors(rho_l[k], (g[k], r[k], gp[k], rp[k]), rows=False)
        # A[k+1, k] = diag(bl[k]) A[k, k] must equal A[k+1, k+1] diag(rho_u[k])
        below = _scaled_vectors(bl[k], (g[k], r[k], gp[k], rp[k]), rows=True)
        target_b = _scaled_vectors(rho_u[k], (g[k + 1], r[k + 1], gp[k + 1], rp[k + 1]), rows=False)
        for x, y in zip(above + below, target + target_b):
            if not np.all(np.abs(x - y) <= rtol * np.maximum(np.abs(x), np.abs(y))):
                return False
    return True


def _scaled_vectors(x, vecs, rows):
    g, r, gp, rp = vecs
    if rows:
        return (x * g, r * x[1:] / x[:-1], x[:-1] * gp, rp * x[:-2] / x[1:-1])
    return (g * x, r, gp * x[1:], rp)


def _transpose_block_ratios(a):
    g, _, _, _, bl, bu = a.arrays
    if np.any(g == 0):
        raise ZeroDivisionError("diagonal entries must be nonzero")
    rho_l = bu * g[1:] / g[:-1]
    rho_u = bl * g[:-1] / g[1:]
    return rho_l, rho_u


def block_transpose(a, check=True):
    if check and not block_is_cross_compatible(a):
        raise ValueError("block matrix is not cross-compatible; its transpose leaves the class")
    from .colt import transpose

    blocks = [transpose(b, check=False) for b in a.diag_blocks]
    rho_l, rho_u = _transpose_block_ratios(a)
    return BlockColtRepr.from_blocks(blocks, rho_l, rho_u)


def block_cmv_transpose(a, x, counter=None):
    """``dense(a).T @ x`` in O(NM)."""
    return block_cmv(block_transpose(a), x, counter=counter)


def _same_shape(a, b):
    if (a.n, a.m) != (b.n, b.m):
        raise ValueError(f"shape mismatch: {(a.n, a.m)} vs {(b.n, b.m)}")


def block_hadamard(a, b):
    _same_shape(a, b)
    return BlockColtRepr(*(x * y for x, y in zip(a.arrays, b.arrays)))


def block_scale(x, a, side="row"):
    """``diag(x) @ dense(a)`` (side='row') or ``dense(a) @ diag(x)`` ('col')."""
    x = _as_block_vector(x, a)
    if np.any(x == 0):
        raise ValueError("scaling vector must not contain zeros")
    xb = x.reshape(a.m, a.n)
    g, r, gp, rp, bl, bu = a.arrays
    if side == "row":
        return BlockColtRepr(
            xb * g,
            r * xb[:, 1:] / xb[:, :-1],
            xb[:, :-1] * gp,
            rp * xb[:, :-2] / xb[:, 1:-1],
            bl * xb[1:] / xb[:-1],
            bu * xb[:-1] / xb[1:],
        )
    if side == "col":
        return BlockColtRepr(g * xb, r, gp * xb[:, 1:], rp, bl, bu)
    raise ValueError(f"side must be 'row' or 'col', got {side!r}")


def block_identity(n, m):
    blocks = [ColtRepr.from_vectors(np.ones(n), np.ones(n - 1), np.ones(n - 1), np.ones(max(n - 2, 0)))
              for _ in range(m)]
    return BlockColtRepr.from_blocks(blocks, np.ones((m - 1, n)), np.ones((m - 1, n)))


def kernel_2d(n, m, lam1, lam2):
    """Kernel of the l1 cost on an n x m grid: ``lam1**|di| * lam2**|dj|``."""
    if n < 2 or m < 1:
        raise ValueError("kernel_2d needs n >= 2 and m >= 1")
    if not 0.0 < lam2 < 1.0:
        raise ValueError(f"lambda2 must lie in (0, 1), got {lam2}")
    k0 = kernel_1d(n, lam1)
    return BlockColtRepr.from_blocks([k0] * m, np.full((m - 1, n), lam2), np.full((m - 1, n), lam2))


def block_to_dense(a, max_n=MAX_DENSE_N):
    n, m = a.n, a.m
    check_dense_allowed(n * m, max_n)
    out = np.zeros((n * m, n * m))
    blocks = [to_dense(b) for b in a.diag_blocks]
    for j in range(m):
        out[j * n:(j + 1) * n, j * n:(j + 1) * n] = blocks[j]
        cur = blocks[j]
        for i in range(j + 1, m):
            cur = a.block_ratios_lower[i - 1][:, None] * cur
            out[i * n:(i + 1) * n, j * n:(j + 1) * n] = cur
        cur = blocks[j]
        for i in range(j - 1, -1, -1):
            cur = a.block_ratios_upper[i][:, None] * cur
            out[i * n:(i + 1) * n, j * n:(j + 1) * n] = cur
    return out


def block_w1(a, h1, h2):
    """``<C, dense(a)>`` for the grid l1 cost, in O(NM)."""
    return float(_kernels.block_w1(*a.arrays, float(h1), float(h2)))


def random_block_colt(n, m, rng, low=0.5, high=2.0):
    def draw(*shape):
        return np.exp(rng.uniform(np.log(low), np.log(high), size=shape))
    return BlockColtRepr(draw(m, n), draw(m, n - 1), draw(m, n - 1), draw(m, max(n - 2, 0)),
                         draw(m - 1, n), draw(m - 1, n))
