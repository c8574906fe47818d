"""Collinear triangular (CoLT) matrices in vector form.

A lower CoLT matrix is stored as its diagonal ``gamma`` (length N) and the
row ratio vector ``ratios`` (length N-1); row ``i+1`` of the lower triangle
is ``ratios[i]`` times row ``i``. An upper CoLT matrix is strictly upper
triangular, stored as its first superdiagonal ``gamma`` (length N-1) and
ratios (length N-2) with row ``i`` equal to ``ratios[i]`` times row ``i+1``
above the superdiagonal. :class:`ColtRepr` is the sum of one of each.

Every operation here is O(N). Dense reconstruction exists for testing only
and refuses large sizes or use inside a timed region.
"""

from __future__ import annotations

import contextlib
import contextvars
from dataclasses import dataclass

import numpy as np

from . import _kernels

__all__ = [
    "LColtRepr",
    "UColtRepr",
    "ColtRepr",
    "FlopCounter",
    "DenseGuardError",
    "timed_region",
    "lcolt_to_dense",
    "ucolt_to_dense",
    "to_dense",
    "lcmv",
    "ucmv",
    "cmv",
    "cmv_transpose",
    "transpose",
    "hadamard",
    "hadamard_inverse",
    "scale_rows",
    "scale_cols",
    "is_cross_compatible",
    "identity",
    "kernel_1d",
    "random_colt",
]

MAX_DENSE_N = 4096

_in_timed_region = contextvars.ContextVar("_in_timed_region", default=False)


class DenseGuardError(RuntimeError):
    """Raised when an O(N^2) oracle path is requested where it must not run."""


@contextlib.contextmanager
def timed_region():
    """Mark a block as timed; dense reconstructions inside it raise."""
    token = _in_timed_region.set(True)
    try:
        yield
    finally:
        _in_timed_region.reset(token)


def check_dense_allowed(n, max_n=MAX_DENSE_N):
    if _in_timed_region.get():
        raise DenseGuardError("dense reconstruction requested inside a timed region")
    if max_n is not None and n > max_n:
        raise DenseGuardError(f"refusing dense reconstruction of size {n} > {max_n}")


def _vec(x, name):
    a = np.array(x, dtype=np.float64, copy=True).reshape(-1)
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} must be finite")
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class LColtRepr:
    gamma: np.ndarray
    ratios: np.ndarray

    def __post_init__(self):
        g = _vec(self.gamma, "gamma")
        r = _vec(self.ratios, "ratios")
        if g.size < 1:
            raise ValueError("lower part needs at least one diagonal entry")
        if r.size != g.size - 1:
            raise ValueError(f"expected {g.size - 1} ratios, got {r.size}")
        if np.any(r == 0):
            raise ValueError("ratios must be nonzero")
        object.__setattr__(self, "gamma", g)
        object.__setattr__(self, "ratios", r)

    @property
    def n(self):
        return self.gamma.size


@dataclass(frozen=True)
class UColtRepr:
    gamma: np.ndarray
    ratios: np.ndarray

    def __post_init__(self):
        g = _vec(self.gamma, "gamma")
        r = _vec(self.ratios, "ratios")
        if r.size != max(g.size - 1, 0):
            raise ValueError(f"expected {max(g.size - 1, 0)} ratios, got {r.size}")
        if np.any(r == 0):
            raise ValueError("ratios must be nonzero")
        object.__setattr__(self, "gamma", g)
        object.__setattr__(self, "ratios", r)

    @property
    def n(self):
        return self.gamma.size + 1


@dataclass(frozen=True)
class ColtRepr:
    lower: LColtRepr
    upper: UColtRepr

    def __post_init__(self):
        if self.lower.n != self.upper.n:
            raise ValueError(f"size mismatch: lower {self.lower.n}, upper {self.upper.n}")

    @classmethod
    def from_vectors(cls, gamma, ratios, gamma_sup, ratios_sup):
        return cls(LColtRepr(gamma, ratios), UColtRepr(gamma_sup, ratios_sup))

    @property
    def n(self):
        return self.lower.n

    @property
    def vectors(self):
        """(gamma, ratios, gamma_sup, ratios_sup) as a tuple of arrays."""
        return (self.lower.gamma, self.lower.ratios, self.upper.gamma, self.upper.ratios)


class FlopCounter:
    """Counts arithmetic done by the instrumented (pure Python) matvec path.

    ``ratio_steps`` counts multiply-adds by a ratio, ``diag_mults`` the
    products with diagonal or superdiagonal entries, ``vector_ops`` any
    other elementwise operation.
    """

    def __init__(self):
        self.ratio_steps = 0
        self.diag_mults = 0
        self.vector_ops = 0

    @property
    def total(self):
        return self.ratio_steps + self.diag_mults + self.vector_ops

    def __repr__(self):
        return (f"FlopCounter(ratio_steps={self.ratio_steps}, "
                f"diag_mults={self.diag_mults}, vector_ops={self.vector_ops})")


# ---------------------------------------------------------------------------
# dense reconstruction (oracle side)


def lcolt_to_dense(m, max_n=MAX_DENSE_N):
    n = m.n
    check_dense_allowed(n, max_n)
    out = np.zeros((n, n))
    for j in range(n):
        col = m.gamma[j]
        out[j, j] = col
        for i in range(j + 1, n):
            col = col * m.ratios[i - 1]
            out[i, j] = col
    return out


def ucolt_to_dense(m, max_n=MAX_DENSE_N):
    n = m.n
    check_dense_allowed(n, max_n)
    out = np.zeros((n, n))
    for j in range(1, n):
        val = m.gamma[j - 1]
        out[j - 1, j] = val
        for i in range(j - 2, -1, -1):
            val = val * m.ratios[i]
            out[i, j] = val
    return out


def to_dense(m, max_n=MAX_DENSE_N):
    return lcolt_to_dense(m.lower, max_n) + ucolt_to_dense(m.upper, max_n)


# ---------------------------------------------------------------------------
# matrix-vector products


def _as_input(y, n):
    y = np.ascontiguousarray(y, dtype=np.float64)
    if y.ndim != 1 or y.size != n:
        raise ValueError(f"vector of length {n} expected, got shape {y.shape}")
    return y


def lcmv(m, y, counter=None):
    """Lower CoLT times ``y`` in N-1 ratio steps and N diagonal products."""
    y = _as_input(y, m.n)
    if counter is not None:
        return _lcmv_counted(m.gamma, m.ratios, y, counter)
    out = np.empty(m.n)
    _kernels.lcmv(m.gamma, m.ratios, y, out)
    return out


def ucmv(m, y, counter=None):
    y = _as_input(y, m.n)
    if counter is not None:
        return _ucmv_counted(m.gamma, m.ratios, y, counter)
    out = np.empty(m.n)
    _kernels.ucmv(m.gamma, m.ratios, y, out)
    return out


def _lcmv_counted(g, r, y, counter):
    n = y.size
    out = np.empty(n)
    acc = g[0] * y[0]
    counter.diag_mults += 1
    out[0] = acc
    for i in range(1, n):
        acc = r[i - 1] * acc + g[i] * y[i]
        counter.ratio_steps += 1
        counter.diag_mults += 1
        out[i] = acc
    return out


def _ucmv_counted(gp, rp, y, counter):
    n = y.size
    out = np.zeros(n)
    if n < 2:
        return out
    acc = gp[n - 2] * y[n - 1]
    counter.diag_mults += 1
    out[n - 2] = acc
    for i in range(n - 3, -1, -1):
        acc = rp[i] * acc + gp[i] * y[i + 1]
        counter.ratio_steps += 1
        counter.diag_mults += 1
        out[i] = acc
    return out


def cmv(m, y, counter=None):
    """``dense(m) @ y`` in O(N)."""
    y = _as_input(y, m.n)
    if counter is not None:
        out = _lcmv_counted(m.lower.gamma, m.lower.ratios, y, counter)
        out += _ucmv_counted(m.upper.gamma, m.upper.ratios, y, counter)
        counter.vector_ops += m.n
        return out
    out = np.empty(m.n)
    _kernels.cmv(*m.vectors, y, out)
    return out


def is_cross_compatible(m, rtol=1e-10):
    """True iff ``dense(m).T`` is again representable as a ColtRepr.

    The transpose's lower part has ratios ``gamma_sup / gamma``, so every
    diagonal and superdiagonal entry must be nonzero; its upper part is
    automatically collinear. The remaining condition is that the lower
    ratios of the transpose are the same in every column, which reduces to
    ``ratios_sup[k] * gamma[k+1] == gamma_sup[k]``.
    """
    g, _, gp, rp = m.vectors
    if np.any(g == 0) or np.any(gp == 0):
        return False
    lhs = rp * g[1:-1]
    rhs = gp[:-1]
    return bool(np.all(np.abs(lhs - rhs) <= rtol * np.maximum(np.abs(lhs), np.abs(rhs))))


def transpose(m, check=True):
    """Representation of ``dense(m).T``; requires cross-compatibility."""
    if check and not is_cross_compatible(m):
        raise ValueError("matrix is not cross-compatible; its transpose leaves the CoLT class")
    g, r, gp, rp = m.vectors
    return ColtRepr.from_vectors(g, gp / g[:-1], g[:-1] * r, g[:-2] * r[:-1] / g[1:-1])


def cmv_transpose(m, y, counter=None):
    """``dense(m).T @ y`` in O(N) via the transposed representation."""
    return cmv(transpose(m), y, counter=counter)


# ---------------------------------------------------------------------------
# closure operations


def _same_n(a, b):
    if a.n != b.n:
        raise ValueError(f"size mismatch: {a.n} vs {b.n}")


def hadamard(a, b):
    _same_n(a, b)
    return ColtRepr.from_vectors(*(x * y for x, y in zip(a.vectors, b.vectors)))


def hadamard_inverse(a):
    g, r, gp, rp = a.vectors
    if np.any(g == 0) or np.any(gp == 0):
        raise ZeroDivisionError("diagonal and superdiagonal entries must be nonzero to invert")
    return ColtRepr.from_vectors(1.0 / g, 1.0 / r, 1.0 / gp, 1.0 / rp)


def _scaling_vector(x, n):
    x = _as_input(x, n)
    if np.any(x == 0):
        raise ValueError("scaling vector must not contain zeros")
    return x


def scale_rows(x, m):
    """Representation of ``diag(x) @ dense(m)``."""
    x = _scaling_vector(x, m.n)
    g, r, gp, rp = m.vectors
    return ColtRepr.from_vectors(
        x * g,
        r * x[1:] / x[:-1],
        x[:-1] * gp,
        rp * x[:-2] / x[1:-1],
    )


def scale_cols(m, x):
    """Representation of ``dense(m) @ diag(x)``; ratios are unchanged."""
    x = _scaling_vector(x, m.n)
    g, r, gp, rp = m.vectors
    return ColtRepr.from_vectors(g * x, r, gp * x[1:], rp)


def identity(n):
    """The Hadamard identity, the all-ones matrix."""
    if n < 2:
        raise ValueError("identity needs n >= 2")
    return ColtRepr.from_vectors(np.ones(n), np.ones(n - 1), np.ones(n - 1), np.ones(n - 2))


def kernel_1d(n, lam):
    """``K[i, j] = lam ** |i - j|``."""
    if n < 2:
        raise ValueError("kernel needs n >= 2")
    if not 0.0 < lam < 1.0:
        raise ValueError(f"lambda must lie in (0, 1), got {lam}")
    return ColtRepr.from_vectors(
        np.ones(n), np.full(n - 1, lam), np.full(n - 1, lam), np.full(n - 2, lam)
    )


def random_colt(n, rng, low=0.5, high=2.0):
    """Random member with all four vectors log-uniform in [low, high]."""
    def draw(k):
        return np.exp(rng.uniform(np.log(low), np.log(high), size=k))
    return ColtRepr.from_vectors(draw(n), draw(n - 1), draw(max(n - 1, 0)), draw(max(n - 2, 0)))
