"""Problem inputs: discretized mixtures, random fields, PGM images.

Marginals handed to the scaling solvers must be strictly positive; use
:func:`rescale` on anything that can contain zeros.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "GridSpec1D",
    "Image2D",
    "PgmError",
    "gaussian_mixture",
    "uniform_random_2d",
    "rescale",
    "load_pgm",
    "write_pgm",
    "read_csv_vector",
    "image_marginal",
    "MIXTURE_A",
    "MIXTURE_B",
]

# (weights, means, variances) of the two 1D test mixtures
MIXTURE_A = ((0.4, 0.6), (60.0, 40.0), (64.0, 36.0))
MIXTURE_B = ((0.5, 0.5), (35.0, 70.0), (81.0, 81.0))


@dataclass(frozen=True)
class GridSpec1D:
    a: float
    b: float
    n: int

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("grid needs at least two nodes")
        if not self.b > self.a:
            raise ValueError("grid interval must have b > a")

    @property
    def h(self):
        return (self.b - self.a) / (self.n - 1)

    @property
    def nodes(self):
        return np.linspace(self.a, self.b, self.n)


def gaussian_mixture(weights, means, variances, grid):
    """Mixture density evaluated at the grid nodes, normalized to sum 1."""
    w = np.asarray(weights, dtype=np.float64)
    mu = np.asarray(means, dtype=np.float64)
    var = np.asarray(variances, dtype=np.float64)
    if not (w.shape == mu.shape == var.shape) or w.ndim != 1 or w.size == 0:
        raise ValueError("weights, means and variances must be equal-length vectors")
    if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
        raise ValueError("weights must be nonnegative and sum to 1")
    if np.any(var <= 0):
        raise ValueError("variances must be positive")
    x = grid.nodes[:, None]
    dens = w / np.sqrt(2 * math.pi * var) * np.exp(-((x - mu) ** 2) / (2 * var))
    p = dens.sum(axis=1)
    return p / p.sum()


def uniform_random_2d(n, m, seed):
    """n*m iid U(0,1) draws normalized to a probability vector."""
    if n < 1 or m < 1:
        raise ValueError("grid must be at least 1 x 1")
    rng = np.random.default_rng(seed)
    p = rng.uniform(0.0, 1.0, size=n * m)
    return p / p.sum()


def rescale(f, eta=1e-5):
    """``(f / |f|_1 + eta) / (1 + N * eta)``: strictly positive, sums to 1."""
    f = np.asarray(f, dtype=np.float64).reshape(-1)
    if np.any(f < 0) or not np.all(np.isfinite(f)):
        raise ValueError("input must be finite and nonnegative")
    total = f.sum()
    if total <= 0:
        raise ValueError("input has no mass")
    if eta <= 0:
        raise ValueError("eta must be positive")
    return (f / total + eta) / (1.0 + f.size * eta)


# ---------------------------------------------------------------------------
# images


class PgmError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Image2D:
    pixels: np.ndarray  # (height, width)

    def __post_init__(self):
        p = np.asarray(self.pixels, dtype=np.float64)
        if p.ndim != 2 or p.size == 0:
            raise ValueError("image must be a nonempty 2D array")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise ValueError("pixel intensities must be finite and nonnegative")
        object.__setattr__(self, "pixels", p)

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]

    def downsample(self, height, width):
        """Block-average to (height, width); sizes must divide evenly."""
        if self.height % height or self.width % width:
            raise ValueError(f"cannot block-average {self.height}x{self.width} to {height}x{width}")
        fy, fx = self.height // height, self.width // width
        p = self.pixels.reshape(height, fy, width, fx).mean(axis=(1, 3))
        return Image2D(p)


def _tokens(data):
    """Header tokens of a PGM file plus the offset just past the last one."""
    out = []
    pos = 0
    while len(out) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos >= len(data):
            raise PgmError("truncated header")
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        out.append(data[start:pos])
    return out, pos


def load_pgm(path, size=None):
    """Read a P2 or P5 PGM file.

    ``size`` optionally gives a (height, width) to block-average down to.
    """
    data = Path(path).read_bytes()
    (magic, w, h, maxval), pos = _tokens(data)
    if magic not in (b"P2", b"P5"):
        raise PgmError(f"unsupported magic {magic!r}")
    try:
        width, height, maxval = int(w), int(h), int(maxval)
    except ValueError as e:
        raise PgmError("malformed header") from e
    if width < 1 or height < 1:
        raise PgmError("image dimensions must be positive")
    if not 0 < maxval <= 65535:
        raise PgmError(f"unsupported maxval {maxval}")
    count = width * height
    if magic == b"P5":
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        body = data[pos + 1:]
        if len(body) < count * dtype.itemsize:
            raise PgmError("truncated pixel data")
        values = np.frombuffer(body, dtype=dtype, count=count).astype(np.float64)
    else:
        try:
            values = np.array([int(t) for t in data[pos:].split()], dtype=np.float64)
        except ValueError as e:
            raise PgmError("non-integer pixel value") from e
        if values.size < count:
            raise PgmError("truncated pixel data")
        values = values[:count]
    if np.any(values > maxval):
        raise PgmError("pixel value exceeds maxval")
    img = Image2D(values.reshape(height, width))
    if size is not None:
        img = img.downsample(*size)
    return img


def write_pgm(path, pixels, maxval=255, binary=True):
    p = np.asarray(pixels)
    if p.ndim != 2:
        raise ValueError("pixels must be 2D")
    if np.any(p < 0) or np.any(p > maxval) or np.any(p != np.round(p)):
        raise ValueError("pixels must be integers in [0, maxval]")
    height, width = p.shape
    magic = "P5" if binary else "P2"
    header = f"{magic}\n{width} {height}\n{maxval}\n".encode()
    if binary:
        dtype = ">u2" if maxval > 255 else "u1"
        body = p.astype(dtype).tobytes()
    else:
        body = "\n".join(" ".join(str(int(x)) for x in row) for row in p).encode() + b"\n"
    Path(path).write_bytes(header + body)


def image_marginal(img, eta=1e-5):
    """Column-major flattened, normalized and rescaled intensities."""
    return rescale(img.pixels.flatten(order="F"), eta)


def read_csv_vector(path):
    """One value per line; blank lines and '#' comments are skipped."""
    values = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            values.append(float(line))
    if not values:
        raise ValueError(f"{path}: no values")
    return np.array(values)
