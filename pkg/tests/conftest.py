import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def rel_inf(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    scale = max(np.abs(b).max(), np.finfo(float).tiny)
    return float(np.abs(a - b).max() / scale)


def dense_in_colt(d, rtol=1e-10):
    """Check membership of a dense matrix in the CoLT class directly.

    Lower triangle (with diagonal): row i+1 is a fixed multiple of row i on
    columns j <= i. Strict upper triangle: row i is a fixed multiple of row
    i+1 on columns j >= i+2. Assumes the relevant entries are nonzero.
    """
    n = d.shape[0]
    for i in range(n - 1):
        ratios = d[i + 1, :i + 1] / d[i, :i + 1]
        if not np.allclose(ratios, ratios[0], rtol=rtol, atol=0):
            return False
    for i in range(n - 2):
        ratios = d[i, i + 2:] / d[i + 1, i + 2:]
        if not np.allclose(ratios, ratios[0], rtol=rtol, atol=0):
            return False
    return True


def dense_in_block_colt(d, n, m, rtol=1e-10):
    """Membership of a dense NM x NM matrix in the block CoLT class."""
    blk = lambda i, j: d[i * n:(i + 1) * n, j * n:(j + 1) * n]
    for k in range(m):
        if not dense_in_colt(blk(k, k), rtol):
            return False
    for i in range(m - 1):
        # lower: A[i+1, j] = diag(rho) A[i, j] for all j <= i, one rho per i
        rho = blk(i + 1, i) / blk(i, i)
        for j in range(i + 1):
            q = blk(i + 1, j) / blk(i, j)
            if not np.allclose(q, rho[:, :1], rtol=rtol, atol=0):
                return False
        # upper: A[i, j] = diag(rho) A[i+1, j] for all j >= i+1
        rho = blk(i, i + 1) / blk(i + 1, i + 1)
        for j in range(i + 1, m):
            q = blk(i, j) / blk(i + 1, j)
            if not np.allclose(q, rho[:, :1], rtol=rtol, atol=0):
                return False
    return True
