"""State-matrix initializations for long-range memory.

Builds the HiPPO-LegS operator (the continuous-time map whose state tracks
Legendre coefficients of the input history under a uniform measure), its
normal-plus-low-rank split, and the diagonal log-parameterized variant used
by the selective layer.
"""
from __future__ import annotations

import numpy as np


def legs_matrix(n: int) -> np.ndarray:
    """Dense (n, n) LegS transition matrix, float64.

    Entry (row i, col k):
        -sqrt((2i+1)(2k+1))  below the diagonal,
        -(i+1)               on the diagonal,
        0                    above.
    """
    if n < 1:
        raise ValueError(f"state size must be positive, got {n}")
    i = np.arange(n, dtype=np.float64)
    root = np.sqrt(2.0 * i + 1.0)
    a = -np.tril(np.outer(root, root), -1)
    a[np.diag_indices(n)] = -(i + 1.0)
    return a


def low_rank_vector(n: int) -> np.ndarray:
    """Rank-1 correction p with p_k = sqrt(k + 1/2); same for both factors."""
    return np.sqrt(np.arange(n, dtype=np.float64) + 0.5)


def normal_plus_low_rank(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Split the LegS matrix as (skew-symmetric - I/2) minus a rank-1 term.

    Returns (s, p) with legs_matrix(n) == s - outer(p, p); s + s.T == -I
    holds exactly in exact arithmetic, so s is normal.
    """
    p = low_rank_vector(n)
    s = legs_matrix(n) + np.outer(p, p)
    return s, p


def normal_residual(n: int) -> float:
    """Max-abs entry of s + s.T + I for the normal part; zero up to rounding."""
    s, _ = normal_plus_low_rank(n)
    return float(np.abs(s + s.T + np.eye(n)).max())


def diag_log_init(d: int, n: int) -> np.ndarray:
    """Per-channel log of the negated diagonal spectrum, shape (d, n) float32.

    The selective layer keeps A diagonal and negative; storing log(-A) with
    A_dn = -(n+1) guarantees negativity under any gradient update, since the
    layer materializes A = -exp(stored).
    """
    if d < 1 or n < 1:
        raise ValueError(f"dims must be positive, got d={d}, n={n}")
    row = np.log(np.arange(1, n + 1, dtype=np.float64))
    return np.tile(row, (d, 1)).astype(np.float32)
