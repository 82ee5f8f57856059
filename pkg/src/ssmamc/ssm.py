"""Selective state-space sequence transform.

A diagonal linear recurrence whose input matrix, output matrix, and step
size are all functions of the current input, so the layer can gate what it
writes into and reads out of its state. The recurrence itself is exposed in
two interchangeable forms: a plain sequential loop and a work-efficient
(Blelloch) parallel scan over the associative transform-composition
operator, selected by ``mode``.
"""
from __future__ import annotations

import numpy as np

from .hippo import diag_log_init
from .tensor import (
    NumericalError,
    ShapeError,
    Tensor,
    exp,
    expm1_ratio,
    matmul,
    neg,
    record,
    reduce_sum,
    reshape,
    softplus,
)

# -- raw scans (dtype-preserving, oracle-facing) -----------------------------


def recurrence_sequential(coeff: np.ndarray, update: np.ndarray, axis: int = 1) -> np.ndarray:
    """h_l = coeff_l * h_{l-1} + update_l with h_{-1} = 0, stepped in order."""
    if coeff.shape != update.shape:
        raise ShapeError(f"scan operands disagree: {coeff.shape} vs {update.shape}")
    out = np.empty_like(update)
    c = np.moveaxis(coeff, axis, 0)
    u = np.moveaxis(update, axis, 0)
    o = np.moveaxis(out, axis, 0)
    h = np.zeros_like(u[0])
    for l in range(c.shape[0]):
        h = c[l] * h + u[l]
        o[l] = h
    return out


def recurrence_parallel(coeff: np.ndarray, update: np.ndarray, axis: int = 1) -> np.ndarray:
    """Same recurrence via an up-sweep/down-sweep scan on (a, b) pairs.

    Pairs compose as (a1, b1) then (a2, b2) -> (a1*a2, a2*b1 + b2); the pad
    to a power of two uses the identity pair (1, 0). Work is O(L) combines
    arranged in 2*log2(L) vectorized levels.
    """
    if coeff.shape != update.shape:
        raise ShapeError(f"scan operands disagree: {coeff.shape} vs {update.shape}")
    c = np.moveaxis(coeff, axis, 0)
    u = np.moveaxis(update, axis, 0)
    L = c.shape[0]
    m = 1 << max(L - 1, 0).bit_length()
    a = np.ones((m,) + c.shape[1:], dtype=c.dtype)
    b = np.zeros((m,) + u.shape[1:], dtype=u.dtype)
    a[:L] = c
    b[:L] = u
    a0 = a.copy()
    b0 = b.copy()

    d = 1
    while d < m:  # up-sweep: right node absorbs its left sibling's segment
        left = np.arange(d - 1, m, 2 * d)
        right = left + d
        b[right] = a[right] * b[left] + b[right]
        a[right] = a[left] * a[right]
        d *= 2

    a[m - 1] = 1.0
    b[m - 1] = 0.0
    d = m // 2
    while d >= 1:  # down-sweep: push exclusive prefixes toward the leaves
        left = np.arange(d - 1, m, 2 * d)
        right = left + d
        ta = a[left].copy()
        tb = b[left].copy()
        a[left] = a[right]
        b[left] = b[right]
        b[right] = ta * b[right] + tb
        a[right] = a[right] * ta
        d //= 2

    h = a0 * b + b0  # exclusive prefix composed with each original element
    return np.moveaxis(h[:L], 0, axis).copy()


_SCANS = {"sequential": recurrence_sequential, "parallel": recurrence_parallel}


# -- differentiable recurrence -------------------------------------------------


def linear_recurrence(coeff: Tensor, update: Tensor, mode: str = "parallel") -> Tensor:
    """Differentiable first-order recurrence along axis 1 of (B, L, ...) inputs.

    The backward pass solves the adjoint recurrence lam_l = g_l +
    coeff_{l+1} * lam_{l+1} by running the same scan on reversed, shifted
    arrays, so both directions share one code path per mode.
    """
    if mode not in _SCANS:
        raise ValueError(f"unknown scan mode {mode!r}")
    if coeff.shape != update.shape:
        raise ShapeError(f"scan operands disagree: {coeff.shape} vs {update.shape}")
    if coeff.ndim < 2:
        raise ShapeError(f"recurrence expects (batch, length, ...) inputs, got {coeff.shape}")
    scan = _SCANS[mode]
    h = scan(coeff.data, update.data, axis=1)
    if not np.isfinite(h).all():
        raise NumericalError("linear_recurrence produced non-finite state")
    out = Tensor(h)

    def bwd(g):
        c_rev = np.flip(coeff.data, 1)
        c_shift = np.concatenate([np.zeros_like(c_rev[:, :1]), c_rev[:, :-1]], axis=1)
        lam = np.flip(scan(c_shift, np.flip(g, 1), axis=1), 1)
        h_prev = np.concatenate([np.zeros_like(h[:, :1]), h[:, :-1]], axis=1)
        return lam * h_prev, lam

    return record(out, (coeff, update), bwd, "linear_recurrence")


# -- zero-order-hold discretization --------------------------------------------


def discretize(delta: Tensor, a: Tensor, b: Tensor) -> tuple[Tensor, Tensor]:
    """Exact step-response discretization of a diagonal continuous system.

    delta: (B, L, D) positive step sizes; a: (D, N) diagonal state rates;
    b: (B, L, N) input weights. Returns per-step (coeff, drive) of shape
    (B, L, D, N):

        coeff = exp(delta * a)
        drive = delta * (expm1(delta * a) / (delta * a)) * b

    so the recurrence ``h_l = coeff_l * h_{l-1} + drive_l * x_l`` reproduces
    the continuous solution for an input held constant over each step. The
    ratio form avoids dividing by ``a``, which keeps a == 0 well-defined.
    """
    if delta.ndim != 3:
        raise ShapeError(f"delta must be (B, L, D), got {delta.shape}")
    if a.ndim != 2:
        raise ShapeError(f"a must be (D, N), got {a.shape}")
    if b.ndim != 3 or b.shape[2] != a.shape[1]:
        raise ShapeError(f"b must be (B, L, {a.shape[1]}), got {b.shape}")
    if delta.shape[2] != a.shape[0]:
        raise ShapeError(f"delta channels {delta.shape[2]} != a rows {a.shape[0]}")
    d4 = reshape(delta, delta.shape + (1,))
    da = d4 * a
    coeff = exp(da)
    drive = d4 * expm1_ratio(da) * reshape(b, (b.shape[0], b.shape[1], 1, b.shape[2]))
    return coeff, drive


# -- the layer ------------------------------------------------------------------


class SelectiveLayer:
    """Input-conditioned diagonal state-space layer on (B, L, D) activations.

    Per position, linear maps of the input produce the write weights, read
    weights, and (after a softplus) the positive step size; the state matrix
    is a learned negative diagonal stored in log space. Output adds a
    per-channel feedthrough of the raw input.
    """

    def __init__(self, d_model: int, n_state: int, rng: np.random.Generator,
                 dt_range: tuple[float, float] = (1e-3, 1e-1)):
        if d_model < 1 or n_state < 1:
            raise ShapeError(f"bad layer dims d_model={d_model}, n_state={n_state}")
        self.d_model = d_model
        self.n_state = n_state
        bound = 1.0 / np.sqrt(d_model)

        def w(shape):
            return Tensor(rng.uniform(-bound, bound, shape).astype(np.float32),
                          requires_grad=True)

        self.a_log = Tensor(diag_log_init(d_model, n_state), requires_grad=True)
        self.w_b = w((d_model, n_state))
        self.b_b = Tensor(np.zeros(n_state, np.float32), requires_grad=True)
        self.w_c = w((d_model, n_state))
        self.b_c = Tensor(np.zeros(n_state, np.float32), requires_grad=True)
        self.w_dt = w((d_model, 1))
        lo, hi = dt_range
        dt = np.exp(rng.uniform(np.log(lo), np.log(hi), d_model))
        self.dt_bias = Tensor(np.log(np.expm1(dt)).astype(np.float32),
                              requires_grad=True)
        self.skip = Tensor(np.ones(d_model, np.float32), requires_grad=True)

    def params(self) -> dict[str, Tensor]:
        return {
            "a_log": self.a_log,
            "w_b": self.w_b, "b_b": self.b_b,
            "w_c": self.w_c, "b_c": self.b_c,
            "w_dt": self.w_dt, "dt_bias": self.dt_bias,
            "skip": self.skip,
        }

    def forward(self, x: Tensor, mode: str = "parallel") -> Tensor:
        if x.ndim != 3 or x.shape[2] != self.d_model:
            raise ShapeError(
                f"expected (B, L, {self.d_model}) input, got {x.shape}")
        bsz, length, _ = x.shape
        b_seq = matmul(x, self.w_b) + self.b_b               # (B, L, N)
        c_seq = matmul(x, self.w_c) + self.b_c               # (B, L, N)
        delta = softplus(matmul(x, self.w_dt) + self.dt_bias)  # (B, L, D)
        a = neg(exp(self.a_log))                             # (D, N), strictly negative
        coeff, drive = discretize(delta, a, b_seq)
        update = drive * reshape(x, x.shape + (1,))
        h = linear_recurrence(coeff, update, mode)           # (B, L, D, N)
        read = reshape(c_seq, (bsz, length, 1, self.n_state))
        return reduce_sum(h * read, axis=3) + x * self.skip

    __call__ = forward
