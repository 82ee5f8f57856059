"""Learnable shrinkage denoiser.

Lifts the raw two-channel signal with a small convolution, estimates a
per-sample, per-channel threshold from the average activation magnitude,
and soft-thresholds the lifted features so low-magnitude (noise-dominated)
content is zeroed while strong content passes through shifted. A residual
projection of the input is added back so the unit can fall back to a plain
linear lift when shrinkage is unhelpful.
"""
from __future__ import annotations

import numpy as np

from .tensor import (
    ShapeError,
    Tensor,
    absolute,
    conv1d,
    matmul,
    record,
    reshape,
    sigmoid,
    unbroadcast,
)


def soft_threshold(x: Tensor, tau: Tensor) -> Tensor:
    """sign(x) * max(|x| - tau, 0), elementwise with broadcasting.

    Gradient w.r.t. x is the 0/1 pass-through mask (zero on the dead zone
    and exactly at the boundary |x| == tau); gradient w.r.t. tau is -sign(x)
    wherever the input survives.
    """
    mag = np.abs(x.data) - tau.data
    keep = mag > 0
    sgn = np.sign(x.data)
    out = Tensor(np.where(keep, sgn * mag, 0.0))

    def bwd(g):
        gx = np.where(keep, g, 0.0)
        gtau = unbroadcast(np.where(keep, -sgn * g, 0.0), tau.shape)
        return gx, gtau

    return record(out, (x, tau), bwd, "soft_threshold")


class ShrinkageDenoiser:
    """Front-end block mapping (B, C_in, L) signals to (B, D, L) features."""

    def __init__(self, c_in: int, d_model: int, kernel: int,
                 rng: np.random.Generator):
        if kernel % 2 == 0:
            raise ShapeError(f"denoiser kernel must be odd, got {kernel}")
        self.c_in = c_in
        self.d_model = d_model

        def w(shape, fan_in):
            bound = 1.0 / np.sqrt(fan_in)
            return Tensor(rng.uniform(-bound, bound, shape).astype(np.float32),
                          requires_grad=True)

        self.w_lift = w((d_model, c_in, kernel), c_in * kernel)
        self.b_lift = Tensor(np.zeros(d_model, np.float32), requires_grad=True)
        self.w_gate = w((d_model, d_model), d_model)
        self.b_gate = Tensor(np.zeros(d_model, np.float32), requires_grad=True)
        # identity residual when widths already agree, else a learned 1x1 mix
        self.w_res = None if c_in == d_model else w((d_model, c_in, 1), c_in)

    def params(self) -> dict[str, Tensor]:
        out = {"w_lift": self.w_lift, "b_lift": self.b_lift,
               "w_gate": self.w_gate, "b_gate": self.b_gate}
        if self.w_res is not None:
            out["w_res"] = self.w_res
        return out

    def forward(self, u: Tensor) -> Tensor:
        if u.ndim != 3 or u.shape[1] != self.c_in:
            raise ShapeError(f"expected (B, {self.c_in}, L) input, got {u.shape}")
        f = conv1d(u, self.w_lift, self.b_lift)            # (B, D, L)
        scale = absolute(f).mean(axis=2)                   # (B, D)
        gate = sigmoid(matmul(scale, self.w_gate) + self.b_gate)
        tau = gate * scale                                 # in [0, scale), per channel
        y = soft_threshold(f, reshape(tau, tau.shape + (1,)))
        res = u if self.w_res is None else conv1d(u, self.w_res)
        return y + res

    __call__ = forward


class PlainLift:
    """Ablation stand-in: the same lift convolution with no shrinkage path."""

    def __init__(self, c_in: int, d_model: int, kernel: int,
                 rng: np.random.Generator):
        if kernel % 2 == 0:
            raise ShapeError(f"lift kernel must be odd, got {kernel}")
        self.c_in = c_in
        self.d_model = d_model
        bound = 1.0 / np.sqrt(c_in * kernel)
        self.w_lift = Tensor(
            rng.uniform(-bound, bound, (d_model, c_in, kernel)).astype(np.float32),
            requires_grad=True)
        self.b_lift = Tensor(np.zeros(d_model, np.float32), requires_grad=True)

    def params(self) -> dict[str, Tensor]:
        return {"w_lift": self.w_lift, "b_lift": self.b_lift}

    def forward(self, u: Tensor) -> Tensor:
        if u.ndim != 3 or u.shape[1] != self.c_in:
            raise ShapeError(f"expected (B, {self.c_in}, L) input, got {u.shape}")
        return conv1d(u, self.w_lift, self.b_lift)

    __call__ = forward
