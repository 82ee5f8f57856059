"""Shared fixtures and finite-difference utilities."""
import numpy as np
import pytest

from ssmamc.tensor import Graph, active_graph, backward, no_grad


@pytest.fixture(autouse=True)
def _clean_default_graph():
    """Keep tape records from leaking between tests."""
    active_graph().clear()
    yield
    active_graph().clear()


def analytic_grads(loss_fn, params):
    """Run one tape-recorded evaluation and collect each param's gradient."""
    for p in params:
        p.grad = None
    with Graph():
        loss = loss_fn()
        backward(loss)
    grads = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data)
             for p in params]
    for p in params:
        p.grad = None
    return grads


def fd_gradcheck(loss_fn, params, eps=1e-6, coords_per_param=None, seed=0):
    """Max relative error between tape gradients and central differences.

    ``loss_fn`` must rebuild the computation from the params' current
    ``.data`` on every call and return a scalar Tensor. With
    ``coords_per_param`` set, only a random subset of coordinates of each
    parameter is probed (the analytic side is always complete).
    """
    grads = analytic_grads(loss_fn, params)
    rng = np.random.default_rng(seed)

    def value():
        with no_grad():
            return float(loss_fn().data)

    worst = 0.0
    for p, g in zip(params, grads):
        flat = p.data.reshape(-1)
        gflat = g.reshape(-1)
        idx = np.arange(flat.size)
        if coords_per_param is not None and flat.size > coords_per_param:
            idx = rng.choice(flat.size, coords_per_param, replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            lp = value()
            flat[i] = orig - eps
            lm = value()
            flat[i] = orig
            num = (lp - lm) / (2.0 * eps)
            err = abs(num - gflat[i]) / max(1.0, abs(num), abs(gflat[i]))
            worst = max(worst, err)
    return worst
