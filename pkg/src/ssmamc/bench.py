"""Runtime and memory accounting versus sequence length and batch size.

Protocol: 3 warmup iterations discarded, 5 timed repetitions, median plus
10th/90th percentiles reported. Memory exhaustion is recorded as a failure
row rather than crashing the sweep; a coarse pre-check against available
system memory catches hopeless configurations before the allocator does.
Peak allocation is taken from tracemalloc (numpy registers its buffers
there), measured on a separate untimed iteration so tracing overhead never
contaminates the timings.
"""
from __future__ import annotations

import csv
import time
import tracemalloc
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
import psutil

from .model import IN_CHANNELS, ModelConfig, ModulationClassifier
from .optim import Adam
from .tensor import Graph, Tensor, backward, no_grad, softmax_cross_entropy

DEFAULT_LENGTHS = (128, 256, 512, 1024, 2048, 4096)
WARMUP = 3
REPS = 5


@dataclass
class BenchResult:
    length: int
    batch: int
    phase: str                    # "inference" or "train"
    status: str                   # "ok" or "fail:<reason>"
    median_s: float = float("nan")
    p10_s: float = float("nan")
    p90_s: float = float("nan")
    throughput: float = float("nan")   # samples per second
    peak_bytes: int | None = None
    param_count: int = 0
    flop_estimate: int = 0


def flop_estimate(config: ModelConfig, length: int) -> int:
    """Analytic multiply-accumulate count for one forward pass of one sample.

    Counts the length-proportional work: front convolutions, unit
    projections, the per-position recurrence, and state readout. The
    classifier tail costs a constant independent of length and is excluded,
    which keeps the estimate exactly linear in the signal length.
    """
    d, n, e, k = config.d_model, config.n_state, config.expand, config.conv_kernel
    inner = e * d if config.use_gate else d
    per_pos = 0
    c_in = IN_CHANNELS
    for _ in range(config.num_blocks):
        per_pos += d * c_in * k                      # lift convolution
        if config.use_denoise:
            per_pos += 2 * d                         # magnitude + threshold pass
            if c_in != d:
                per_pos += d * c_in                  # residual 1x1 projection
        if config.use_ssm:
            if config.use_norm:
                per_pos += d
            if config.use_gate:
                per_pos += 2 * d * inner             # stream and gate projections
                per_pos += inner * 4                 # causal channel mixer
                per_pos += inner * d                 # output projection
            per_pos += 2 * inner * n                 # write/read projections
            per_pos += inner                         # step-size projection
            per_pos += 4 * inner * n                 # discretize + recurrence
            per_pos += inner * n                     # state readout
        c_in = d
    per_pos += d                                     # mean-pool accumulation
    return length * per_pos


def param_count(model: ModulationClassifier) -> int:
    return model.param_count()


def estimate_forward_bytes(config: ModelConfig, batch: int, length: int,
                           training: bool) -> int:
    """Coarse upper-bound estimate of working-set bytes for one pass."""
    inner = config.expand * config.d_model if config.use_gate else config.d_model
    state = 4 * batch * length * inner * config.n_state
    act = 4 * batch * length * inner
    buffers = 16 if training else 8
    return config.num_blocks * (state * buffers + act * 40)


def _check_memory(config: ModelConfig, batch: int, length: int,
                  training: bool) -> None:
    need = estimate_forward_bytes(config, batch, length, training)
    avail = psutil.virtual_memory().available
    if need > 0.85 * avail:
        raise MemoryError(f"estimated {need} bytes, only {avail} available")


def _timed(fn: Callable[[], None], warmup: int = WARMUP,
           reps: int = REPS) -> tuple[float, float, float]:
    for _ in range(warmup):
        fn()
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    arr = np.asarray(times)
    return (float(np.median(arr)), float(np.percentile(arr, 10)),
            float(np.percentile(arr, 90)))


def _traced_peak(fn: Callable[[], None]) -> int | None:
    tracemalloc.start()
    try:
        fn()
        _, peak = tracemalloc.get_traced_memory()
        return int(peak)
    finally:
        tracemalloc.stop()


def sweep_length(model_builder: Callable[[], ModulationClassifier],
                 lengths: Sequence[int] = DEFAULT_LENGTHS, batch: int = 4,
                 seed: int = 0, warmup: int = WARMUP, reps: int = REPS,
                 phases: Sequence[str] = ("inference", "train")
                 ) -> list[BenchResult]:
    """Inference and one-step training cost per length at a fixed batch size.

    The train phase times one forward/backward/optimizer-step over the
    fixed batch (a miniature epoch); inference is a gradient-free forward.
    """
    for phase in phases:
        if phase not in ("inference", "train"):
            raise ValueError(f"unknown phase {phase!r}")
    rng = np.random.default_rng(seed)
    results: list[BenchResult] = []
    for length in lengths:
        model = model_builder()
        cfg = model.config
        pc = model.param_count()
        fe = flop_estimate(cfg, length)
        x = rng.standard_normal((batch, IN_CHANNELS, length)).astype(np.float32)
        labels = rng.integers(0, cfg.num_classes, batch)
        for phase in phases:
            try:
                _check_memory(cfg, batch, length, training=phase == "train")
                if phase == "inference":
                    def step():
                        with no_grad():
                            model.forward(x)
                else:
                    opt = Adam(model.params().values(), lr=1e-3)

                    def step():
                        with Graph():
                            loss = softmax_cross_entropy(
                                model.forward(Tensor(x)), labels)
                            opt.zero_grad()
                            backward(loss)
                        opt.step()
                peak = _traced_peak(step)
                med, p10, p90 = _timed(step, warmup, reps)
                results.append(BenchResult(
                    length, batch, phase, "ok", med, p10, p90,
                    throughput=batch / med, peak_bytes=peak,
                    param_count=pc, flop_estimate=fe))
            except MemoryError as e:
                results.append(BenchResult(
                    length, batch, phase, f"fail:oom:{e}",
                    param_count=pc, flop_estimate=fe))
    return results


def sweep_batch(model: ModulationClassifier, length: int = 4096,
                batches: Iterable[int] = (1, 2, 4, 8, 16, 32),
                seed: int = 0, warmup: int = WARMUP,
                reps: int = REPS) -> list[BenchResult]:
    """Inference throughput as batch size doubles, until failure or cap."""
    rng = np.random.default_rng(seed)
    cfg = model.config
    results: list[BenchResult] = []
    for batch in batches:
        fe = flop_estimate(cfg, length)
        try:
            _check_memory(cfg, batch, length, training=False)
            x = rng.standard_normal((batch, IN_CHANNELS, length)).astype(np.float32)

            def step():
                with no_grad():
                    model.forward(x)

            peak = _traced_peak(step)
            med, p10, p90 = _timed(step, warmup, reps)
            results.append(BenchResult(
                length, batch, "inference", "ok", med, p10, p90,
                throughput=batch / med, peak_bytes=peak,
                param_count=model.param_count(), flop_estimate=fe))
        except MemoryError as e:
            results.append(BenchResult(
                length, batch, "inference", f"fail:oom:{e}",
                param_count=model.param_count(), flop_estimate=fe))
            break
    return results


def loglog_slope(lengths: Sequence[float], times: Sequence[float]) -> float:
    """Least-squares slope of log(time) against log(length)."""
    lx = np.log(np.asarray(lengths, dtype=np.float64))
    ly = np.log(np.asarray(times, dtype=np.float64))
    return float(np.polyfit(lx, ly, 1)[0])


def write_length_csv(results: Iterable[BenchResult], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["L", "phase", "median_s", "p10_s", "p90_s", "throughput"])
        for r in results:
            w.writerow([r.length, r.phase, f"{r.median_s:.6g}", f"{r.p10_s:.6g}",
                        f"{r.p90_s:.6g}", f"{r.throughput:.6g}"])


def write_batch_csv(results: Iterable[BenchResult], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["B", "throughput", "status"])
        for r in results:
            w.writerow([r.batch, f"{r.throughput:.6g}", r.status])
