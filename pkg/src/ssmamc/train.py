"""Training loop, evaluation metrics, and the ablation runner."""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .dataio import Dataset
from .model import ModelConfig, ModulationClassifier
from .optim import Adam
from .tensor import Graph, NumericalError, Tensor, backward, no_grad, softmax_cross_entropy


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 32
    lr: float = 3e-3
    seed: int = 0
    precision: str = "float32"
    mode: str = "parallel"          # scan evaluation strategy
    ckpt_path: str | None = None    # written after the final epoch if set

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")
        if self.precision not in ("float32", "float64"):
            raise ValueError(f"precision must be float32/float64, got {self.precision}")


@dataclass
class EpochStats:
    epoch: int
    mean_loss: float
    wall_time_s: float


def train(model: ModulationClassifier, train_set: Dataset,
          config: TrainConfig) -> list[EpochStats]:
    """Shuffled mini-batch cross-entropy training with Adam, in place.

    Deterministic for a fixed seed (single worker, fixed batch order).
    Raises NumericalError with a location diagnostic if the loss goes
    non-finite.
    """
    if len(train_set) == 0:
        raise ValueError("cannot train on an empty dataset")
    if train_set.num_classes != model.config.num_classes:
        raise ValueError(
            f"dataset has {train_set.num_classes} classes, "
            f"model expects {model.config.num_classes}")
    dtype = np.float32 if config.precision == "float32" else np.float64
    opt = Adam(model.params().values(), lr=config.lr)
    rng = np.random.default_rng(config.seed)
    n = len(train_set)
    history: list[EpochStats] = []
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        perm = rng.permutation(n)
        loss_sum = 0.0
        for b, start in enumerate(range(0, n, config.batch_size)):
            idx = perm[start:start + config.batch_size]
            x = Tensor(train_set.iq[idx].astype(dtype))
            labels = train_set.labels[idx].astype(np.int64)
            with Graph():
                logits = model.forward(x, config.mode)
                loss = softmax_cross_entropy(logits, labels)
                value = float(loss.data)
                if not np.isfinite(value):
                    raise NumericalError(
                        f"non-finite loss {value} at epoch {epoch}, batch {b}")
                opt.zero_grad()
                backward(loss)
            opt.step()
            loss_sum += value * idx.size
        history.append(EpochStats(epoch, loss_sum / n, time.perf_counter() - t0))
    if config.ckpt_path is not None:
        model.save(config.ckpt_path)
    return history


@dataclass
class EvalReport:
    """Per-SNR accuracy, their unweighted mean, and a confusion matrix."""

    per_snr_accuracy: dict[float, float]
    overall_accuracy: float
    confusion: np.ndarray           # (K, K) counts, rows = true class
    wall_time_s: float
    class_names: list[str] = field(default_factory=list)

    def to_csv(self) -> str:
        lines = ["snr_db,accuracy"]
        for snr in sorted(self.per_snr_accuracy):
            lines.append(f"{snr:g},{self.per_snr_accuracy[snr]:.6f}")
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        payload = {
            "overall_accuracy": round(self.overall_accuracy, 6),
            "per_snr_accuracy": {f"{snr:g}": round(self.per_snr_accuracy[snr], 6)
                                 for snr in sorted(self.per_snr_accuracy)},
            "confusion": self.confusion.tolist(),
            "class_names": self.class_names,
            "wall_time_s": round(self.wall_time_s, 3),
        }
        return json.dumps(payload, indent=2)


def evaluate(model: ModulationClassifier, test_set: Dataset,
             batch_size: int = 64, mode: str = "parallel") -> EvalReport:
    """Accuracy per SNR bin plus confusion counts; never mutates the model."""
    k = model.config.num_classes
    if test_set.num_classes != k:
        raise ValueError(
            f"dataset has {test_set.num_classes} classes, model expects {k}")
    if len(test_set) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    t0 = time.perf_counter()
    confusion = np.zeros((k, k), dtype=np.int64)
    preds = np.empty(len(test_set), dtype=np.int64)
    with no_grad():
        for start in range(0, len(test_set), batch_size):
            stop = min(start + batch_size, len(test_set))
            x = Tensor(test_set.iq[start:stop].astype(np.float32))
            logits = model.forward(x, mode).data
            preds[start:stop] = logits.argmax(axis=1)
    labels = test_set.labels.astype(np.int64)
    np.add.at(confusion, (labels, preds), 1)
    per_snr: dict[float, float] = {}
    for snr in np.unique(test_set.snr_db):
        sel = test_set.snr_db == snr
        per_snr[float(snr)] = float(np.mean(preds[sel] == labels[sel]))
    overall = float(np.mean(list(per_snr.values())))
    return EvalReport(per_snr, overall, confusion,
                      time.perf_counter() - t0, list(test_set.class_names))


ABLATION_VARIANTS = ("full", "no-denoise", "no-ssm")


@dataclass
class AblationRow:
    variant: str
    seed: int
    accuracy: float
    param_count: int


def ablate(base: ModelConfig, train_set: Dataset, test_set: Dataset,
           config: TrainConfig, seeds=(0, 1, 2)) -> list[AblationRow]:
    """Train {full, no-denoise, no-ssm} with matched seeds; collect accuracy."""
    rows: list[AblationRow] = []
    for seed in seeds:
        for variant in ABLATION_VARIANTS:
            mconf = replace(
                base,
                seed=seed,
                use_denoise=variant != "no-denoise",
                use_ssm=variant != "no-ssm",
            )
            model = ModulationClassifier(mconf)
            train(model, train_set, replace(config, seed=seed, ckpt_path=None))
            report = evaluate(model, test_set, mode=config.mode)
            rows.append(AblationRow(variant, seed, report.overall_accuracy,
                                    model.param_count()))
    return rows


def summarize_ablation(rows: list[AblationRow]) -> dict[str, dict[str, float]]:
    """Mean accuracy per variant and its delta against the full model."""
    means = {
        v: float(np.mean([r.accuracy for r in rows if r.variant == v]))
        for v in ABLATION_VARIANTS
    }
    return {v: {"mean_accuracy": means[v], "delta_vs_full": means[v] - means["full"]}
            for v in ABLATION_VARIANTS}
