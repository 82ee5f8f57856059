"""Classifier assembly: denoiser + gated state-space blocks + linear head.

A model is a stack of blocks, each a front end (shrinkage denoiser, or a
plain lift convolution in the ablated variant) followed by a gated
state-space unit (or the identity in the ablated variant), then mean
pooling over time and a linear classification head. Weights are length-
agnostic: one instance accepts any signal length the convolutions admit.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass

import numpy as np

from .dataio import FormatError, MagicError, TruncatedFileError, VersionError
from .shrink import PlainLift, ShrinkageDenoiser
from .ssm import SelectiveLayer
from .tensor import (
    ShapeError,
    Tensor,
    depthwise_conv1d,
    matmul,
    no_grad,
    reciprocal,
    sigmoid,
    softmax,
    sqrt,
    swapaxes,
)

IN_CHANNELS = 2          # in-phase and quadrature rows
STREAM_CONV_WIDTH = 4    # causal per-channel mixer inside the gated unit
CKPT_MAGIC = b"MMCK"
CKPT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    num_classes: int
    num_blocks: int = 2
    d_model: int = 64
    n_state: int = 16
    conv_kernel: int = 5
    expand: int = 2
    use_denoise: bool = True
    use_ssm: bool = True
    use_gate: bool = True
    use_norm: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError(f"need at least 2 classes, got {self.num_classes}")
        for field in ("num_blocks", "d_model", "n_state", "conv_kernel", "expand"):
            if getattr(self, field) < 1:
                raise ValueError(f"{field} must be positive")
        if self.conv_kernel % 2 == 0:
            raise ValueError(f"conv_kernel must be odd, got {self.conv_kernel}")

    def to_dict(self) -> dict:
        return asdict(self)


def silu(x: Tensor) -> Tensor:
    return x * sigmoid(x)


class RmsNorm:
    """Root-mean-square normalization over the channel axis, with gain."""

    def __init__(self, dim: int, eps: float = 1e-6):
        self.eps = eps
        self.weight = Tensor(np.ones(dim, np.float32), requires_grad=True)

    def params(self) -> dict[str, Tensor]:
        return {"weight": self.weight}

    def forward(self, x: Tensor) -> Tensor:  # x: (B, L, D)
        ms = (x * x).mean(axis=2, keepdims=True)
        return x * reciprocal(sqrt(ms + self.eps)) * self.weight

    __call__ = forward


class GatedStateUnit:
    """Residual unit wrapping the selective state-space layer.

    Gated form: two input projections make a stream and a gate; the stream
    passes through a causal per-channel conv, SiLU, and the state-space
    layer, is gated, and is projected back down, with a residual add.
    With use_gate off the unit is just the (optionally normalized) bare
    state-space layer at model width.
    """

    def __init__(self, d_model: int, n_state: int, expand: int,
                 use_gate: bool, use_norm: bool, rng: np.random.Generator):
        self.d_model = d_model
        self.use_gate = use_gate
        self.norm = RmsNorm(d_model) if use_norm else None
        inner = expand * d_model if use_gate else d_model
        self.inner = inner
        if use_gate:
            bound = 1.0 / np.sqrt(d_model)

            def w(shape, b=bound):
                return Tensor(rng.uniform(-b, b, shape).astype(np.float32),
                              requires_grad=True)

            self.w_stream = w((d_model, inner))
            self.b_stream = Tensor(np.zeros(inner, np.float32), requires_grad=True)
            self.w_gate = w((d_model, inner))
            self.b_gate = Tensor(np.zeros(inner, np.float32), requires_grad=True)
            self.conv_w = w((inner, STREAM_CONV_WIDTH),
                            b=1.0 / np.sqrt(STREAM_CONV_WIDTH))
            self.conv_b = Tensor(np.zeros(inner, np.float32), requires_grad=True)
            self.ssm = SelectiveLayer(inner, n_state, rng)
            self.w_out = w((inner, d_model), b=1.0 / np.sqrt(inner))
            self.b_out = Tensor(np.zeros(d_model, np.float32), requires_grad=True)
        else:
            self.ssm = SelectiveLayer(d_model, n_state, rng)

    def params(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        if self.norm is not None:
            for k, v in self.norm.params().items():
                out[f"norm.{k}"] = v
        if self.use_gate:
            out.update(w_stream=self.w_stream, b_stream=self.b_stream,
                       w_gate=self.w_gate, b_gate=self.b_gate,
                       conv_w=self.conv_w, conv_b=self.conv_b)
        for k, v in self.ssm.params().items():
            out[f"ssm.{k}"] = v
        if self.use_gate:
            out.update(w_out=self.w_out, b_out=self.b_out)
        return out

    def forward(self, x: Tensor, mode: str = "parallel") -> Tensor:
        # x arrives channel-major (B, D, L); state-space math runs length-major
        x_lm = swapaxes(x, 1, 2)
        z = self.norm(x_lm) if self.norm is not None else x_lm
        if not self.use_gate:
            return swapaxes(self.ssm(z, mode), 1, 2)
        stream = matmul(z, self.w_stream) + self.b_stream          # (B, L, E*D)
        stream = swapaxes(
            depthwise_conv1d(swapaxes(stream, 1, 2), self.conv_w, self.conv_b),
            1, 2)
        stream = self.ssm(silu(stream), mode)
        gate = silu(matmul(z, self.w_gate) + self.b_gate)
        y = matmul(stream * gate, self.w_out) + self.b_out         # (B, L, D)
        return swapaxes(y, 1, 2) + x

    __call__ = forward


class ModulationClassifier:
    """End-to-end classifier over raw (B, 2, L) I/Q arrays."""

    def __init__(self, config: ModelConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        d, k = config.d_model, config.conv_kernel
        self.blocks: list[tuple[object, GatedStateUnit | None]] = []
        c_in = IN_CHANNELS
        for _ in range(config.num_blocks):
            front_cls = ShrinkageDenoiser if config.use_denoise else PlainLift
            front = front_cls(c_in, d, k, rng)
            unit = (GatedStateUnit(d, config.n_state, config.expand,
                                   config.use_gate, config.use_norm, rng)
                    if config.use_ssm else None)
            self.blocks.append((front, unit))
            c_in = d
        bound = 1.0 / np.sqrt(d)
        self.head_w = Tensor(
            rng.uniform(-bound, bound, (d, config.num_classes)).astype(np.float32),
            requires_grad=True)
        self.head_b = Tensor(np.zeros(config.num_classes, np.float32),
                             requires_grad=True)

    def params(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for i, (front, unit) in enumerate(self.blocks):
            for k, v in front.params().items():
                out[f"blocks.{i}.front.{k}"] = v
            if unit is not None:
                for k, v in unit.params().items():
                    out[f"blocks.{i}.unit.{k}"] = v
        out["head.weight"] = self.head_w
        out["head.bias"] = self.head_b
        return out

    def param_count(self) -> int:
        return sum(p.data.size for p in self.params().values())

    def forward(self, x, mode: str = "parallel") -> Tensor:
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x))
        if x.ndim != 3 or x.shape[1] != IN_CHANNELS:
            raise ShapeError(f"expected (B, {IN_CHANNELS}, L) input, got {x.shape}")
        h = x
        for front, unit in self.blocks:
            h = front(h)
            if unit is not None:
                h = unit(h, mode)
        pooled = h.mean(axis=2)                      # (B, D)
        return matmul(pooled, self.head_w) + self.head_b

    __call__ = forward

    def classify(self, x, mode: str = "parallel") -> tuple[np.ndarray, np.ndarray]:
        """Predicted labels (B,) and class probabilities (B, K)."""
        with no_grad():
            logits = self.forward(x, mode).data
        return logits.argmax(axis=1), softmax(logits)

    # -- checkpointing ------------------------------------------------------

    def save(self, path) -> None:
        """Write a bit-exact checkpoint: config json, then parameter records."""
        out = bytearray()
        out += CKPT_MAGIC
        out += struct.pack("<I", CKPT_VERSION)
        cfg = json.dumps(self.config.to_dict(), sort_keys=True).encode("utf-8")
        out += struct.pack("<I", len(cfg)) + cfg
        for name, p in self.params().items():
            blob = name.encode("utf-8")
            out += struct.pack("<H", len(blob)) + blob
            out += struct.pack("<B", p.data.ndim)
            out += struct.pack(f"<{p.data.ndim}I", *p.data.shape)
            out += np.ascontiguousarray(p.data, dtype="<f4").tobytes()
        with open(path, "wb") as fh:
            fh.write(bytes(out))

    @classmethod
    def load(cls, path) -> "ModulationClassifier":
        with open(path, "rb") as fh:
            buf = fh.read()
        pos = 0

        def take(n):
            nonlocal pos
            if pos + n > len(buf):
                raise TruncatedFileError(
                    f"need {n} bytes at offset {pos}, file has {len(buf)}")
            chunk = buf[pos:pos + n]
            pos += n
            return chunk

        if take(4) != CKPT_MAGIC:
            raise MagicError(f"bad checkpoint magic, expected {CKPT_MAGIC!r}")
        version = struct.unpack("<I", take(4))[0]
        if version != CKPT_VERSION:
            raise VersionError(f"unsupported checkpoint version {version}")
        cfg_len = struct.unpack("<I", take(4))[0]
        try:
            cfg = ModelConfig(**json.loads(take(cfg_len).decode("utf-8")))
        except (TypeError, ValueError, json.JSONDecodeError) as e:
            raise FormatError(f"bad config record: {e}") from None
        model = cls(cfg)
        registry = model.params()
        seen = set()
        while pos < len(buf):
            name_len = struct.unpack("<H", take(2))[0]
            name = take(name_len).decode("utf-8")
            rank = struct.unpack("<B", take(1))[0]
            shape = struct.unpack(f"<{rank}I", take(4 * rank))
            data = np.frombuffer(take(4 * int(np.prod(shape, dtype=np.int64))),
                                 dtype="<f4").reshape(shape)
            param = registry.get(name)
            if param is None:
                raise FormatError(f"unknown parameter {name!r} in checkpoint")
            if param.data.shape != shape:
                raise FormatError(
                    f"parameter {name!r} shape {shape} != model {param.data.shape}")
            param.data = data.astype(np.float32)
            seen.add(name)
        missing = set(registry) - seen
        if missing:
            raise FormatError(f"checkpoint missing parameters: {sorted(missing)}")
        return model
