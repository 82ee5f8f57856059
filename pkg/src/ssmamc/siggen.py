"""Synthetic labeled I/Q dataset generator.

Pipeline per sample: draw random symbols from a constellation, pulse-shape
(root-raised-cosine or ideal impulses), optionally rotate by a random
carrier phase, then add white Gaussian noise at the requested SNR. Every
sample is produced by its own counter-based generator keyed on
(seed, scheme, snr, index), so datasets are reproducible and the
construction order is irrelevant.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataio import Dataset

# canonical ids are part of the keying scheme; append-only
SCHEMES = ("bpsk", "qpsk", "psk8", "pam4", "qam16", "qam64", "qam256",
           "qam1024", "qam32x", "qam128x", "qam512x")
_SCHEME_IDS = {tag: i for i, tag in enumerate(SCHEMES)}

ALLOWED_LENGTHS = (128, 256, 512, 1024, 2048, 4096)


def _gray(n: np.ndarray | int):
    return n ^ (n >> 1)


def _square_qam(side: int) -> np.ndarray:
    """Gray-coded square grid: symbol index -> point, unnormalized."""
    bits = side.bit_length() - 1
    levels = 2.0 * np.arange(side) - (side - 1)
    pts = np.empty(side * side, dtype=complex)
    for i in range(side):
        for q in range(side):
            pts[(_gray(i) << bits) | _gray(q)] = levels[i] + 1j * levels[q]
    return pts


def _cross_qam(side: int, corner: int) -> np.ndarray:
    """Rectangle minus four corner blocks, row-scan index order."""
    levels = 2.0 * np.arange(side) - (side - 1)
    pts = []
    for r in range(side):
        for c in range(side):
            edge_r = r < corner or r >= side - corner
            edge_c = c < corner or c >= side - corner
            if edge_r and edge_c:
                continue
            pts.append(levels[c] + 1j * levels[side - 1 - r])
    return np.asarray(pts)


def constellation(scheme: str) -> np.ndarray:
    """Unit-average-power, zero-mean complex points for a scheme tag."""
    tag = scheme.lower()
    if tag == "bpsk":
        pts = np.array([1.0 + 0j, -1.0 + 0j])
    elif tag == "qpsk":
        pts = _square_qam(2)
    elif tag == "psk8":
        angles = 2.0 * np.pi * np.arange(8) / 8.0
        pts = np.empty(8, dtype=complex)
        pts[_gray(np.arange(8))] = np.exp(1j * angles)
    elif tag == "pam4":
        levels = np.array([-3.0, -1.0, 1.0, 3.0])
        pts = np.empty(4, dtype=complex)
        pts[_gray(np.arange(4))] = levels
    elif tag in ("qam16", "qam64", "qam256", "qam1024"):
        side = int(np.sqrt(int(tag[3:])))
        pts = _square_qam(side)
    elif tag == "qam32x":
        pts = _cross_qam(6, 1)
    elif tag == "qam128x":
        pts = _cross_qam(12, 2)
    elif tag == "qam512x":
        pts = _cross_qam(24, 4)
    else:
        raise ValueError(f"unknown modulation scheme {scheme!r}")
    return pts / np.sqrt(np.mean(np.abs(pts) ** 2))


def bits_per_symbol(scheme: str) -> int:
    return constellation(scheme).size.bit_length() - 1


@dataclass(frozen=True)
class ChannelSpec:
    """Pulse shaping and noise level for one transmission."""

    snr_db: float = 20.0
    pulse: str = "rrc"           # "rrc" or "ideal"
    rolloff: float = 0.35
    span: int = 8                # filter extent in symbols
    sps: int = 8                 # samples per symbol

    def __post_init__(self):
        if self.pulse not in ("rrc", "ideal"):
            raise ValueError(f"pulse must be 'rrc' or 'ideal', got {self.pulse!r}")
        if not 0.0 < self.rolloff <= 1.0:
            raise ValueError(f"rolloff must lie in (0, 1], got {self.rolloff}")
        if self.span < 2:
            raise ValueError(f"span must be >= 2 symbols, got {self.span}")
        if self.sps < 1:
            raise ValueError(f"sps must be >= 1, got {self.sps}")


def rrc_taps(rolloff: float, span: int, sps: int) -> np.ndarray:
    """Unit-energy root-raised-cosine taps, length span*sps + 1 (symmetric).

    Closed-form impulse response at unit symbol rate, with the removable
    singularities at t = 0 and |t| = 1/(4*rolloff) filled by their limits,
    then normalized so the squared taps sum to one.
    """
    beta = rolloff
    n = span * sps + 1
    t = (np.arange(n) - (n - 1) / 2.0) / sps
    h = np.empty(n, dtype=np.float64)

    at_zero = t == 0.0
    at_pole = np.isclose(np.abs(t), 1.0 / (4.0 * beta))
    ordinary = ~(at_zero | at_pole)

    tt = t[ordinary]
    h[ordinary] = (np.sin(np.pi * tt * (1 - beta))
                   + 4 * beta * tt * np.cos(np.pi * tt * (1 + beta))) / (
        np.pi * tt * (1 - (4 * beta * tt) ** 2))
    h[at_zero] = 1.0 - beta + 4.0 * beta / np.pi
    h[at_pole] = (beta / np.sqrt(2.0)) * (
        (1 + 2.0 / np.pi) * np.sin(np.pi / (4 * beta))
        + (1 - 2.0 / np.pi) * np.cos(np.pi / (4 * beta)))
    return h / np.sqrt(np.sum(h * h))


def modulate(symbol_indices, scheme: str, channel: ChannelSpec,
             length: int) -> np.ndarray:
    """Complex baseband of exactly ``length`` samples, average power ~= 1.

    Symbols are upsampled by sps and filtered; the root-raised-cosine path
    pads with extra symbols and center-crops so filter transients stay out
    of the returned window. A sqrt(sps) gain compensates the upsampling
    dilution so that unit-power constellations give unit-power output (and
    the ideal pulse at sps=1 returns constellation points verbatim).
    """
    if length < 1:
        raise ValueError(f"length must be positive, got {length}")
    pts = constellation(scheme)
    sym = np.asarray(symbol_indices)
    needed = -(-length // channel.sps)
    if channel.pulse == "rrc":
        needed += channel.span
    if sym.size < needed:
        raise ValueError(f"need at least {needed} symbols, got {sym.size}")
    up = np.zeros(sym.size * channel.sps, dtype=complex)
    up[::channel.sps] = pts[sym]
    if channel.pulse == "ideal":
        out = up[:length]
    else:
        full = np.convolve(up, rrc_taps(channel.rolloff, channel.span, channel.sps))
        start = (full.size - length) // 2
        out = full[start:start + length]
    return out * np.sqrt(channel.sps)


def add_awgn(signal: np.ndarray, snr_db: float,
             rng: np.random.Generator) -> np.ndarray:
    """Add circular white Gaussian noise at the given SNR.

    Total noise variance is P / 10^(snr_db/10) for signal power P, split
    evenly between the real and imaginary components.
    """
    power = float(np.mean(np.abs(signal) ** 2))
    if power == 0.0:
        raise ValueError("cannot set an SNR for a zero-power signal")
    sigma = np.sqrt(power / (10.0 ** (snr_db / 10.0)) / 2.0)
    noise = rng.normal(0.0, sigma, (2, signal.size))
    return signal + noise[0] + 1j * noise[1]


def sample_rng(seed: int, scheme_id: int, snr_db: float,
               index: int) -> np.random.Generator:
    """Counter-based generator for one sample; key = (seed, scheme, snr, index)."""
    if not 0 <= index < 1 << 24:
        raise ValueError(f"sample index out of range: {index}")
    if not 0 <= scheme_id < 256:
        raise ValueError(f"scheme id out of range: {scheme_id}")
    snr_bits = int(np.float32(snr_db).view(np.uint32))
    word = (scheme_id << 56) | (snr_bits << 24) | index
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, word], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class DatasetSpec:
    """Grid description: which schemes, lengths, SNRs, and how many of each."""

    schemes: tuple[str, ...]
    lengths: tuple[int, ...]
    snrs: tuple[float, ...]
    per_cell: int                       # samples per (scheme, snr) pair
    seed: int = 0
    pulse: str = "rrc"
    rolloff: float = 0.35
    span: int = 8
    sps: int = 8
    phase_offset: bool = True           # random carrier rotation per sample

    def __post_init__(self):
        object.__setattr__(self, "schemes",
                           tuple(s.lower() for s in self.schemes))
        object.__setattr__(self, "lengths", tuple(int(v) for v in self.lengths))
        object.__setattr__(self, "snrs", tuple(float(v) for v in self.snrs))
        if not self.schemes or not self.lengths or not self.snrs:
            raise ValueError("schemes, lengths, and snrs must be non-empty")
        for s in self.schemes:
            if s not in _SCHEME_IDS:
                raise ValueError(f"unknown modulation scheme {s!r}")
        for v in self.lengths:
            if v not in ALLOWED_LENGTHS:
                raise ValueError(f"length {v} not in {ALLOWED_LENGTHS}")
        if self.per_cell < 1:
            raise ValueError("per_cell must be positive")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        ChannelSpec(0.0, self.pulse, self.rolloff, self.span, self.sps)

    def channel(self, snr_db: float) -> ChannelSpec:
        return ChannelSpec(snr_db, self.pulse, self.rolloff, self.span, self.sps)


def generate(spec: DatasetSpec, length: int | None = None) -> Dataset:
    """Build the full (scheme x snr x index) grid at one signal length."""
    if length is None:
        if len(spec.lengths) != 1:
            raise ValueError("spec has several lengths; pass one explicitly")
        length = spec.lengths[0]
    if length not in spec.lengths:
        raise ValueError(f"length {length} not in spec.lengths {spec.lengths}")

    total = len(spec.schemes) * len(spec.snrs) * spec.per_cell
    iq = np.empty((total, 2, length), dtype=np.float32)
    labels = np.empty(total, dtype=np.uint16)
    snr_col = np.empty(total, dtype=np.float32)

    row = 0
    for cls_idx, scheme in enumerate(spec.schemes):
        m = constellation(scheme).size
        scheme_id = _SCHEME_IDS[scheme]
        for snr in spec.snrs:
            channel = spec.channel(snr)
            n_sym = -(-length // spec.sps) + (spec.span if spec.pulse == "rrc" else 0)
            for i in range(spec.per_cell):
                rng = sample_rng(spec.seed, scheme_id, snr, i)
                sym = rng.integers(0, m, n_sym)
                wave = modulate(sym, scheme, channel, length)
                if spec.phase_offset:
                    wave = wave * np.exp(1j * rng.uniform(0.0, 2.0 * np.pi))
                wave = add_awgn(wave, snr, rng)
                iq[row, 0] = wave.real
                iq[row, 1] = wave.imag
                labels[row] = cls_idx
                snr_col[row] = snr
                row += 1
    return Dataset(iq, labels, snr_col, list(spec.schemes))


def generate_all(spec: DatasetSpec) -> dict[int, Dataset]:
    """One dataset per requested length (files hold a single length each)."""
    return {length: generate(spec, length) for length in spec.lengths}
