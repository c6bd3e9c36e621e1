"""Binary + fraction encoding of wide-range ATP values.

A value ``v`` is divided by the bin width ``r_bin``; the integer part of the
quotient is written as ``n_bits`` binary digits (most significant first) and
the fractional part is kept as a scalar in ``[0, 1)``.  The resulting vector
has ``n_bits + 1`` components and is the regression target of the model.

The array helpers (``encode_many``, ``soft_decode_array``, ``hard_decode``)
only use arithmetic operators and ``.clip``/``.sum`` so they accept numpy
arrays and torch tensors alike.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "ATPCode",
    "CodecConfig",
    "decode_atp",
    "denormalize",
    "encode_atp",
    "encode_many",
    "hard_decode",
    "normalize",
    "place_values",
    "soft_decode",
    "soft_decode_array",
]


def default_n_bits(atp_max: float, r_bin: float) -> int:
    n_bins = math.ceil(atp_max / r_bin)
    return max(1, math.ceil(math.log2(n_bins)))


@dataclass(frozen=True)
class CodecConfig:
    atp_max: float = 400_000.0
    r_bin: float = 20_000.0
    n_bits: int | None = None  # None -> smallest width covering atp_max

    def __post_init__(self):
        if not self.r_bin > 0:
            raise ValueError(f"r_bin must be positive, got {self.r_bin}")
        if not self.atp_max > self.r_bin:
            raise ValueError(f"atp_max ({self.atp_max}) must exceed r_bin ({self.r_bin})")
        if self.n_bits is None:
            object.__setattr__(self, "n_bits", default_n_bits(self.atp_max, self.r_bin))
        if self.n_bits < 1:
            raise ValueError(f"n_bits must be >= 1, got {self.n_bits}")

    @property
    def code_dim(self) -> int:
        """Total encoded dimension (bits + fraction)."""
        return self.n_bits + 1

    @property
    def capacity(self) -> float:
        """Smallest value that no longer fits the integer bits."""
        return (2**self.n_bits) * self.r_bin

    @property
    def covers_atp_max(self) -> bool:
        return 2**self.n_bits >= math.ceil(self.atp_max / self.r_bin)


@dataclass(frozen=True)
class ATPCode:
    bits: tuple[float, ...]
    fraction: float

    def __post_init__(self):
        object.__setattr__(self, "bits", tuple(float(b) for b in self.bits))

    def as_vector(self) -> np.ndarray:
        return np.array([*self.bits, self.fraction], dtype=np.float64)

    @classmethod
    def from_vector(cls, vec: Sequence[float]) -> "ATPCode":
        vec = list(vec)
        return cls(tuple(vec[:-1]), float(vec[-1]))


def place_values(n_bits: int) -> np.ndarray:
    """Integer weight of each bit position, MSB first."""
    return 2.0 ** np.arange(n_bits - 1, -1, -1, dtype=np.float64)


def _split(value: float, r_bin: float) -> tuple[int, float]:
    # floor via the remainder keeps fraction == (v - k*r_bin)/r_bin, which is
    # correctly rounded (e.g. 19420/20000 -> 0.971 exactly).
    k = math.floor(value / r_bin)
    rem = value - k * r_bin
    if rem < 0:
        k -= 1
        rem = value - k * r_bin
    elif rem >= r_bin:
        k += 1
        rem = value - k * r_bin
    return k, rem / r_bin


def encode_atp(value: float, cfg: CodecConfig) -> ATPCode:
    """Encode a non-negative ATP value.

    Raises ``ValueError`` for negative or non-finite values and
    ``OverflowError`` when the integer part needs more than ``cfg.n_bits``.
    """
    value = float(value)
    if not math.isfinite(value) or value < 0:
        raise ValueError(f"ATP value must be finite and non-negative, got {value}")
    k, fraction = _split(value, cfg.r_bin)
    if k >= 2**cfg.n_bits:
        raise OverflowError(
            f"ATP value {value} has integer part {k}, which does not fit in "
            f"{cfg.n_bits} bits (capacity {cfg.capacity})"
        )
    bits = tuple(float((k >> s) & 1) for s in range(cfg.n_bits - 1, -1, -1))
    return ATPCode(bits, fraction)


def encode_many(values, cfg: CodecConfig) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised ``encode_atp``: returns ``(bits[N, n_bits], fraction[N])``."""
    codes = [encode_atp(v, cfg) for v in np.asarray(values, dtype=np.float64).ravel()]
    bits = np.array([c.bits for c in codes], dtype=np.float64).reshape(-1, cfg.n_bits)
    fraction = np.array([c.fraction for c in codes], dtype=np.float64)
    return bits, fraction


def decode_atp(code: ATPCode, cfg: CodecConfig) -> float:
    if len(code.bits) != cfg.n_bits:
        raise ValueError(f"code has {len(code.bits)} bits, codec expects {cfg.n_bits}")
    k = 0
    for b in code.bits:
        k = (k << 1) | int(b >= 0.5)
    return k * cfg.r_bin + code.fraction * cfg.r_bin


def soft_decode_array(bits, fraction, cfg: CodecConfig):
    """Differentiable normalised decode of (possibly probabilistic) bits.

    ``bits`` has shape ``(..., n_bits)`` and ``fraction`` shape ``(...)``.
    """
    weights = place_values(cfg.n_bits)
    if not isinstance(bits, np.ndarray):  # torch tensor
        weights = bits.new_tensor(weights)
    bins = (bits * weights).sum(-1) + fraction
    return (bins * (cfg.r_bin / cfg.atp_max)).clip(0.0, 1.0)


def soft_decode(code: ATPCode, cfg: CodecConfig) -> float:
    bits = np.asarray(code.bits, dtype=np.float64)
    return float(soft_decode_array(bits, np.float64(code.fraction), cfg))


def hard_decode(bits, fraction, cfg: CodecConfig):
    """Threshold bits at 0.5 (ties go to 1) and decode to raw ATP units."""
    weights = place_values(cfg.n_bits)
    if isinstance(bits, np.ndarray):
        hard = (bits >= 0.5).astype(np.float64)
    else:
        weights = bits.new_tensor(weights)
        hard = (bits >= 0.5).to(bits.dtype)
    return ((hard * weights).sum(-1) + fraction) * cfg.r_bin


def normalize(value: float, cfg: CodecConfig) -> float:
    if not 0 <= value <= cfg.atp_max:
        raise ValueError(f"value {value} outside [0, {cfg.atp_max}]")
    return value / cfg.atp_max


def denormalize(u: float, cfg: CodecConfig) -> float:
    if not 0 <= u <= 1:
        raise ValueError(f"normalised value {u} outside [0, 1]")
    return u * cfg.atp_max
