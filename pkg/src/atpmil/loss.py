"""Composite objective: position-weighted code loss plus normalised-value MSE.

``L = alpha * L_cls + (1 - alpha) * L_reg`` where ``L_cls`` applies binary
cross-entropy to the bits and squared error to the fraction, each component
weighted by ``W[i] = sigmoid(epoch / epoch_scale - ln(1/w - 1)) ** i``, and
``L_reg`` is the squared error between the soft-decoded prediction and the
normalised ground truth.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np
import torch

from .codec import CodecConfig, encode_many, soft_decode_array
from .config import LossConfig


class LossTerms(NamedTuple):
    total: torch.Tensor
    cls: torch.Tensor
    reg: torch.Tensor


def position_weights(epoch: int, cfg: LossConfig, B: int) -> np.ndarray:
    """Per-component weights for a code of dimension ``B`` at ``epoch``.

    Position 0 (the most significant bit) always gets weight 1.
    """
    if B < 1:
        raise ValueError(f"B must be >= 1, got {B}")
    w = cfg.decay_w
    if not 0 < w < 1:
        raise ValueError(f"decay factor must lie in (0, 1), got {w}")
    base = 1.0 / (1.0 + math.exp(math.log(1.0 / w - 1.0) - epoch / cfg.epoch_scale))
    return base ** np.arange(B, dtype=np.float64)


def _as_tensor(x, like: torch.Tensor) -> torch.Tensor:
    return torch.as_tensor(x, dtype=like.dtype, device=like.device)


def encoding_loss(pred: torch.Tensor, target: torch.Tensor, weights, eps: float = 1e-7) -> torch.Tensor:
    """Weighted code loss for ``pred``/``target`` of shape ``[N, B]``.

    Columns ``0..B-2`` are bits (BCE), column ``B-1`` is the fraction (squared
    error).  The sum is normalised by ``N * B``.
    """
    if pred.shape != target.shape or pred.ndim != 2:
        raise ValueError(f"pred {tuple(pred.shape)} and target {tuple(target.shape)} must both be [N, B]")
    n, b = pred.shape
    W = _as_tensor(weights, pred)
    if W.shape != (b,):
        raise ValueError(f"expected {b} position weights, got {tuple(W.shape)}")
    p = pred[:, :-1].clamp(eps, 1.0 - eps)
    t = target[:, :-1]
    bce = -(t * torch.log(p) + (1.0 - t) * torch.log1p(-p))
    mse = (pred[:, -1] - target[:, -1]) ** 2
    per_sample = (bce * W[:-1]).sum(dim=1) + mse * W[-1]
    return per_sample.sum() / (n * b)


def scalar_loss(pred_norm: torch.Tensor, target_norm: torch.Tensor) -> torch.Tensor:
    return ((pred_norm - target_norm) ** 2).mean()


def encode_targets(atp, codec: CodecConfig, like: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Ground-truth code ``[N, B]`` and normalised value ``[N]`` as tensors."""
    atp = np.asarray(atp, dtype=np.float64).ravel()
    bits, frac = encode_many(atp, codec)
    code = np.concatenate([bits, frac[:, None]], axis=1)
    if (atp > codec.atp_max).any():
        raise ValueError(f"ATP values above atp_max={codec.atp_max} cannot be normalised")
    return _as_tensor(code, like), _as_tensor(atp / codec.atp_max, like)


def composite_loss(bits: torch.Tensor, fraction: torch.Tensor, target_atp, epoch: int,
                   cfg: LossConfig, codec: CodecConfig, weights=None) -> LossTerms:
    """Total loss for predicted ``bits[N, n_bits]`` / ``fraction[N]`` against
    raw ATP targets.  ``weights`` defaults to ``position_weights(epoch)``."""
    pred_code = torch.cat([bits, fraction.unsqueeze(-1)], dim=-1)
    target_code, target_norm = encode_targets(target_atp, codec, pred_code)
    W = position_weights(epoch, cfg, codec.code_dim) if weights is None else weights
    cls = encoding_loss(pred_code, target_code, W, cfg.eps)
    reg = scalar_loss(soft_decode_array(bits, fraction, codec), target_norm)
    total = cfg.alpha * cls + (1.0 - cfg.alpha) * reg
    return LossTerms(total, cls, reg)
