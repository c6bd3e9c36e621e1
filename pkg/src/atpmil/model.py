"""Residual CNN backbone, instance construction, bag pooling and the ATP head.

Two ways of turning a well image into a bag of instances are supported:

* ``mesh``    -- the image is cut into a regular grid of patches and every
                 patch is embedded by the shared backbone (global average pool
                 over its feature map);
* ``learned`` -- the backbone runs once over the whole image and every spatial
                 position of the final feature map becomes an instance.

``whole`` is a plain single-instance baseline (backbone + global average pool).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any

import torch
import torch.nn as nn
import torch.nn.functional as F

from .codec import ATPCode, CodecConfig, hard_decode
from .config import ConfigError, ModelConfig, RunConfig

CHECKPOINT_FORMAT = "atpmil-checkpoint"
CHECKPOINT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# backbone
# --------------------------------------------------------------------------


class ResidualBlock(nn.Module):
    """conv-bn-relu-conv-bn plus a (projected when needed) shortcut."""

    def __init__(self, in_ch: int, out_ch: int, stride: int = 1, residual: bool = True,
                 padding_mode: str = "zeros"):
        super().__init__()
        self.residual = residual
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, stride, 1, bias=False, padding_mode=padding_mode)
        self.bn1 = nn.BatchNorm2d(out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, 1, 1, bias=False, padding_mode=padding_mode)
        self.bn2 = nn.BatchNorm2d(out_ch)
        if residual and (stride != 1 or in_ch != out_ch):
            self.shortcut = nn.Sequential(
                nn.Conv2d(in_ch, out_ch, 1, stride, bias=False), nn.BatchNorm2d(out_ch)
            )
        else:
            self.shortcut = nn.Identity()

    def branch(self, x):
        return self.bn2(self.conv2(F.relu(self.bn1(self.conv1(x)))))

    def forward(self, x):
        out = self.branch(x)
        if self.residual:
            out = out + self.shortcut(x)
        return F.relu(out)


class Backbone(nn.Module):
    """Stride-2 stem followed by one downsampling residual stage per entry of
    ``cfg.channels``; output stride is ``2 ** (len(channels) + 1)``."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        pm = cfg.padding_mode
        c0 = cfg.channels[0]
        self.stem = nn.Sequential(
            nn.Conv2d(cfg.in_channels, c0, 3, 2, 1, bias=False, padding_mode=pm),
            nn.BatchNorm2d(c0),
            nn.ReLU(inplace=True),
        )
        stages = []
        in_ch = c0
        for ch in cfg.channels:
            blocks = [ResidualBlock(in_ch, ch, 2, cfg.residual, pm)]
            blocks += [ResidualBlock(ch, ch, 1, cfg.residual, pm) for _ in range(cfg.blocks_per_stage - 1)]
            stages.append(nn.Sequential(*blocks))
            in_ch = ch
        self.stages = nn.Sequential(*stages)
        self.out_dim = in_ch
        self.stride = cfg.stride

    def forward(self, x):
        return self.stages(self.stem(x))


# --------------------------------------------------------------------------
# instances
# --------------------------------------------------------------------------


def make_mesh_instances(image: torch.Tensor, grid: tuple[int, int]) -> torch.Tensor:
    """Tile ``image[..., C, H, W]`` into ``rows*cols`` patches, row-major.

    Returns a tensor of shape ``(..., rows*cols, C, H//rows, W//cols)``.
    """
    rows, cols = grid
    *lead, c, h, w = image.shape
    if h % rows or w % cols:
        raise ConfigError(f"image of {h}x{w} cannot be tiled by a {rows}x{cols} grid")
    ph, pw = h // rows, w // cols
    x = image.reshape(*lead, c, rows, ph, cols, pw)
    nl = len(lead)
    # (..., C, r, ph, c, pw) -> (..., r, c, C, ph, pw)
    perm = [*range(nl), nl + 1, nl + 3, nl, nl + 2, nl + 4]
    return x.permute(*perm).reshape(*lead, rows * cols, c, ph, pw)


def extract_instance_features(patches: torch.Tensor, backbone: Backbone) -> torch.Tensor:
    """Embed ``patches[B, N, C, h, w]`` (or ``[N, C, h, w]``) with the shared
    backbone; returns ``[B, N, D]`` (or ``[N, D]``)."""
    if patches.shape[-4] == 0:
        raise ValueError("cannot build a bag from zero patches")
    lead = patches.shape[:-3]
    flat = patches.reshape(-1, *patches.shape[-3:])
    feats = backbone(flat).mean(dim=(-2, -1))
    return feats.reshape(*lead, -1)


def extract_map_instances(image: torch.Tensor, backbone: Backbone) -> torch.Tensor:
    """Unroll the final feature map ``[B, D, H', W']`` into ``[B, H'*W', D]``."""
    fmap = backbone(image)
    return fmap.flatten(-2).transpose(-1, -2)


# --------------------------------------------------------------------------
# pooling
# --------------------------------------------------------------------------


def _check_finite(bag: torch.Tensor):
    if not torch.isfinite(bag).all():
        raise FloatingPointError("instance features contain NaN or Inf")


def attention_pool(bag: torch.Tensor, V: torch.Tensor, w: torch.Tensor):
    """``a_n = softmax_n(w . tanh(V h_n))``, ``z = sum_n a_n h_n``.

    ``bag`` is ``[..., N, D]``, ``V`` is ``[L, D]`` and ``w`` is ``[L]``.
    Returns ``(z[..., D], a[..., N])``.
    """
    _check_finite(bag)
    if bag.shape[-1] != V.shape[-1]:
        raise ValueError(f"bag dim {bag.shape[-1]} does not match attention dim {V.shape[-1]}")
    scores = torch.tanh(bag @ V.transpose(0, 1)) @ w
    a = torch.softmax(scores, dim=-1)
    z = (a.unsqueeze(-1) * bag).sum(dim=-2)
    return z, a


def sum_pool(bag: torch.Tensor) -> torch.Tensor:
    _check_finite(bag)
    return bag.sum(dim=-2)


def concat_pool(bag: torch.Tensor, n_instances: int | None = None) -> torch.Tensor:
    _check_finite(bag)
    if n_instances is not None and bag.shape[-2] != n_instances:
        raise ConfigError(f"concat pooling expects {n_instances} instances, got {bag.shape[-2]}")
    return bag.flatten(-2)


class AttentionPool(nn.Module):
    def __init__(self, dim: int, hidden: int = 128):
        super().__init__()
        self.V = nn.Linear(dim, hidden, bias=False)
        self.w = nn.Linear(hidden, 1, bias=False)

    def forward(self, bag):
        return attention_pool(bag, self.V.weight, self.w.weight[0])


# --------------------------------------------------------------------------
# head and full model
# --------------------------------------------------------------------------


class RegressionHead(nn.Module):
    """Fully connected map from the pooled embedding to ``n_bits + 1`` outputs
    in (0, 1): bit probabilities followed by the fraction."""

    def __init__(self, in_dim: int, code_dim: int, hidden: int = 128):
        super().__init__()
        self.net = nn.Sequential(nn.Linear(in_dim, hidden), nn.ReLU(inplace=True), nn.Linear(hidden, code_dim))

    def forward(self, z):
        return torch.sigmoid(self.net(z))


@dataclass
class BagPrediction:
    """Batched model output; leading dimension is the batch."""

    attention: torch.Tensor | None  # [B, N], None unless attention pooling
    embedding: torch.Tensor  # [B, Dz]
    bits: torch.Tensor  # [B, n_bits]
    fraction: torch.Tensor  # [B]
    atp_estimate: torch.Tensor  # [B]

    @property
    def code(self) -> torch.Tensor:
        return torch.cat([self.bits, self.fraction.unsqueeze(-1)], dim=-1)

    def codes(self) -> list[ATPCode]:
        return [ATPCode.from_vector(row) for row in self.code.detach().cpu().tolist()]


class ATPNet(nn.Module):
    def __init__(self, model_cfg: ModelConfig, codec_cfg: CodecConfig):
        super().__init__()
        self.cfg = model_cfg
        self.codec = codec_cfg
        self.backbone = Backbone(model_cfg)
        dim = self.backbone.out_dim
        self.pool = None
        if model_cfg.scheme != "whole" and model_cfg.aggregator == "attention":
            self.pool = AttentionPool(dim, model_cfg.attention_dim)
        z_dim = dim
        if model_cfg.scheme != "whole" and model_cfg.aggregator == "concat":
            z_dim = dim * model_cfg.n_instances
        self.head = RegressionHead(z_dim, codec_cfg.code_dim, model_cfg.head_hidden)

    def instances(self, x: torch.Tensor) -> torch.Tensor:
        """Bag of instance features ``[B, N, D]`` for a batch of images."""
        self._check_input(x)
        if self.cfg.scheme == "mesh":
            return extract_instance_features(make_mesh_instances(x, self.cfg.grid), self.backbone)
        if self.cfg.scheme == "learned":
            return extract_map_instances(x, self.backbone)
        return self.backbone(x).mean(dim=(-2, -1)).unsqueeze(-2)

    def _check_input(self, x):
        res = self.cfg.input_resolution
        if x.ndim != 4 or x.shape[1] != self.cfg.in_channels or x.shape[-2:] != (res, res):
            raise ValueError(
                f"expected input of shape [B, {self.cfg.in_channels}, {res}, {res}], got {tuple(x.shape)}"
            )

    def forward(self, x: torch.Tensor) -> BagPrediction:
        bag = self.instances(x)
        attention = None
        if self.cfg.scheme == "whole":
            z = bag[..., 0, :]
        elif self.cfg.aggregator == "attention":
            z, attention = self.pool(bag)
        elif self.cfg.aggregator == "sum":
            z = sum_pool(bag)
        else:
            z = concat_pool(bag, self.cfg.n_instances)
        out = self.head(z)
        bits, fraction = out[..., :-1], out[..., -1]
        estimate = hard_decode(bits.detach(), fraction.detach(), self.codec)
        return BagPrediction(attention, z, bits, fraction, estimate)


def build_model(cfg: RunConfig) -> ATPNet:
    return ATPNet(cfg.model, cfg.codec)


# --------------------------------------------------------------------------
# checkpoints
# --------------------------------------------------------------------------


def save_checkpoint(path: str | Path, model: ATPNet, cfg: RunConfig, **meta: Any) -> Path:
    path = Path(path)
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": cfg.to_dict(),
        "state_dict": {k: v.detach().cpu().clone() for k, v in model.state_dict().items()},
        "meta": meta,
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    tmp.replace(path)
    return path


def load_checkpoint(path: str | Path) -> tuple[ATPNet, RunConfig, dict[str, Any]]:
    """Rebuild the model recorded in ``path``; returns ``(model, cfg, meta)``
    with the model in eval mode."""
    path = Path(path)
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except FileNotFoundError:
        raise
    except Exception as exc:  # corrupt or foreign file
        raise CheckpointError(f"{path}: not a readable checkpoint ({exc})") from exc
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: not an atpmil checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: checkpoint version {payload.get('version')} is not supported "
            f"(expected {CHECKPOINT_VERSION})"
        )
    try:
        cfg = RunConfig.from_dict(payload["config"])
    except ConfigError as exc:
        raise CheckpointError(f"{path}: embedded config is invalid: {exc}") from exc
    model = build_model(cfg)
    try:
        missing, unexpected = model.load_state_dict(payload["state_dict"], strict=False)
    except RuntimeError as exc:  # shape mismatch
        raise CheckpointError(f"{path}: parameters do not match the embedded config: {exc}") from exc
    if missing or unexpected:
        raise CheckpointError(
            f"{path}: parameters do not match the embedded config "
            f"(missing={sorted(missing)}, unexpected={sorted(unexpected)})"
        )
    model.eval()
    return model, cfg, payload.get("meta", {})
