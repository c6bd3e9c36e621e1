"""Image IO, preprocessing (well crop, resample, per-image standardisation)
and training-time augmentation."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from ..config import AugmentConfig

VARIANCE_FLOOR = 1e-6


def load_image(path: str | Path) -> np.ndarray:
    """Read a PNG/TIFF (8/16-bit, grey or RGB) as float32 ``[H, W]`` or ``[H, W, C]``."""
    path = Path(path)
    try:
        if path.suffix.lower() in (".tif", ".tiff"):
            import tifffile

            arr = tifffile.imread(path)
        else:
            with Image.open(path) as im:
                arr = np.array(im)
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise OSError(f"cannot read image {path}: {exc}") from exc
    arr = np.asarray(arr)
    if arr.ndim == 3 and arr.shape[-1] == 4:
        arr = arr[..., :3]
    if arr.ndim not in (2, 3):
        raise OSError(f"unsupported image layout {arr.shape} in {path}")
    return arr.astype(np.float32)


def center_square(image: np.ndarray) -> np.ndarray:
    h, w = image.shape[:2]
    side = min(h, w)
    top, left = (h - side) // 2, (w - side) // 2
    return image[top:top + side, left:left + side]


def preprocess(image: np.ndarray, resolution: int, channels: int = 1) -> np.ndarray:
    """Centre-crop to a square, bilinearly resample to ``resolution`` and
    standardise to zero mean / unit variance.  Returns ``[C, res, res]`` float32."""
    img = center_square(np.asarray(image, dtype=np.float32))
    if img.ndim == 2:
        img = img[None]
    else:
        img = np.moveaxis(img, -1, 0)
    if channels == 1 and img.shape[0] == 3:
        img = img.mean(axis=0, keepdims=True)
    elif channels == 3 and img.shape[0] == 1:
        img = np.repeat(img, 3, axis=0)
    t = torch.from_numpy(np.ascontiguousarray(img, dtype=np.float64))[None]
    if t.shape[-1] != resolution:
        t = F.interpolate(t, size=(resolution, resolution), mode="bilinear",
                          align_corners=False, antialias=t.shape[-1] > resolution)
    out = t[0].numpy()
    out = out - out.mean()
    out = out / math.sqrt(max(out.var(), VARIANCE_FLOOR))
    return out.astype(np.float32)


def hflip(image):
    return image.flip(-1) if isinstance(image, torch.Tensor) else image[..., ::-1].copy()


def vflip(image):
    return image.flip(-2) if isinstance(image, torch.Tensor) else image[..., ::-1, :].copy()


def rotate(image: torch.Tensor, degrees: float) -> torch.Tensor:
    """Rotate ``[C, H, W]`` about its centre with reflect padding."""
    theta = math.radians(degrees)
    c, s = math.cos(theta), math.sin(theta)
    mat = torch.tensor([[c, -s, 0.0], [s, c, 0.0]], dtype=image.dtype)[None]
    grid = F.affine_grid(mat, [1, *image.shape], align_corners=False)
    return F.grid_sample(image[None], grid, mode="bilinear", padding_mode="reflection",
                         align_corners=False)[0]


def augment(image, seed: int, cfg: AugmentConfig | None = None):
    """Random flips, additive brightness shift and small rotation.

    Deterministic in ``seed``; accepts and returns numpy arrays or tensors of
    shape ``[C, H, W]``.
    """
    cfg = cfg or AugmentConfig()
    as_numpy = not isinstance(image, torch.Tensor)
    x = torch.as_tensor(np.asarray(image)) if as_numpy else image
    rng = np.random.default_rng(seed)
    do_h, do_v, shift, angle = rng.random(), rng.random(), rng.uniform(-1, 1), rng.uniform(-1, 1)
    if do_h < cfg.hflip_p:
        x = hflip(x)
    if do_v < cfg.vflip_p:
        x = vflip(x)
    if cfg.brightness:
        x = x + shift * cfg.brightness * x.std()
    if cfg.rotation_deg:
        x = rotate(x, angle * cfg.rotation_deg)
    return x.numpy() if as_numpy else x


def augment_batch(images: torch.Tensor, seed: int, cfg: AugmentConfig | None = None) -> torch.Tensor:
    """Augment ``[N, C, H, W]``; image ``i`` uses substream ``seed + i``."""
    return torch.stack([augment(img, seed + i, cfg) for i, img in enumerate(images)])
