"""Synthetic well images with an exact ATP oracle.

Each well is a bright disc on a dark background holding textured organoids
(discs whose texture contrast grows with their viability), vacuole rings and
small bright impurity specks.  Only organoids carry ATP:

    atp = atp_per_area * sum_k pixel_area_k * viability_k

The random streams for organoids, clutter and pixel noise are independent
children of the well seed, so changing the clutter density leaves organoids,
noise and the oracle value untouched.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Any

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

from ..config import SynthConfig
from .manifest import DatasetManifest, WellSample, write_manifest

BACKGROUND = 0.04
WELL_LEVEL = 0.22
WELL_FRACTION = 0.46  # well radius / image size
PLACEMENT_TRIES = 200


def _disk(size: int, cy: float, cx: float, r: float):
    """Boolean disc mask restricted to its bounding box: ``(slices, mask)``."""
    y0, y1 = max(0, int(math.floor(cy - r))), min(size, int(math.ceil(cy + r)) + 1)
    x0, x1 = max(0, int(math.floor(cx - r))), min(size, int(math.ceil(cx + r)) + 1)
    yy, xx = np.mgrid[y0:y1, x0:x1]
    d2 = (yy - cy) ** 2 + (xx - cx) ** 2
    return (slice(y0, y1), slice(x0, x1)), d2, d2 <= r * r


def disk_area(size: int, cy: float, cx: float, r: float) -> int:
    return int(_disk(size, cy, cx, r)[2].sum())


def _place(rng, radius, well_c, well_r, taken, margin=2.0):
    lim = well_r - radius - margin
    if lim <= 0:
        return None
    for _ in range(PLACEMENT_TRIES):
        rho = lim * math.sqrt(rng.random())
        phi = 2 * math.pi * rng.random()
        cy, cx = well_c + rho * math.sin(phi), well_c + rho * math.cos(phi)
        if all((cy - y) ** 2 + (cx - x) ** 2 >= (radius + r + margin) ** 2 for y, x, r in taken):
            return cy, cx
    return None


def _count(rng, lo, hi, scale=1.0):
    return int(round(int(rng.integers(lo, hi + 1)) * scale))


def sample_objects(cfg: SynthConfig, seed: int, clutter_scale: float = 1.0) -> dict[str, list[dict]]:
    org_ss, clutter_ss, _ = np.random.SeedSequence(seed).spawn(3)
    org_rng, clutter_rng = np.random.default_rng(org_ss), np.random.default_rng(clutter_ss)
    size = cfg.image_size
    well_c, well_r = (size - 1) / 2, WELL_FRACTION * size

    lo, hi = cfg.n_organoids
    k = int(np.clip(org_rng.geometric(cfg.organoid_p) - 1 + lo, lo, hi))
    taken: list[tuple[float, float, float]] = []
    organoids = []
    for _ in range(k):
        r = float(org_rng.uniform(*cfg.radius))
        v = float(org_rng.uniform(*cfg.viability))
        pos = _place(org_rng, r, well_c, well_r, taken)
        if pos is None:
            continue
        taken.append((*pos, r))
        organoids.append({"type": "organoid", "center": [pos[0], pos[1]], "radius": r, "viability": v,
                          "texture_seed": int(org_rng.integers(2**31)),
                          "area_px": disk_area(size, pos[0], pos[1], r)})

    clutter = []
    for kind, counts, radii in (("vacuole", cfg.n_vacuoles, cfg.vacuole_radius),
                                ("impurity", cfg.n_impurities, cfg.impurity_radius)):
        for _ in range(_count(clutter_rng, *counts, scale=clutter_scale)):
            r = float(clutter_rng.uniform(*radii))
            # clutter may touch other clutter but never an organoid
            pos = _place(clutter_rng, r, well_c, well_r, taken[:len(organoids)], margin=2.0)
            if pos is not None:
                clutter.append({"type": kind, "center": [pos[0], pos[1]], "radius": r})
    return {"organoids": organoids, "clutter": clutter}


def oracle_atp(organoids: list[dict], atp_per_area: float) -> float:
    return float(atp_per_area * sum(o["area_px"] * o["viability"] for o in organoids))


def render_well(size: int, organoids: list[dict], clutter: list[dict], noise_sigma: float,
                noise_rng: np.random.Generator | None) -> np.ndarray:
    """Render objects into a float image in ``[0, 1]``."""
    yy, xx = np.mgrid[0:size, 0:size]
    well_c, well_r = (size - 1) / 2, WELL_FRACTION * size
    d = np.sqrt((yy - well_c) ** 2 + (xx - well_c) ** 2)
    well = np.clip(well_r - d + 0.5, 0.0, 1.0)  # anti-aliased edge
    level = WELL_LEVEL * (1.0 - 0.15 * (d / well_r) ** 2)
    img = BACKGROUND + well * (level - BACKGROUND)

    for o in clutter:
        (sy, sx), d2, mask = _disk(size, *o["center"], o["radius"])
        r = o["radius"]
        if o["type"] == "vacuole":
            dist = np.sqrt(d2)
            ring = np.clip(1.5 - np.abs(dist - r + 1.0), 0.0, 1.0)
            img[sy, sx] += np.where(mask, 0.03, 0.0) - 0.10 * ring
        else:
            img[sy, sx] += np.where(mask, 0.5, 0.0)

    for o in organoids:
        (sy, sx), d2, mask = _disk(size, *o["center"], o["radius"])
        tex_rng = np.random.default_rng(o["texture_seed"])
        tex = gaussian_filter(tex_rng.standard_normal(mask.shape), 2.0)
        tex = np.clip(tex / (tex.std() + 1e-12), -2.0, 2.0) / 2.0
        v = o["viability"]
        dist = np.sqrt(d2)
        rim = np.clip(1.5 - np.abs(dist - o["radius"] + 1.0), 0.0, 1.0) * mask
        body = 0.04 * tex + v * (0.35 + 0.15 * tex)
        img[sy, sx] += np.where(mask, body, 0.0) - 0.06 * rim

    if noise_sigma and noise_rng is not None:
        img = img + noise_rng.normal(0.0, noise_sigma, img.shape)
    return np.clip(img, 0.0, 1.0)


def synthesize_well(cfg: SynthConfig, seed: int, clutter_scale: float = 1.0):
    """Return ``(image uint16[H, W], atp, metadata)`` for one well."""
    objects = sample_objects(cfg, seed, clutter_scale)
    noise_rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(3)[2])
    img = render_well(cfg.image_size, objects["organoids"], objects["clutter"], cfg.noise_sigma, noise_rng)
    image = np.round(img * 65535).astype(np.uint16)
    atp = oracle_atp(objects["organoids"], cfg.atp_per_area)
    meta: dict[str, Any] = {
        "seed": int(seed),
        "atp": atp,
        "atp_per_area": cfg.atp_per_area,
        "clutter_scale": clutter_scale,
        "objects": objects["organoids"] + objects["clutter"],
    }
    return image, atp, meta


def well_seed(base_seed: int, index: int, attempt: int = 0) -> int:
    return int(np.random.SeedSequence([base_seed, index, attempt]).generate_state(1)[0])


def synthesize_dataset(n: int, cfg: SynthConfig, out_dir: str | Path,
                       clutter_scale: float = 1.0) -> DatasetManifest:
    """Write ``n`` wells (16-bit PNG + JSON sidecar) and ``manifest.csv`` into ``out_dir``.

    Wells whose oracle ATP exceeds ``cfg.atp_max`` are redrawn with the next
    attempt seed.  The accepted seeds depend only on the organoids, so calling
    again with a different ``clutter_scale`` reproduces the same organoids.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    samples = []
    for i in range(n):
        for attempt in range(1000):
            seed = well_seed(cfg.seed, i, attempt)
            image, atp, meta = synthesize_well(cfg, seed, clutter_scale)
            if atp <= cfg.atp_max:
                break
        else:
            raise RuntimeError(f"could not draw well {i} with ATP <= {cfg.atp_max}; check SynthConfig")
        name = f"well_{i:05d}"
        Image.fromarray(image).save(out / f"{name}.png")
        (out / f"{name}.json").write_text(json.dumps(meta, indent=1), encoding="utf-8")
        group = f"g{i // cfg.group_size:04d}" if cfg.group_size else None
        samples.append(WellSample(out / f"{name}.png", atp, group))
    manifest = DatasetManifest(samples, cfg.atp_max)
    write_manifest(manifest, out / "manifest.csv")
    return manifest
