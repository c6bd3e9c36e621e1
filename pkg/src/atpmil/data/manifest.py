"""CSV manifests: ``image_path,atp[,group_id]``.

Relative image paths are resolved against the manifest's directory.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class WellSample:
    image_path: Path
    atp: float
    group_id: str | None = None


@dataclass
class DatasetManifest:
    samples: list[WellSample]
    atp_max: float = field(default=0.0)

    def __post_init__(self):
        if not self.samples:
            raise ManifestError("manifest is empty")
        top = max(s.atp for s in self.samples)
        if not self.atp_max:
            self.atp_max = top
        elif top > self.atp_max:
            raise ManifestError(f"sample ATP {top} exceeds manifest atp_max {self.atp_max}")

    def __len__(self):
        return len(self.samples)

    def __getitem__(self, i):
        return self.samples[i]

    @property
    def atp(self) -> list[float]:
        return [s.atp for s in self.samples]

    @property
    def has_groups(self) -> bool:
        return any(s.group_id for s in self.samples)

    def subset(self, indices) -> "DatasetManifest":
        return DatasetManifest([self.samples[i] for i in indices], self.atp_max)


def load_manifest(path: str | Path, check_files: bool = True) -> DatasetManifest:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"manifest not found: {path}")
    root = path.parent
    samples = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        if "image_path" not in header or "atp" not in header:
            raise ManifestError(f"{path}: header must contain image_path,atp (got {header})")
        for row_no, row in enumerate(reader, start=2):
            raw_path = (row.get("image_path") or "").strip()
            if not raw_path:
                raise ManifestError(f"{path}: row {row_no}: empty image_path")
            try:
                atp = float(row["atp"])
            except (TypeError, ValueError):
                raise ManifestError(f"{path}: row {row_no}: atp {row.get('atp')!r} is not a number") from None
            if not math.isfinite(atp) or atp < 0:
                raise ManifestError(f"{path}: row {row_no}: atp must be non-negative, got {atp}")
            image_path = Path(raw_path)
            if not image_path.is_absolute():
                image_path = root / image_path
            if check_files and not image_path.is_file():
                raise ManifestError(f"{path}: row {row_no}: image not found: {image_path}")
            group = (row.get("group_id") or "").strip() or None
            samples.append(WellSample(image_path, atp, group))
    if not samples:
        raise ManifestError(f"{path}: manifest has no rows")
    return DatasetManifest(samples)


def write_manifest(manifest: DatasetManifest, path: str | Path) -> Path:
    """Write ``manifest`` as CSV; paths under the manifest directory are made relative."""
    path = Path(path)
    root = path.parent.resolve()
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_path", "atp", "group_id"])
        for s in manifest.samples:
            p = Path(s.image_path)
            try:
                p = p.resolve().relative_to(root)
            except ValueError:
                pass
            writer.writerow([p.as_posix(), repr(float(s.atp)), s.group_id or ""])
    return path
