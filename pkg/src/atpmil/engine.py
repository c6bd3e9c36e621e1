"""Training loop, metrics, evaluation and batch prediction."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import torch

from .config import RunConfig, TrainConfig, dump_config
from .data.imaging import augment_batch, load_image, preprocess
from .data.manifest import DatasetManifest
from .data.sampler import balanced_batches, random_batches, stratified_split
from .loss import composite_loss, position_weights
from .model import ATPNet, build_model, load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)

HISTORY_FIELDS = ["epoch", "lr", "loss_total", "loss_cls", "loss_reg", "val_mae"]


class NonFiniteLossError(FloatingPointError):
    def __init__(self, epoch: int, batch: Sequence[int], dump_path: Path | None):
        self.epoch, self.batch, self.dump_path = epoch, list(batch), dump_path
        super().__init__(f"non-finite loss at epoch {epoch} on samples {self.batch} (dump: {dump_path})")


# --------------------------------------------------------------------------
# schedule and metrics
# --------------------------------------------------------------------------


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    return max(cfg.lr * cfg.lr_decay_factor ** (epoch // cfg.lr_decay_period), cfg.lr_floor)


def mae(pred: Sequence[float], truth: Sequence[float]) -> float:
    pred, truth = np.asarray(pred, dtype=np.float64), np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape or pred.size == 0:
        raise ValueError("MAE needs two non-empty sequences of equal length")
    return float(np.abs(pred - truth).mean())


def pearson(x: Sequence[float], y: Sequence[float]) -> float | None:
    """Pearson correlation, or ``None`` when undefined (n < 2 or zero variance)."""
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError("pearson needs sequences of equal length")
    if x.size < 2:
        return None
    dx, dy = x - x.mean(), y - y.mean()
    denom = math.sqrt(float((dx * dx).sum()) * float((dy * dy).sum()))
    if denom == 0.0:
        return None
    return float(np.clip((dx * dy).sum() / denom, -1.0, 1.0))


@dataclass
class EvalReport:
    mae: float
    pearson: float | None
    per_group_pearson: dict[str, float | None] = field(default_factory=dict)
    per_sample: list[dict] = field(default_factory=list)  # id, truth, prediction, abs_error

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2), encoding="utf-8")

    def per_sample_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=["id", "group_id", "truth", "prediction", "abs_error"])
            writer.writeheader()
            writer.writerows(self.per_sample)


def report_from_predictions(ids, truths, preds, groups=None) -> EvalReport:
    groups = list(groups) if groups is not None else [None] * len(ids)
    rows = [
        {"id": str(i), "group_id": g, "truth": float(t), "prediction": float(p), "abs_error": abs(float(p) - float(t))}
        for i, t, p, g in zip(ids, truths, preds, groups)
    ]
    per_group = {}
    for g in sorted({g for g in groups if g}):
        sel = [(r["prediction"], r["truth"]) for r in rows if r["group_id"] == g]
        per_group[g] = pearson([p for p, _ in sel], [t for _, t in sel])
    return EvalReport(mae(preds, truths), pearson(preds, truths), per_group, rows)


# --------------------------------------------------------------------------
# data plumbing
# --------------------------------------------------------------------------


def load_images(paths: Iterable[Path], cfg: RunConfig) -> torch.Tensor:
    res, ch = cfg.model.input_resolution, cfg.model.in_channels
    return torch.from_numpy(np.stack([preprocess(load_image(p), res, ch) for p in paths]))


@torch.no_grad()
def predict_tensor(model: ATPNet, images: torch.Tensor, batch_size: int = 32) -> np.ndarray:
    was_training = model.training
    model.eval()
    out = [model(images[i:i + batch_size]).atp_estimate for i in range(0, len(images), batch_size)]
    model.train(was_training)
    return torch.cat(out).double().numpy()


def _seed_everything(seed: int):
    torch.manual_seed(seed)
    np.random.seed(seed % 2**32)


# --------------------------------------------------------------------------
# training
# --------------------------------------------------------------------------


@dataclass
class TrainResult:
    best_checkpoint: Path
    last_checkpoint: Path
    history: list[dict]
    best_epoch: int


def train(train_manifest: DatasetManifest, val_manifest: DatasetManifest | None, cfg: RunConfig,
          out_dir: str | Path, progress: bool = False) -> TrainResult:
    """Train a model; writes ``best.ckpt``, ``last.ckpt``, ``history.csv`` and
    ``config.yaml`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, out / "config.yaml")
    tc = cfg.train

    top = max(train_manifest.atp + (val_manifest.atp if val_manifest else []))
    if top >= cfg.codec.capacity or top > cfg.codec.atp_max:
        raise ValueError(f"codec (atp_max={cfg.codec.atp_max}, capacity={cfg.codec.capacity}) "
                         f"does not cover ATP value {top}")

    if val_manifest is None:
        tr_idx, va_idx = stratified_split(train_manifest.atp, tc.val_fraction, cfg.sampler_r_bin, tc.seed)
        train_manifest, val_manifest = train_manifest.subset(tr_idx), train_manifest.subset(va_idx)

    _seed_everything(tc.seed)
    model = build_model(cfg)
    opt = torch.optim.Adam(model.parameters(), lr=tc.lr)

    train_x = load_images((s.image_path for s in train_manifest.samples), cfg)
    train_y = np.asarray(train_manifest.atp)
    val_x = load_images((s.image_path for s in val_manifest.samples), cfg)
    val_y = np.asarray(val_manifest.atp)

    bs = cfg.sampler.batch_size
    if cfg.sampler.balanced:
        stream = balanced_batches(train_y, bs, cfg.sampler_r_bin, cfg.sampler.seed)
    else:
        stream = random_batches(len(train_y), bs, cfg.sampler.seed)
    steps = tc.batches_per_epoch or math.ceil(len(train_y) / bs)

    history: list[dict] = []
    best_mae, best_epoch = math.inf, -1
    for epoch in range(tc.epochs):
        lr = lr_at(epoch, tc)
        for group in opt.param_groups:
            group["lr"] = lr
        weights = weights_for_epoch(epoch, cfg)
        model.train()
        sums = np.zeros(3)
        for step in range(steps):
            idx = next(stream)
            x = train_x[idx]
            if cfg.augment.enabled:
                x = augment_batch(x, _augment_seed(tc.seed, epoch, step), cfg.augment)
            pred = model(x)
            terms = composite_loss(pred.bits, pred.fraction, train_y[idx], epoch, cfg.loss, cfg.codec,
                                   weights=weights)
            if not torch.isfinite(terms.total):
                raise NonFiniteLossError(epoch, idx, _dump_batch(out, epoch, idx, train_manifest, terms))
            opt.zero_grad(set_to_none=True)
            terms.total.backward()
            opt.step()
            sums += [terms.total.item(), terms.cls.item(), terms.reg.item()]
        val_pred = predict_tensor(model, val_x, tc.eval_batch_size)
        val_mae = mae(val_pred, val_y)
        row = {"epoch": epoch, "lr": lr, "loss_total": sums[0] / steps, "loss_cls": sums[1] / steps,
               "loss_reg": sums[2] / steps, "val_mae": val_mae, "weights": weights.tolist()}
        history.append(row)
        _write_history(history, out / "history.csv")
        if val_mae < best_mae:
            best_mae, best_epoch = val_mae, epoch
            save_checkpoint(out / "best.ckpt", model, cfg, epoch=epoch, val_mae=val_mae)
        msg = "epoch %3d lr %.2e loss %.5f (cls %.5f reg %.5f) val_mae %.1f"
        (log.info if not progress else print)(msg % (epoch, lr, row["loss_total"], row["loss_cls"],
                                                     row["loss_reg"], val_mae))
    save_checkpoint(out / "last.ckpt", model, cfg, epoch=tc.epochs - 1, val_mae=history[-1]["val_mae"])
    return TrainResult(out / "best.ckpt", out / "last.ckpt", history, best_epoch)


def weights_for_epoch(epoch: int, cfg: RunConfig) -> np.ndarray:
    """Position weights the training loop applies at ``epoch``."""
    return position_weights(epoch, cfg.loss, cfg.codec.code_dim)


def _augment_seed(seed: int, epoch: int, step: int) -> int:
    return int(np.random.SeedSequence([seed, epoch, step]).generate_state(1)[0]) & 0x7FFFFFFF


def _dump_batch(out: Path, epoch, idx, manifest, terms) -> Path:
    path = out / f"nonfinite_epoch{epoch}.json"
    path.write_text(json.dumps({
        "epoch": epoch,
        "batch_indices": list(idx),
        "images": [str(manifest[i].image_path) for i in idx],
        "atp": [manifest[i].atp for i in idx],
        "loss": [t.item() for t in terms],
    }, indent=2), encoding="utf-8")
    return path


def _write_history(history: list[dict], path: Path):
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=HISTORY_FIELDS, extrasaction="ignore")
        writer.writeheader()
        writer.writerows(history)


# --------------------------------------------------------------------------
# evaluation / prediction
# --------------------------------------------------------------------------


def _as_model(checkpoint) -> tuple[ATPNet, RunConfig]:
    if isinstance(checkpoint, (str, Path)):
        model, cfg, _ = load_checkpoint(checkpoint)
        return model, cfg
    return checkpoint


def evaluate(checkpoint, manifest: DatasetManifest) -> EvalReport:
    """Score a checkpoint (path, or ``(model, cfg)``) on ``manifest``."""
    model, cfg = _as_model(checkpoint)
    images = load_images((s.image_path for s in manifest.samples), cfg)
    preds = predict_tensor(model, images, cfg.train.eval_batch_size)
    return report_from_predictions(
        [str(s.image_path) for s in manifest.samples], manifest.atp, preds,
        [s.group_id for s in manifest.samples],
    )


def predict(checkpoint, image_paths: Sequence[str | Path]) -> list[tuple[str, float | None, str | None]]:
    """Return ``(path, estimate, error)`` per image; unreadable files get an
    error message instead of an estimate."""
    model, cfg = _as_model(checkpoint)
    results = []
    for path in image_paths:
        try:
            x = torch.from_numpy(preprocess(load_image(path), cfg.model.input_resolution, cfg.model.in_channels))
        except OSError as exc:
            results.append((str(path), None, str(exc)))
            continue
        results.append((str(path), float(predict_tensor(model, x[None])[0]), None))
    return results
