"""Command-line entry point: ``atpmil {synth,train,eval,predict,config}``."""

from __future__ import annotations

import argparse
import csv
import glob
import logging
import sys
from pathlib import Path

from .config import ConfigError, RunConfig, apply_overrides, dump_config, load_config
from .model import CheckpointError

log = logging.getLogger("atpmil")


def _resolve(args, seed_sections=()) -> RunConfig:
    cfg = load_config(args.config)
    overrides = list(args.set or [])
    if getattr(args, "seed", None) is not None:
        overrides += [f"{s}.seed={args.seed}" for s in seed_sections]
    return apply_overrides(cfg, overrides) if overrides else cfg


def cmd_synth(args) -> int:
    from .data.synth import synthesize_dataset

    if args.n < 1:
        raise ConfigError("n must be ≥ 1")
    cfg = _resolve(args, ("synth",))
    out = Path(args.out)
    manifest = synthesize_dataset(args.n, cfg.synth, out, clutter_scale=args.clutter_scale)
    dump_config(cfg, out / "config.yaml")
    print(out / "manifest.csv")
    log.info("wrote %d wells", len(manifest))
    return 0


def cmd_train(args) -> int:
    from .data.manifest import load_manifest
    from .engine import train

    cfg = _resolve(args, ("train", "sampler"))
    train_m = load_manifest(args.train)
    val_m = load_manifest(args.val) if args.val else None
    result = train(train_m, val_m, cfg, args.out, progress=not args.quiet)
    best = result.history[result.best_epoch]["val_mae"]
    print(f"best epoch {result.best_epoch} val_mae={best:.6g} -> {result.best_checkpoint}")
    return 0


def cmd_eval(args) -> int:
    from .data.manifest import load_manifest
    from .engine import evaluate

    manifest = load_manifest(args.data)
    report = evaluate(args.ckpt, manifest)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    report.to_json(out)
    report.per_sample_csv(out.with_suffix(".csv"))
    rho = "nan" if report.pearson is None else f"{report.pearson:.6f}"
    print(f"MAE={report.mae:.6f} PEARSON={rho}")
    return 0


def cmd_predict(args) -> int:
    from .engine import predict

    paths = sorted(glob.glob(args.images, recursive=True))
    if not paths:
        print(f"error: no images match {args.images!r}", file=sys.stderr)
        return 1
    results = predict(args.ckpt, paths)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    failures = 0
    with out.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_path", "atp_estimate", "error"])
        for path, estimate, error in results:
            failures += error is not None
            writer.writerow([path, "" if estimate is None else repr(estimate), error or ""])
    if failures:
        print(f"warning: {failures} of {len(results)} images could not be read", file=sys.stderr)
    return 0


def cmd_config(args) -> int:
    import yaml

    cfg = _resolve(args)
    sys.stdout.write(yaml.safe_dump(cfg.to_dict(), sort_keys=False))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="atpmil", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=True):
        p.add_argument("--config", help="YAML run configuration")
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                       help="override a config field (repeatable; wins over --config)")
        if seed:
            p.add_argument("--seed", type=int)

    p = sub.add_parser("synth", help="generate a synthetic well dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--clutter-scale", type=float, default=1.0,
                   help="multiply vacuole/impurity counts (organoids unchanged)")
    common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--train", required=True)
    p.add_argument("--val")
    p.add_argument("--out", required=True)
    p.add_argument("--quiet", action="store_true")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a manifest")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="report JSON; per-sample CSV goes next to it")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="predict ATP for images")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--images", required=True, help="glob pattern")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("config", help="print the resolved configuration")
    common(p, seed=False)
    p.set_defaults(func=cmd_config)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CheckpointError as exc:
        print(f"error: checkpoint mismatch: {exc}", file=sys.stderr)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
