"""Command-line surface.

Subcommands: make-data, train, build-lrb, eval, infer, selftest.  Every
command reads one JSON config (--config), optionally overrides the seed
(--seed), and writes all outputs plus the resolved config under --out.
Exit codes: 0 success, 2 configuration error, 3 numeric failure, 4 data
error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import RunConfig, load_run_config, write_resolved_config
from .data import load_dataset, make_synthetic_dataset, save_dataset
from .errors import (
    ConfigurationError,
    DataError,
    DimensionError,
    NumericsError,
    ReldetError,
    ValidationError,
)

EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_DATA = 4


def _resolved(cfg: RunConfig, base: Path, seed_override) -> RunConfig:
    if seed_override is not None:
        cfg.seed = int(seed_override)
    train = cfg.train.from_dict({**cfg.train.to_dict(), "seed": cfg.seed})
    cfg.train = train
    return cfg


def _require_path(cfg: RunConfig, base: Path, key: str, what: str) -> Path:
    p = cfg.resolve_path(key, base)
    if p is None:
        raise ConfigurationError(f"config paths.{key} required: {what}")
    return p


def _load_data(cfg: RunConfig, base: Path, key: str):
    p = _require_path(cfg, base, key, "a dataset directory")
    if not Path(p).exists():
        raise DataError(f"dataset not found: {p}")
    return load_dataset(p)


def cmd_make_data(cfg: RunConfig, base: Path, out: Path, mode: str) -> int:
    write_resolved_config(cfg, out)
    rng_seeds = {"train": cfg.seed * 2 + 1, "eval": cfg.seed * 2 + 2}
    for split, seed in rng_seeds.items():
        clips = make_synthetic_dataset(cfg.data, seed)
        save_dataset(clips, out / split)
        print(f"{split}: {len(clips)} clips -> {out / split}")
    return 0


def cmd_train(cfg: RunConfig, base: Path, out: Path, mode: str) -> int:
    from .bank import RelationBank
    from .model import RelationDetector
    from .train import train_long, train_short

    write_resolved_config(cfg, out)
    dataset = _load_data(cfg, base, "train_data")
    eval_set = None
    if cfg.paths.get("eval_data"):
        eval_set = _load_data(cfg, base, "eval_data")
    log_path = out / "metrics.jsonl"
    ckpt_path = out / "checkpoint.bin"

    if mode == "short":
        detector = RelationDetector(cfg.model, seed=cfg.seed)
        train_short(detector, dataset, cfg.train, log_path=log_path, eval_set=eval_set)
    elif mode == "long":
        bank_path = cfg.resolve_path("bank", base)
        if bank_path is None or not Path(bank_path).exists():
            raise ConfigurationError(f"bank not found: {bank_path}")
        base_ckpt = cfg.resolve_path("base_checkpoint", base)
        if base_ckpt is None or not Path(base_ckpt).exists():
            raise ConfigurationError(f"base checkpoint not found: {base_ckpt}")
        detector = RelationDetector.load(base_ckpt, seed=cfg.seed)
        bank = RelationBank.load(bank_path)
        train_long(detector, dataset, bank, cfg.train, log_path=log_path)
    else:
        raise ConfigurationError(f"train mode must be 'short' or 'long', got {mode!r}")
    detector.save(ckpt_path, extra_config={"seed": cfg.seed, "mode": mode})
    print(f"checkpoint -> {ckpt_path}")
    return 0


def cmd_build_lrb(cfg: RunConfig, base: Path, out: Path, mode: str) -> int:
    from .model import RelationDetector, build_relation_bank

    write_resolved_config(cfg, out)
    ckpt = _require_path(cfg, base, "checkpoint", "a trained short-term checkpoint")
    if not Path(ckpt).exists():
        raise ConfigurationError(f"checkpoint not found: {ckpt}")
    detector = RelationDetector.load(ckpt, seed=cfg.seed)
    if detector.cfg.num_classes != cfg.model.num_classes:
        raise ConfigurationError(
            f"checkpoint num_classes {detector.cfg.num_classes} != config "
            f"num_classes {cfg.model.num_classes}"
        )
    data_key = "bank_data" if cfg.paths.get("bank_data") else "train_data"
    dataset = _load_data(cfg, base, data_key)
    if not dataset:
        print("warning: empty dataset, writing empty bank", file=sys.stderr)
    bank = build_relation_bank(detector, dataset, config_hash=cfg.config_hash())
    bank_path = out / "bank.bin"
    bank.save(bank_path)
    print(f"bank entries: {len(bank)}")
    print(f"bank -> {bank_path}")
    return 0


def cmd_eval(cfg: RunConfig, base: Path, out: Path, mode: str) -> int:
    from .bank import RelationBank
    from .model import RelationDetector, evaluate_detector

    write_resolved_config(cfg, out)
    ckpt = _require_path(cfg, base, "checkpoint", "a trained checkpoint")
    detector = RelationDetector.load(ckpt, seed=cfg.seed)
    dataset = _load_data(cfg, base, "eval_data")
    bank = None
    if mode == "long":
        bank_path = cfg.resolve_path("bank", base)
        if bank_path is None or not Path(bank_path).exists():
            raise ConfigurationError(f"bank not found: {bank_path}")
        bank = RelationBank.load(bank_path)
    result = evaluate_detector(detector, dataset, bank=bank)
    lines = result.report_lines()
    (out / "eval.txt").write_text("\n".join(lines) + "\n")
    for line in lines:
        print(line)
    return 0


def cmd_infer(cfg: RunConfig, base: Path, out: Path, mode: str) -> int:
    from .bank import RelationBank
    from .model import RelationDetector, run_inference

    write_resolved_config(cfg, out)
    ckpt = _require_path(cfg, base, "checkpoint", "a trained checkpoint")
    detector = RelationDetector.load(ckpt, seed=cfg.seed)
    dataset = _load_data(cfg, base, "eval_data")
    bank = None
    if mode == "long":
        bank_path = cfg.resolve_path("bank", base)
        if bank_path is None or not Path(bank_path).exists():
            raise ConfigurationError(f"bank not found: {bank_path}")
        bank = RelationBank.load(bank_path)
    detections = run_inference(detector, dataset, bank=bank)
    path = out / "detections.jsonl"
    with open(path, "w") as fh:
        for d in detections:
            fh.write(json.dumps({
                "frame_id": d.frame_id,
                "box": d.box.as_list()[:4],
                "class_id": d.class_id,
                "confidence": d.confidence,
            }, sort_keys=True) + "\n")
    print(f"{len(detections)} detections -> {path}")
    return 0


def cmd_selftest() -> int:
    from .selftest import run_all
    return 0 if run_all() else EXIT_NUMERIC


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="reldet",
        description="Relation-support action detection: train, bank, evaluate.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, needs_mode in (("make-data", False), ("train", True),
                             ("build-lrb", False), ("eval", True),
                             ("infer", True)):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--out", required=True, help="output directory")
        if needs_mode:
            p.add_argument("--mode", choices=["short", "long"], default="short")
    sub.add_parser("selftest")
    return parser


_COMMANDS = {
    "make-data": cmd_make_data,
    "train": cmd_train,
    "build-lrb": cmd_build_lrb,
    "eval": cmd_eval,
    "infer": cmd_infer,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "selftest":
            return cmd_selftest()
        cfg, base = load_run_config(args.config)
        cfg = _resolved(cfg, base, args.seed)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        mode = getattr(args, "mode", "short")
        return _COMMANDS[args.command](cfg, base, out, mode)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericsError, DimensionError, ValidationError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ReldetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
