"""Command-line entry point: ``empir <command> [--config FILE] [overrides]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from ..attacks import run_attack
from ..ensemble import Empir
from ..overhead import HardwareProfile
from ..quant import QuantConfig
from . import experiments as ex
from .checkpoint import Checkpoint
from .config import ExperimentConfig, load_config, validate
from .training import train_model

COMMANDS = (
    "train", "train-adv", "eval", "attack", "table", "sweep-precision",
    "sweep-mn", "sweep-strength", "confusion", "overhead",
)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="key = value experiment config")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", dest="out_dir", help="output directory")
    common.add_argument("--data", dest="data_dir", help="dataset directory")
    common.add_argument("--dataset", choices=["mnist", "cifar10"])
    common.add_argument("--arch", choices=["desk-small", "mnistconv", "cifarconv"])
    common.add_argument("--wbits", help="weight bits, or FP")
    common.add_argument("--abits", help="activation bits, or FP")
    common.add_argument("--attack", help="cw | fgsm | bim | pgd")
    common.add_argument("--eps", type=float)
    common.add_argument("--alpha", type=float)
    common.add_argument("--iters", type=int)
    common.add_argument("--epochs", type=int)
    common.add_argument("--test-subset", type=int, dest="test_subset")
    common.add_argument("--train-subset", type=int, dest="train_subset")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="empir", description="Mixed-precision ensemble robustness toolkit.")
    sub = p.add_subparsers(dest="command", required=True)
    for name, text in (("train", "train one model (or every configured model)"),
                       ("train-adv", "FGSM adversarial training of one model (or every configured model)")):
        s = sub.add_parser(name, parents=[common], help=text)
        s.add_argument("--ensemble", action="store_true", help="train the baseline and every ensemble member")
        s.add_argument("--checkpoint", type=Path, help="explicit output path")
    s = sub.add_parser("eval", parents=[common], help="clean accuracy of a checkpoint or of baseline + EMPIR")
    s.add_argument("--checkpoint", type=Path)
    s = sub.add_parser("attack", parents=[common], help="adversarial accuracy under one attack")
    s.add_argument("--checkpoint", type=Path, help="attack this model instead of the configured ensemble")
    s.add_argument("--save", type=Path, help="write adversarial images to this .npy file")
    for name in ("table", "sweep-precision", "sweep-mn", "sweep-strength"):
        sub.add_parser(name, parents=[common])
    s = sub.add_parser("confusion", parents=[common])
    s = sub.add_parser("overhead", parents=[common], help="time/storage overhead of an ensemble shape")
    s.add_argument("--members", help="comma-separated precisions, e.g. FP,w2a4,w4a4")
    s.add_argument("--profile", type=Path, help="hardware profile file")
    s.add_argument("--native-4bit", action="store_true", help="use the built-in native-4-bit profile")
    return p


def resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    keys = ("seed", "out_dir", "data_dir", "dataset", "arch", "wbits", "abits", "eps", "alpha", "iters",
            "epochs", "test_subset", "train_subset")
    cfg = cfg.updated(**{k: getattr(args, k, None) for k in keys})
    if getattr(args, "attack", None):
        cfg = cfg.updated(attacks=args.attack.split(","), confusion_attack=args.attack.split(",")[0])
    if getattr(args, "members", None):
        cfg = cfg.updated(members=args.members.split(","))
    if getattr(args, "profile", None):
        cfg = cfg.updated(profile=str(args.profile))
    validate(cfg)
    return cfg


def _emit(obj) -> None:
    print(json.dumps(obj, sort_keys=True))


def _train(cfg: ExperimentConfig, args, adv: bool) -> None:
    train = ex.load_train(cfg)
    test = ex.load_test(cfg)
    if args.ensemble:
        jobs = [(None, cfg.baseline_seed)] + list(zip(cfg.member_quants, cfg.member_seeds))
    else:
        jobs = [(cfg.quant, cfg.seed)]
    for q, seed in jobs:
        q = None if q is None or q.is_full_precision else q
        path = args.checkpoint if (args.checkpoint and not args.ensemble) else ex.checkpoint_path(cfg, q, seed, adv)
        if path.exists() and args.ensemble:
            _emit({"checkpoint": str(path), "status": "exists"})
            continue
        result = train_model(train, arch=cfg.arch, quant=q, seed=seed, epochs=cfg.epochs,
                             batch_size=cfg.batch_size, lr=cfg.lr, adv_eps=cfg.adv_eps if adv else None)
        acc = ex.clean_accuracy(result.graph, test.images, test.labels)
        result.checkpoint({"arch": cfg.arch, "seed": seed, "test_accuracy": acc,
                           "adv_eps": cfg.adv_eps if adv else None}).save(path)
        _emit({"checkpoint": str(path), "quant": (q or QuantConfig()).label(), "seed": seed, "test_accuracy": acc})


def _target(cfg: ExperimentConfig, checkpoint: Path | None):
    if checkpoint is not None:
        return str(checkpoint), Checkpoint.load(checkpoint).to_graph()
    return "empir", ex.load_empir(cfg)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = resolve_config(args)
        cmd = args.command
        if cmd in ("train", "train-adv"):
            _train(cfg, args, adv=cmd == "train-adv")
        elif cmd == "eval":
            test = ex.load_test(cfg)
            if args.checkpoint:
                models = [_target(cfg, args.checkpoint)]
            else:
                models = [("baseline", ex.load_baseline(cfg)), _target(cfg, None)]
            for name, m in models:
                _emit({"model": name, "clean_accuracy": ex.clean_accuracy(m, test.images, test.labels),
                       "examples": len(test)})
        elif cmd == "attack":
            test = ex.load_test(cfg)
            name, model = _target(cfg, args.checkpoint)
            spec = ex.attack_spec(cfg, cfg.confusion_attack)
            x_adv = run_attack(model, test.images, test.labels, spec)
            if args.save:
                np.save(args.save, x_adv)
            acc = float(np.mean(model.predict(x_adv) == test.labels))
            _emit({"model": name, "attack": repr(spec), "adversarial_accuracy": acc, "examples": len(test)})
        elif cmd == "table":
            for r in ex.run_robustness_table(cfg):
                _emit({"model": r.model, "unperturbed": r.unperturbed, **r.attacks, "average": r.average})
        elif cmd == "sweep-precision":
            ex.run_precision_sweep(cfg)
        elif cmd == "sweep-mn":
            ex.run_mn_sweep(cfg)
        elif cmd == "sweep-strength":
            ex.run_strength_sweep(cfg)
        elif cmd == "confusion":
            ex.emit_confusion(cfg)
        elif cmd == "overhead":
            if args.native_4bit:
                profile = HardwareProfile.native_4bit()
            elif cfg.profile:
                profile = HardwareProfile.load(cfg.profile)
            else:
                profile = HardwareProfile.linear()
            (name, t, s, ok), = ex.overhead_rows({",".join(cfg.members): cfg.member_quants}, profile)
            _emit({"members": name, "time_overhead": t, "storage_overhead": s, "admissible": bool(ok)})
        if cmd not in ("eval", "attack", "table", "overhead", "train", "train-adv"):
            print(f"wrote reports to {cfg.out_dir}")
    except (FileNotFoundError, ValueError, KeyError) as exc:
        print(f"empir {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
