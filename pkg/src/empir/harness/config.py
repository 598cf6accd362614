"""Experiment configuration: flat ``key = value`` text, arrays comma-separated.

Recognized keys (defaults in parentheses)::

    arch                desk-small | mnistconv | cifarconv      (desk-small)
    dataset             mnist | cifar10                         (mnist)
    data_dir            directory holding the raw dataset files (data/mnist)
    out_dir             where checkpoints and reports go         (runs)
    seed                base seed for single-model commands      (0)
    epochs              training epochs                          (10)
    batch_size          minibatch size                           (128)
    lr                  Adam learning rate                       (0.001)
    train_subset        use only the first n training images    (all)
    test_subset         evaluate on the first n test images     (all)
    wbits, abits        precision of a single trained model      (FP)
    members             ensemble member precisions, e.g. FP,w2a4,w4a4
    member_seeds        one distinct seed per member             (11,12,13)
    combiner            maxvote | averaging                      (by size)
    baseline_seed       seed of the FP baseline                  (1)
    baseline_checkpoint path to the FP baseline checkpoint
    member_checkpoints  paths to ensemble member checkpoints
    model_checkpoints   extra single models to report
    attacks             subset of cw,fgsm,bim,pgd                (cw,fgsm,bim,pgd)
    eps, alpha, iters   override the table's attack parameters
    cw_lr, cw_c, cw_search_steps, cw_confidence   CW knobs      (0.01, 1.0, 3, 0)
    pgd_seed            PGD random-start seed                    (0)
    adv_eps             FGSM adversarial-training eps            (0.3)
    adv_train           train members adversarially (0/1)        (0)
    precision_grid      bit-widths for the precision sweep       (2,4,8,FP)
    lp_configs          LP precisions for the M/N sweep          (w2a4,w4a4,w2a2)
    fp_seeds            FP seeds for the M/N sweep               (1,2,3)
    lp_seeds            LP seeds for the M/N sweep               (21,22,23)
    fgsm_eps_grid       strength sweep eps values                (0.1..0.8)
    cw_iters_grid       strength sweep CW iteration counts       (10,30,50,70,90)
    confusion_attack    attack used by the confusion command     (fgsm)
    profile             hardware profile file for overheads      (linear model)
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from ..quant import QuantConfig


def _list(text: str) -> list[str]:
    return [t.strip() for t in str(text).split(",") if t.strip()]


@dataclass
class ExperimentConfig:
    arch: str = "desk-small"
    dataset: str = "mnist"
    data_dir: str = "data/mnist"
    out_dir: str = "runs"
    seed: int = 0
    epochs: int = 10
    batch_size: int = 128
    lr: float = 1e-3
    train_subset: int | None = None
    test_subset: int | None = None
    wbits: str = "FP"
    abits: str = "FP"
    members: list[str] = field(default_factory=lambda: ["FP", "w2a4", "w4a4"])
    member_seeds: list[int] = field(default_factory=lambda: [11, 12, 13])
    combiner: str | None = None
    baseline_seed: int = 1
    baseline_checkpoint: str | None = None
    member_checkpoints: list[str] = field(default_factory=list)
    model_checkpoints: list[str] = field(default_factory=list)
    attacks: list[str] = field(default_factory=lambda: ["cw", "fgsm", "bim", "pgd"])
    eps: float | None = None
    alpha: float | None = None
    iters: int | None = None
    cw_lr: float = 0.01
    cw_c: float = 1.0
    cw_search_steps: int = 3
    cw_confidence: float = 0.0
    pgd_seed: int = 0
    adv_eps: float = 0.3
    adv_train: bool = False
    precision_grid: list[str] = field(default_factory=lambda: ["2", "4", "8", "FP"])
    lp_configs: list[str] = field(default_factory=lambda: ["w2a4", "w4a4", "w2a2"])
    fp_seeds: list[int] = field(default_factory=lambda: [1, 2, 3])
    lp_seeds: list[int] = field(default_factory=lambda: [21, 22, 23])
    fgsm_eps_grid: list[float] = field(default_factory=lambda: [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8])
    cw_iters_grid: list[int] = field(default_factory=lambda: [10, 30, 50, 70, 90])
    confusion_attack: str = "fgsm"
    profile: str | None = None

    # -- derived -------------------------------------------------------------

    @property
    def quant(self) -> QuantConfig:
        return QuantConfig.parse(f"w{self.wbits}a{self.abits}")

    @property
    def member_quants(self) -> list[QuantConfig]:
        return [QuantConfig.parse(m) for m in self.members]

    def canonical_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, list):
                v = ",".join(str(x) for x in v)
            elif v is None:
                v = ""
            elif isinstance(v, bool):
                v = int(v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    def config_hash(self) -> str:
        # paths are excluded so relocating a run does not change its identity
        skip = {"data_dir", "out_dir"}
        text = "".join(l for l in self.canonical_text().splitlines(True) if l.split(" = ")[0] not in skip)
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def all_seeds(self) -> dict[str, object]:
        return {
            "seed": self.seed,
            "baseline_seed": self.baseline_seed,
            "member_seeds": list(self.member_seeds),
            "fp_seeds": list(self.fp_seeds),
            "lp_seeds": list(self.lp_seeds),
            "pgd_seed": self.pgd_seed,
        }

    def updated(self, **kw) -> "ExperimentConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


_FIELD_TYPES = {f.name: f for f in fields(ExperimentConfig)}


def _coerce(name: str, raw: str):
    default = getattr(ExperimentConfig(), name)
    typ = _FIELD_TYPES[name].type
    raw = raw.strip()
    if isinstance(default, list):
        items = _list(raw)
        if "int" in typ:
            return [int(x) for x in items]
        if "float" in typ:
            return [float(x) for x in items]
        return items
    if raw == "" and "None" in typ:
        return None
    if isinstance(default, bool) or typ == "bool":
        return raw.lower() in ("1", "true", "yes", "on")
    if typ.startswith("int"):
        return int(raw)
    if typ.startswith("float"):
        return float(raw)
    return raw


def parse_config(text: str) -> ExperimentConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _FIELD_TYPES:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        values[key] = _coerce(key, val)
    cfg = ExperimentConfig(**values)
    validate(cfg)
    return cfg


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())


def validate(cfg: ExperimentConfig) -> None:
    if len(cfg.member_seeds) < len(cfg.members):
        raise ValueError(f"{len(cfg.members)} members need as many member_seeds, got {len(cfg.member_seeds)}")
    seeds = cfg.member_seeds[: len(cfg.members)]
    if len(set(seeds)) != len(seeds):
        raise ValueError("member_seeds must be pairwise distinct")
    for q in cfg.member_quants:
        q.check_ensemble_member()
    if cfg.epochs < 0:
        raise ValueError("epochs must be >= 0")
