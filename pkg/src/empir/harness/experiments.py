"""Experiment drivers. Each writes one or more CSV reports.

Every report opens with ``#`` metadata lines (config hash, seeds, software
version, preprocessing), followed by a header row and data rows. Floats are
written with ``repr`` so that rerunning an identical config reproduces the
files byte for byte.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .. import __version__
from ..attacks import CW, FGSM, AttackSpec, parse_attack, run_attack
from ..ensemble import Empir, confusion_matrix
from ..overhead import (
    ADMISSIBLE_LIMIT,
    HardwareProfile,
    format_ratio,
    member_bits,
    storage_overhead,
    time_overhead,
)
from ..quant import FULL_PRECISION, QuantConfig
from ..tensor import Graph
from .checkpoint import Checkpoint
from .config import ExperimentConfig
from .data import Dataset, load_dataset
from .training import get_or_train

log = logging.getLogger(__name__)

PREPROCESSING = "pixels scaled to [0,1] by 1/255; no mean subtraction; no augmentation"
ATTACK_ORDER = ("cw", "fgsm", "bim", "pgd")


# -- reports ------------------------------------------------------------------


def _cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def render_report(header: Sequence[str], rows: Iterable[Sequence], meta: dict) -> str:
    buf = io.StringIO()
    for k in sorted(meta):
        v = meta[k]
        text = v if isinstance(v, str) else json.dumps(v, sort_keys=True)
        buf.write(f"# {k}: {text}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_cell(v) for v in r])
    return buf.getvalue()


def write_report(path, header, rows, meta) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(render_report(header, rows, meta))
    return path


def read_report(path) -> tuple[dict, list[dict]]:
    """Parse a report back into (metadata, rows as dicts of strings)."""
    meta, body = {}, []
    for line in Path(path).read_text().splitlines():
        if line.startswith("# "):
            k, _, v = line[2:].partition(": ")
            meta[k] = v
        else:
            body.append(line)
    return meta, list(csv.DictReader(body))


def report_meta(cfg: ExperimentConfig, **extra) -> dict:
    meta = {
        "config_hash": cfg.config_hash(),
        "seeds": cfg.all_seeds(),
        "version": __version__,
        "preprocessing": PREPROCESSING,
        "arch": cfg.arch,
        "dataset": cfg.dataset,
    }
    meta.update(extra)
    return meta


# -- paths and loading ----------------------------------------------------------


def checkpoint_path(cfg: ExperimentConfig, quant: QuantConfig | None, seed: int, adv: bool = False) -> Path:
    label = (quant or FULL_PRECISION).label()
    suffix = "_adv" if adv else ""
    return Path(cfg.out_dir) / "checkpoints" / f"{cfg.arch}_{label}_s{seed}{suffix}.empr"


def _loaded(path) -> Graph:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing checkpoint: {path}")
    return Checkpoint.load(path).to_graph()


def load_test(cfg: ExperimentConfig) -> Dataset:
    return load_dataset(cfg.dataset, cfg.data_dir, "test").subset(cfg.test_subset)


def load_train(cfg: ExperimentConfig) -> Dataset:
    return load_dataset(cfg.dataset, cfg.data_dir, "train").subset(cfg.train_subset)


def baseline_path(cfg: ExperimentConfig) -> Path:
    if cfg.baseline_checkpoint:
        return Path(cfg.baseline_checkpoint)
    return checkpoint_path(cfg, None, cfg.baseline_seed, cfg.adv_train)


def member_paths(cfg: ExperimentConfig) -> list[Path]:
    if cfg.member_checkpoints:
        return [Path(p) for p in cfg.member_checkpoints]
    return [
        checkpoint_path(cfg, q, s, cfg.adv_train)
        for q, s in zip(cfg.member_quants, cfg.member_seeds)
    ]


def load_baseline(cfg: ExperimentConfig):
    return _loaded(baseline_path(cfg))


def load_empir(cfg: ExperimentConfig) -> Empir:
    members = [_loaded(p) for p in member_paths(cfg)]
    seeds = [m.seed for m in members]
    if len(set(seeds)) != len(seeds):
        raise ValueError(f"ensemble members must have distinct seeds, got {seeds}")
    return Empir(members, cfg.combiner)


def _train_kw(cfg: ExperimentConfig) -> dict:
    return {"arch": cfg.arch, "epochs": cfg.epochs, "batch_size": cfg.batch_size, "lr": cfg.lr}


def ensure_model(cfg: ExperimentConfig, quant: QuantConfig | None, seed: int, train: Dataset | None = None,
                 adv: bool = False):
    """Load a cached checkpoint or train it. ``train`` is loaded lazily."""
    path = checkpoint_path(cfg, quant, seed, adv)
    if path.exists():
        return Checkpoint.load(path).to_graph()
    train = train if train is not None else load_train(cfg)
    kw = _train_kw(cfg)
    if adv:
        kw["adv_eps"] = cfg.adv_eps
    return get_or_train(path, train, quant=quant, seed=seed, **kw)


# -- attacks --------------------------------------------------------------------


def attack_spec(cfg: ExperimentConfig, name: str, **override) -> AttackSpec:
    name = name.lower()
    eps = override.get("eps", cfg.eps)
    alpha = override.get("alpha", cfg.alpha)
    iters = override.get("iters", cfg.iters)
    if name == "cw":
        return CW(
            iterations=iters if iters is not None else 50,
            learning_rate=cfg.cw_lr,
            initial_c=cfg.cw_c,
            binary_search_steps=cfg.cw_search_steps,
            confidence=cfg.cw_confidence,
        )
    return parse_attack(name, eps, alpha, iters, cfg.arch, cfg.pgd_seed)


def adversarial_accuracy(model, x: np.ndarray, y: np.ndarray, spec: AttackSpec) -> float:
    x_adv = run_attack(model, x, y, spec)
    return float(np.mean(model.predict(x_adv) == y))


def clean_accuracy(model, x, y) -> float:
    return float(np.mean(model.predict(x) == y))


@dataclass
class RobustnessRow:
    model: str
    unperturbed: float
    attacks: dict[str, float]

    @property
    def average(self) -> float:
        vals = list(self.attacks.values())
        return float(sum(vals) / len(vals)) if vals else float("nan")


def evaluate(model, name: str, x, y, specs: dict[str, AttackSpec]) -> RobustnessRow:
    accs = {}
    for a, spec in specs.items():
        accs[a] = adversarial_accuracy(model, x, y, spec)
        log.info("%s %s: %.4f", name, a, accs[a])
    return RobustnessRow(name, clean_accuracy(model, x, y), accs)


# -- drivers ----------------------------------------------------------------------


def _attack_names(cfg: ExperimentConfig) -> list[str]:
    names = [a.lower() for a in cfg.attacks]
    unknown = set(names) - set(ATTACK_ORDER)
    if unknown:
        raise ValueError(f"unknown attacks {sorted(unknown)}")
    return [a for a in ATTACK_ORDER if a in names]


def run_robustness_table(cfg: ExperimentConfig, out: Path | None = None) -> list[RobustnessRow]:
    """Baseline, EMPIR and any extra models versus every configured attack."""
    baseline = load_baseline(cfg)
    empir = load_empir(cfg)
    extras = [(Path(p).stem, _loaded(p)) for p in cfg.model_checkpoints]
    test = load_test(cfg)
    names = _attack_names(cfg)
    specs = {a: attack_spec(cfg, a) for a in names}
    models = [("baseline-FP", baseline)] + extras + [(f"EMPIR[{empir.describe()}]", empir)]
    rows = [evaluate(m, n, test.images, test.labels, specs) for n, m in models]
    header = ["model", "unperturbed"] + names + ["average"]
    table = [[r.model, r.unperturbed] + [r.attacks[a] for a in names] + [r.average] for r in rows]
    out = Path(out or Path(cfg.out_dir) / "robustness.csv")
    write_report(out, header, table, report_meta(cfg, attacks={a: repr(s) for a, s in specs.items()},
                                                 test_examples=len(test)))
    return rows


def _grid_quant(w: str, a: str) -> QuantConfig:
    return QuantConfig.parse(f"w{w}a{a}")


def run_precision_sweep(cfg: ExperimentConfig, out: Path | None = None) -> list[list]:
    """Train and evaluate single networks over the (k_w, k_a) precision grid."""
    test = load_test(cfg)
    spec = attack_spec(cfg, cfg.confusion_attack)
    train = None
    rows = []
    for w in cfg.precision_grid:
        for a in cfg.precision_grid:
            q = _grid_quant(w, a)
            if train is None and not checkpoint_path(cfg, q, cfg.seed).exists():
                train = load_train(cfg)
            g = ensure_model(cfg, q, cfg.seed, train)
            rows.append([q.label(), w, a, clean_accuracy(g, test.images, test.labels),
                         adversarial_accuracy(g, test.images, test.labels, spec)])
    out = Path(out or Path(cfg.out_dir) / "precision_sweep.csv")
    write_report(out, ["precision", "wbits", "abits", "clean", "adversarial"], rows,
                 report_meta(cfg, attack=repr(spec), test_examples=len(test)))
    return rows


def mn_members(cfg: ExperimentConfig, M: int, N: int) -> list[tuple[QuantConfig | None, int]]:
    if M > len(cfg.fp_seeds) or N > len(cfg.lp_seeds):
        raise ValueError("not enough fp_seeds / lp_seeds for the requested ensemble size")
    lp = [QuantConfig.parse(cfg.lp_configs[i % len(cfg.lp_configs)]) for i in range(N)]
    return [(None, s) for s in cfg.fp_seeds[:M]] + list(zip(lp, cfg.lp_seeds[:N]))


def run_mn_sweep(cfg: ExperimentConfig, out: Path | None = None, max_m: int = 3, max_n: int = 3) -> list[list]:
    """All (M, N) ensemble shapes up to 3x3 under the chosen attack, with overheads."""
    profile = HardwareProfile.load(cfg.profile) if cfg.profile else HardwareProfile.linear()
    test = load_test(cfg)
    spec = attack_spec(cfg, cfg.confusion_attack)
    seeds = list(cfg.fp_seeds[:max_m]) + list(cfg.lp_seeds[:max_n])
    if len(set(seeds)) != len(seeds):
        raise ValueError("fp_seeds and lp_seeds must be pairwise distinct")
    cache: dict = {}
    train = None
    rows = []
    for M in range(max_m + 1):
        for N in range(max_n + 1):
            if M == N == 0:
                continue
            members = []
            for q, s in mn_members(cfg, M, N):
                key = ((q or FULL_PRECISION).label(), s)
                if key not in cache:
                    if train is None and not checkpoint_path(cfg, q, s).exists():
                        train = load_train(cfg)
                    cache[key] = ensure_model(cfg, q, s, train)
                members.append(cache[key])
            model = Empir(members, cfg.combiner)
            m_t, k_t = member_bits(model.quant_configs, "time", profile.fp_bits)
            m_s, k_s = member_bits(model.quant_configs, "storage", profile.fp_bits)
            t = time_overhead(m_t, len(k_t), k_t, profile)
            st = storage_overhead(m_s, len(k_s), k_s, profile.fp_bits)
            rows.append([M, N, model.describe(), model.combiner.value,
                         clean_accuracy(model, test.images, test.labels),
                         adversarial_accuracy(model, test.images, test.labels, spec),
                         format_ratio(t), format_ratio(st), int(t <= ADMISSIBLE_LIMIT and st <= ADMISSIBLE_LIMIT)])
    out = Path(out or Path(cfg.out_dir) / "mn_sweep.csv")
    header = ["M", "N", "members", "combiner", "clean", "adversarial", "time_overhead", "storage_overhead",
              "admissible"]
    write_report(out, header, rows, report_meta(cfg, attack=repr(spec), test_examples=len(test)))
    return rows


def run_strength_sweep(cfg: ExperimentConfig, out: Path | None = None, include_cw: bool = True) -> list[list]:
    """Baseline and EMPIR accuracy across FGSM eps and CW iteration budgets."""
    baseline = load_baseline(cfg)
    empir = load_empir(cfg)
    test = load_test(cfg)
    x, y = test.images, test.labels
    rows = []
    for eps in cfg.fgsm_eps_grid:
        spec = FGSM(float(eps))
        rows.append(["fgsm", "eps", float(eps), adversarial_accuracy(baseline, x, y, spec),
                     adversarial_accuracy(empir, x, y, spec)])
    if include_cw:
        for it in cfg.cw_iters_grid:
            spec = attack_spec(cfg, "cw", iters=int(it))
            rows.append(["cw", "iterations", int(it), adversarial_accuracy(baseline, x, y, spec),
                         adversarial_accuracy(empir, x, y, spec)])
    out = Path(out or Path(cfg.out_dir) / "strength_sweep.csv")
    write_report(out, ["attack", "parameter", "value", "baseline", "empir"], rows,
                 report_meta(cfg, empir=empir.describe(), test_examples=len(test)))
    return rows


def emit_confusion(cfg: ExperimentConfig, out_dir: Path | None = None, attack: str | None = None) -> dict[str, np.ndarray]:
    """C x C count matrices (rows: true class, columns: predicted) under an attack."""
    baseline = load_baseline(cfg)
    empir = load_empir(cfg)
    test = load_test(cfg)
    spec = attack_spec(cfg, attack or cfg.confusion_attack)
    out_dir = Path(out_dir or cfg.out_dir)
    result = {}
    for name, model in (("baseline", baseline), ("empir", empir)):
        x_adv = run_attack(model, test.images, test.labels, spec)
        mat = confusion_matrix(model, x_adv, test.labels, test.num_classes)
        result[name] = mat
        header = ["true\\pred"] + [str(c) for c in range(mat.shape[1])]
        rows = [[str(i)] + [int(v) for v in mat[i]] for i in range(mat.shape[0])]
        write_report(out_dir / f"confusion_{name}.csv", header, rows,
                     report_meta(cfg, model=name, attack=repr(spec), test_examples=len(test)))
    return result


def overhead_rows(quant_sets: dict[str, Sequence[QuantConfig]], profile: HardwareProfile) -> list[list]:
    rows = []
    for name, qs in quant_sets.items():
        m_t, k_t = member_bits(qs, "time", profile.fp_bits)
        m_s, k_s = member_bits(qs, "storage", profile.fp_bits)
        t = time_overhead(m_t, len(k_t), k_t, profile)
        s = storage_overhead(m_s, len(k_s), k_s, profile.fp_bits)
        rows.append([name, format_ratio(t), format_ratio(s), int(t <= ADMISSIBLE_LIMIT and s <= ADMISSIBLE_LIMIT)])
    return rows
