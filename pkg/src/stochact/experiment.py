"""Experiment protocol: config, method grammar, per-fold ensemble training, report files."""

from __future__ import annotations

import json
import platform
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .activations import parse_activation_id
from .core import derive_seed, make_rng
from .data import load_dataset, synth_dataset
from .ensemble import (ExperimentReport, FoldSplit, accuracy, kfold_split, stratified_holdout,
                       sum_rule_fuse, train_test_split)
from .errors import ConfigurationError, StochactError, TrainingError
from .model import Act, ModelSpec, mini_convnet, predict_proba
from .stochastic import SETS, activation_set, gen_stochastic_model
from .training import AugmentConfig, TrainConfig, train_model

# -- config -------------------------------------------------------------------


@dataclass
class DatasetConfig:
    name: str
    protocol: str = "5cv"  # "5cv", "10cv" or "tr-te"
    synth: dict | None = None
    idx: dict | None = None
    image_dir: dict | None = None
    test_fraction: float = 0.5


@dataclass
class BackboneConfig:
    widths: tuple[int, ...] = (8, 16)
    hidden: int = 64
    padding: int = 1


@dataclass
class ExperimentConfig:
    datasets: list[DatasetConfig]
    methods: list[str]
    train: TrainConfig = field(default_factory=TrainConfig)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    seed: int = 0
    out: str = "runs/experiment"
    jobs: int = 1
    base_dir: str = "."

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("base_dir")
        d["train"].pop("seed")
        d["backbone"]["widths"] = list(self.backbone.widths)
        d["train"]["augmentation"]["rescale_range"] = list(self.train.augmentation.rescale_range)
        return d


_TRAIN_KEYS = {"batch_size", "max_epochs", "learning_rate", "momentum", "augment"}


def parse_config(doc: dict, base_dir=".") -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigurationError("config must be a mapping")
    unknown = set(doc) - {"datasets", "methods", "train", "backbone", "seed", "out", "jobs"}
    if unknown:
        raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
    try:
        datasets = [DatasetConfig(**d) for d in doc.get("datasets", [])]
        train_doc = dict(doc.get("train") or {})
        aug_doc = train_doc.pop("augmentation", None) or {}
        if set(train_doc) - _TRAIN_KEYS:
            raise ConfigurationError(f"unknown train keys: {sorted(set(train_doc) - _TRAIN_KEYS)}")
        aug = AugmentConfig(**{k: tuple(v) if k == "rescale_range" else v for k, v in aug_doc.items()})
        train = TrainConfig(**train_doc, augmentation=aug)
        bb = dict(doc.get("backbone") or {})
        if "widths" in bb:
            bb["widths"] = tuple(bb["widths"])
        backbone = BackboneConfig(**bb)
    except TypeError as e:
        raise ConfigurationError(str(e)) from None
    if not datasets:
        raise ConfigurationError("config lists no datasets")
    methods = [str(m) for m in doc.get("methods", [])]
    if not methods:
        raise ConfigurationError("config lists no methods")
    for m in methods:
        plan_method(m)
    for d in datasets:
        if sum(x is not None for x in (d.synth, d.idx, d.image_dir)) != 1:
            raise ConfigurationError(f"dataset {d.name!r} needs exactly one of synth / idx / image_dir")
        _protocol_folds(d.protocol)
    return ExperimentConfig(datasets, methods, train, backbone, int(doc.get("seed", 0)),
                            str(doc.get("out", "runs/experiment")), int(doc.get("jobs", 1)), str(base_dir))


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    with open(path) as fh:
        doc = yaml.safe_load(fh)
    return parse_config(doc, base_dir=path.parent)


# -- method grammar -----------------------------------------------------------

_SET_NAMES = "|".join(SETS)
_STO = re.compile(rf"^Sto({_SET_NAMES})(\d+)?(?:\((1|255)\))?$", re.IGNORECASE)
_SINGLE_STO = re.compile(rf"^S({_SET_NAMES})(?:\((1|255)\))?$", re.IGNORECASE)
_FUS_SET = re.compile(rf"^Fus({_SET_NAMES})(\d+)(?:\((1|255)\))?$", re.IGNORECASE)
_FUS_RELU = re.compile(r"^FusRelu(\d+)$", re.IGNORECASE)
_KIND = re.compile(r"^([a-z0-9_]+?)(?:\((1|255)\))?$", re.IGNORECASE)


@dataclass(frozen=True)
class MemberPlan:
    """One ensemble member: a fixed activation for every slot, or a draw from a named set."""
    fixed: Act | None = None
    draw_from: str | None = None
    max_input: float = 1.0


def _plan_term(term: str) -> list[MemberPlan]:
    term = term.strip()
    if m := _FUS_RELU.match(term):
        return [MemberPlan(fixed=Act("relu"))] * int(m.group(1))
    if m := _STO.match(term):
        k = int(m.group(2) or 1)
        return [MemberPlan(draw_from=activation_set(m.group(1)).name, max_input=float(m.group(3) or 1))] * k
    if m := _SINGLE_STO.match(term):
        return [MemberPlan(draw_from=activation_set(m.group(1)).name, max_input=float(m.group(2) or 1))]
    if m := _FUS_SET.match(term):
        aset = activation_set(m.group(1), float(m.group(3) or 1))
        return [MemberPlan(fixed=aset.members[i % len(aset)]) for i in range(int(m.group(2)))]
    if m := _KIND.match(term):
        kind, mi = parse_activation_id(m.group(1))
        if m.group(2):
            mi = float(m.group(2))
        return [MemberPlan(fixed=Act(kind.value, mi))]
    raise ConfigurationError(f"cannot parse method {term!r}")


def plan_method(method: str) -> list[MemberPlan]:
    """Expand a method name into its flat member list (``A+B`` concatenates)."""
    members: list[MemberPlan] = []
    for term in method.split("+"):
        if not term.strip():
            raise ConfigurationError(f"empty term in method {method!r}")
        members += _plan_term(term)
    return members


def member_spec(plan: MemberPlan, base: ModelSpec, seed: int) -> ModelSpec:
    if plan.fixed is not None:
        return base.with_slots({s: plan.fixed for s in range(sum(isinstance(x, Act) for x in base.layers))})
    aset = activation_set(plan.draw_from, plan.max_input)
    return gen_stochastic_model(base, aset, make_rng(derive_seed(seed, "arch")))


# -- datasets -----------------------------------------------------------------


def _protocol_folds(protocol: str) -> int:
    p = protocol.lower()
    if p == "tr-te":
        return 1
    if m := re.fullmatch(r"(\d+)cv", p):
        return int(m.group(1))
    raise ConfigurationError(f"unknown protocol {protocol!r} (use 5cv, 10cv or tr-te)")


def materialize(dcfg: DatasetConfig, master_seed: int, base_dir=".") -> tuple[np.ndarray, np.ndarray, FoldSplit]:
    """Load or synthesise a dataset and build its split."""
    base = Path(base_dir)
    split_seed = derive_seed(master_seed, dcfg.name, "split")
    if dcfg.synth is not None:
        s = dict(dcfg.synth)
        s.setdefault("seed", derive_seed(master_seed, dcfg.name, "data"))
        x, y = synth_dataset(**s)
    elif dcfg.idx is not None:
        d = dcfg.idx
        size = d.get("image_size")
        x, y = load_dataset(base / d["images"], "idx", base / d["labels"], size)
        if "test_images" in d:
            xt, yt = load_dataset(base / d["test_images"], "idx", base / d["test_labels"], size)
            if dcfg.protocol.lower() != "tr-te":
                raise ConfigurationError(f"{dcfg.name}: separate test files imply protocol tr-te")
            return np.concatenate([x, xt]), np.concatenate([y, yt]), train_test_split(len(x), len(xt))
    else:
        d = dcfg.image_dir
        x, y = load_dataset(base / d["path"], "image-dir", image_size=d["image_size"],
                            channels=d.get("channels", 1))
    folds = _protocol_folds(dcfg.protocol)
    if folds == 1:
        return x, y, stratified_holdout(y, dcfg.test_fraction, split_seed)
    return x, y, kfold_split(y, folds, split_seed)


# -- running ------------------------------------------------------------------


def _train_member(job):
    spec, x_train, y_train, x_test, train_cfg, ident = job
    try:
        state, _ = train_model(spec, x_train, y_train, train_cfg)
    except StochactError as e:
        raise TrainingError(f"member {ident} (seed {train_cfg.seed}) failed: {e}") from e
    return predict_proba(state, x_test)


def run_experiment(config: ExperimentConfig, progress=None) -> tuple[ExperimentReport, dict]:
    """Train every method's members on every fold; returns the report and raw per-fold records."""
    methods, names = config.methods, [d.name for d in config.datasets]
    acc = np.zeros((len(methods), len(names)))
    fold_acc: dict = {}
    members_log = []
    audits = 0
    pool = ProcessPoolExecutor(config.jobs) if config.jobs > 1 else None
    try:
        for di, dcfg in enumerate(config.datasets):
            x, y, split = materialize(dcfg, config.seed, config.base_dir)
            n_classes = int(y.max()) + 1
            base = mini_convnet(x.shape[1:], n_classes, config.backbone.widths, config.backbone.hidden,
                                padding=config.backbone.padding)
            for mi, method in enumerate(methods):
                plans = plan_method(method)
                per_fold = []
                for fold in range(split.n_folds):
                    tr, te = split.train_indices(fold), split.test_indices(fold)
                    if np.intersect1d(tr, te).size:
                        raise ConfigurationError(f"{dcfg.name} fold {fold}: train/test overlap")
                    audits += 1
                    jobs = []
                    for k, plan in enumerate(plans):
                        seed = derive_seed(config.seed, dcfg.name, method, fold, k)
                        spec = member_spec(plan, base, seed)
                        cfg = TrainConfig(**{**asdict(config.train), "seed": seed,
                                             "augmentation": config.train.augmentation})
                        ident = f"{dcfg.name}/{method}/fold{fold}/member{k}"
                        members_log.append({"member": ident, "seed": seed,
                                            "slots": [a.ident for a in spec.layers if isinstance(a, Act)]})
                        jobs.append((spec, x[tr], y[tr], x[te], cfg, ident))
                    outputs = list(pool.map(_train_member, jobs)) if pool else [_train_member(j) for j in jobs]
                    _, decision = sum_rule_fuse(outputs)
                    per_fold.append(accuracy(decision, y[te]))
                    if progress:
                        progress(f"{dcfg.name} {method} fold {fold}: {per_fold[-1]:.4f}")
                fold_acc[(method, dcfg.name)] = per_fold
                acc[mi, di] = 100.0 * float(np.mean(per_fold))
    finally:
        if pool:
            pool.shutdown()
    report = ExperimentReport(list(methods), names, acc, fold_acc)
    raw = {
        "methods": methods,
        "datasets": names,
        "accuracy": acc.tolist(),
        "fold_accuracy": [{"method": m, "dataset": d, "folds": v} for (m, d), v in fold_acc.items()],
        "members": members_log,
        "disjointness_audits": audits,
        "seed": config.seed,
        "config": config.to_dict(),
    }
    return report, raw


def report_from_raw(raw: dict) -> ExperimentReport:
    folds = {(r["method"], r["dataset"]): r["folds"] for r in raw["fold_accuracy"]}
    return ExperimentReport(raw["methods"], raw["datasets"], np.array(raw["accuracy"], dtype=np.float64), folds)


# -- report files -------------------------------------------------------------


def _fmt(v: float, digits: int = 4) -> str:
    return "NA" if not np.isfinite(v) else f"{v:.{digits}f}"


def _write(path: Path, text: str) -> None:
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write(text)


def _csv_row(cells) -> str:
    return ",".join(f'"{c}"' if ("," in c or '"' in c) else c for c in map(str, cells))


def accuracy_csv(report: ExperimentReport) -> str:
    lines = [_csv_row(["method", *report.datasets, "Avg", "Rank"])]
    for i, m in enumerate(report.methods):
        lines.append(_csv_row([m, *(_fmt(v) for v in report.accuracy[i]), _fmt(report.averages[i]),
                               report.ranks[i]]))
    return "\n".join(lines) + "\n"


def pvalue_csv(report: ExperimentReport, sided: str) -> str:
    p = report.pvalues(sided)
    lines = [_csv_row(["method", *report.methods])]
    for i, m in enumerate(report.methods):
        lines.append(_csv_row([m, *(_fmt(v, 6) for v in p[i])]))
    return "\n".join(lines) + "\n"


def text_table(report: ExperimentReport) -> str:
    header = ["Method", *report.datasets, "Avg", "Rank"]
    rows = [[m, *(f"{v:.2f}" for v in report.accuracy[i]), f"{report.averages[i]:.2f}", str(report.ranks[i])]
            for i, m in enumerate(report.methods)]
    widths = [max(len(r[c]) for r in [header, *rows]) for c in range(len(header))]
    fmt = lambda r: "  ".join(c.ljust(w) if j == 0 else c.rjust(w) for j, (c, w) in enumerate(zip(r, widths)))  # noqa: E731
    out = [fmt(header), "-" * len(fmt(header))] + [fmt(r) for r in rows]
    return "\n".join(out) + "\n"


def emit_report(report: ExperimentReport, out_dir, raw: dict | None = None) -> list[Path]:
    """Write accuracy/p-value CSVs, an aligned text table, the raw results and a manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "accuracy.csv": accuracy_csv(report),
        "pvalues.csv": pvalue_csv(report, "two-sided"),
        "pvalues_greater.csv": pvalue_csv(report, "greater"),
        "report.txt": text_table(report),
    }
    if raw is not None:
        files["results.json"] = json.dumps(raw, indent=1, sort_keys=True) + "\n"
        manifest = {
            "seed": raw["seed"],
            "config": raw["config"],
            "member_seeds": {m["member"]: m["seed"] for m in raw["members"]},
            "versions": {"stochact": __version__, "numpy": np.__version__,
                         "python": platform.python_version()},
        }
        files["manifest.json"] = json.dumps(manifest, indent=1, sort_keys=True) + "\n"
    paths = []
    for name, text in files.items():
        _write(out / name, text)
        paths.append(out / name)
    return paths
