"""Repeated, seeded experiment runs and their reports.

Seeding: repetition ``r`` of an experiment with master seed ``S`` runs under
``s = derive_seed(S, r)`` and every stage draws from its own child of ``s``:

    synthetic data      derive_seed(s, 0)
    train/test split    derive_seed(s, 1)
    defender i          derive_seed(s, 2, i)
    AMD reference       derive_seed(s, 3)
    attack              derive_seed(s, 4)   (shared by all rows of the repetition)
    attacker seeds      derive_seed(s, 5)
    retrained models    derive_seed(s, 6)

Results therefore depend only on the configuration and the master seed.
"""

from __future__ import annotations

import copy
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from .attack import AttackParams, APParams, HCParams, RetryParams, Strategy, run_attack
from .data import (
    Dataset,
    SyntheticSpec,
    generate_synthetic,
    load_csv,
    min_max_normalize,
    shuffle_split,
)
from .defender import (
    DefenderSpec,
    HiddenFeatureDefender,
    build_defender,
    training_accuracy,
)
from .metrics import AMDParams, effective_attack_rate, evaluate
from .models import Penalty, RegularizationSpec, train_one_class, train_subspace_ensemble
from .seeding import derive_seed

log = logging.getLogger(__name__)

RESULTS_FORMAT = "dynadv.results"
RESULTS_VERSION = 1
METRICS = ("training_accuracy", "ear", "amd", "data_leak", "n_successful", "probes_spent")

# child-seed keys inside one repetition
_DATA, _SPLIT, _DEFENDER, _REFERENCE, _ATTACK, _ATTACKER_SEEDS, _RETRAIN = range(7)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetSpec:
    kind: str = "synthetic"
    dim: int = 10
    n_per_class: int = 250
    mu_legitimate: float = 0.75
    mu_malicious: float = 0.25
    sigma: float = 0.05
    path: Optional[str] = None
    label_column: str = "label"
    legitimate_value: str = "0"
    train_fraction: float = 0.7
    name: str = ""

    def __post_init__(self):
        if self.kind not in ("synthetic", "csv"):
            raise ConfigError(f"dataset kind must be 'synthetic' or 'csv', got {self.kind!r}")
        if self.kind == "csv" and not self.path:
            raise ConfigError("csv datasets need a path")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError("train_fraction must lie in (0, 1)")

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        if self.kind == "csv":
            return Path(self.path).stem
        return f"synthetic-{self.dim}d"


@dataclass(frozen=True)
class LeakParams:
    nu: float = 0.1
    gamma: float = 0.1


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetSpec = DatasetSpec()
    defenders: tuple = (DefenderSpec(),)
    strategies: tuple = (Strategy.AP,)
    attack: AttackParams = AttackParams()
    amd: AMDParams = AMDParams()
    leak: LeakParams = LeakParams()
    repetitions: int = 30
    master_seed: int = 0
    hidden_retrain: bool = False
    output: Optional[str] = None
    jobs: int = 1
    name: str = "experiment"

    def __post_init__(self):
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        if not self.defenders or not self.strategies:
            raise ConfigError("at least one defender and one strategy are required")
        object.__setattr__(self, "strategies", tuple(Strategy(s) for s in self.strategies))
        object.__setattr__(self, "defenders", tuple(self.defenders))


def _pick(d: dict, cls, where: str, **renames) -> dict:
    d = dict(d or {})
    for old, new in renames.items():
        if old in d:
            d[new] = d.pop(old)
    unknown = set(d) - set(cls.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    return d


def config_from_dict(raw: dict) -> ExperimentConfig:
    raw = dict(raw or {})
    try:
        dataset = DatasetSpec(**_pick(raw.pop("dataset", {}), DatasetSpec, "dataset"))
        defenders = tuple(DefenderSpec.from_dict(d) for d in raw.pop("defenders", [{}]))
        strategies = tuple(Strategy(s) for s in raw.pop("strategies", ["AP"]))
        atk = dict(raw.pop("attack", {}) or {})
        hc = _pick(atk.pop("filter", {}), HCParams, "attack.filter")
        if "theta_adversary_confidence" in atk:
            hc["theta_adversary_confidence"] = atk.pop("theta_adversary_confidence")
        retry = RetryParams(**({"n_retries": atk.pop("n_retries")} if "n_retries" in atk else {}))
        ap = APParams(**_pick(atk, APParams, "attack"))
        met = dict(raw.pop("metrics", {}) or {})
        amd = _pick(met.pop("reference", {}), AMDParams, "metrics.reference")
        if "theta_margin" in met:
            amd["theta_margin"] = met.pop("theta_margin")
        leak = LeakParams(**_pick(met.pop("leak", {}), LeakParams, "metrics.leak"))
        if met:
            raise ConfigError(f"unknown keys in metrics: {sorted(met)}")
        top = _pick(raw, ExperimentConfig, "config")
        return ExperimentConfig(dataset=dataset, defenders=defenders, strategies=strategies,
                                attack=AttackParams(ap, HCParams(**hc), retry),
                                amd=AMDParams(**amd), leak=leak, **top)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def config_to_dict(cfg: ExperimentConfig) -> dict:
    ap = asdict(cfg.attack.ap)
    ap.pop("seed")
    hc = asdict(cfg.attack.hc)
    theta = hc.pop("theta_adversary_confidence")
    amd = asdict(cfg.amd)
    theta_margin = amd.pop("theta_margin")
    return {
        "name": cfg.name, "repetitions": cfg.repetitions, "master_seed": cfg.master_seed,
        "hidden_retrain": cfg.hidden_retrain, "output": cfg.output, "jobs": cfg.jobs,
        "dataset": asdict(cfg.dataset),
        "defenders": [d.to_dict() for d in cfg.defenders],
        "strategies": [s.value for s in cfg.strategies],
        "attack": {**ap, "theta_adversary_confidence": theta, "filter": hc,
                   "n_retries": cfg.attack.retry.n_retries},
        "metrics": {"theta_margin": theta_margin, "reference": amd, "leak": asdict(cfg.leak)},
    }


def _set_dotted(d: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    for k in keys[:-1]:
        d = d.setdefault(k, {})
    d[keys[-1]] = value


def load_config(path, overrides: Optional[dict] = None) -> ExperimentConfig:
    """Read a YAML config; ``overrides`` maps dotted keys (``attack.b_explore``) to values."""
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    for k, v in (overrides or {}).items():
        _set_dotted(raw, k, v)
    return config_from_dict(raw)


PRESET_DIR = Path(__file__).parent / "presets"


def preset_names() -> list[str]:
    return sorted(p.stem for p in PRESET_DIR.glob("*.yaml"))


def load_preset(name: str, overrides: Optional[dict] = None) -> ExperimentConfig:
    path = PRESET_DIR / f"{name}.yaml"
    if not path.is_file():
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    return load_config(path, overrides)


def repetition_seed(master_seed: int, repetition: int) -> int:
    return derive_seed(master_seed, repetition)


# ---------------------------------------------------------------- running


@dataclass
class RepetitionRecord:
    dataset: str
    defender: str
    attack: str
    repetition: int
    seed: int
    metrics: dict = field(default_factory=dict)   # metric -> float or None
    flags: dict = field(default_factory=dict)
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass
class MetricSummary:
    mean: Optional[float]
    std: Optional[float]
    min: Optional[float]
    max: Optional[float]
    n_defined: int
    n_undefined: int


@dataclass
class ResultRow:
    dataset: str
    defender: str
    attack: str
    metrics: dict          # metric -> MetricSummary
    repetitions: int
    completed: int
    flags: dict            # flag -> number of repetitions raising it
    valid: bool
    records: list = field(default_factory=list)

    def mean(self, metric: str) -> Optional[float]:
        return self.metrics[metric].mean


def _load_dataset(spec: DatasetSpec) -> Optional[Dataset]:
    if spec.kind == "csv":
        return min_max_normalize(load_csv(spec.path, spec.label_column, spec.legitimate_value))
    return None


def _rep_data(spec: DatasetSpec, base: Optional[Dataset], seed: int) -> tuple[Dataset, Dataset]:
    if base is None:
        base = generate_synthetic(SyntheticSpec(
            spec.dim, spec.n_per_class, spec.mu_legitimate, spec.mu_malicious, spec.sigma,
            derive_seed(seed, _DATA)))
    return shuffle_split(base, derive_seed(seed, _SPLIT), spec.train_fraction)


def retrain_ears(defender: HiddenFeatureDefender, spec: DefenderSpec, train: Dataset,
                  attacks: np.ndarray, seed: int) -> dict:
    """EAR of fresh models trained on the visible and on the hidden features alone."""
    inner = spec.inner or DefenderSpec()
    out = {}
    for key, cols in (("available", defender.visible_features),
                      ("hidden", defender.hidden_features)):
        if cols.size == 0:
            raise ValueError("hidden feature set is empty")
        model = build_defender(inner, train.project(cols), derive_seed(seed, _RETRAIN))
        out[key] = effective_attack_rate(model, attacks[:, cols])
    return out


@dataclass
class _Context:
    seed: int
    train: Dataset
    test: Dataset
    reference: object
    leak_ref: object
    attacker_seeds: Optional[np.ndarray]
    params: AttackParams


def _prepare(cfg: ExperimentConfig, base: Optional[Dataset], r: int) -> _Context:
    """Data, reference models and attacker seeds shared by every row of repetition r."""
    seed = repetition_seed(cfg.master_seed, r)
    train, test = _rep_data(cfg.dataset, base, seed)
    reference = train_subspace_ensemble(
        train, cfg.amd.k, cfg.amd.feature_fraction,
        RegularizationSpec(Penalty(cfg.amd.penalty), cfg.amd.c),
        seed=derive_seed(seed, _REFERENCE))
    leak_ref = train_one_class(train.legitimate, cfg.leak.nu, cfg.leak.gamma)
    attacker_seeds = None
    n_seed = cfg.attack.ap.n_seed
    if n_seed:
        # the attacker's known-good samples come from held-out Legitimate data
        pool = test.legitimate.X
        rng = np.random.default_rng(derive_seed(seed, _ATTACKER_SEEDS))
        attacker_seeds = pool[rng.choice(len(pool), size=n_seed, replace=len(pool) < n_seed)]
    params = cfg.attack.with_seed(derive_seed(seed, _ATTACK))
    return _Context(seed, train, test, reference, leak_ref, attacker_seeds, params)


def _attack_once(cfg: ExperimentConfig, ctx: _Context, dspec: DefenderSpec, defender,
                 strategy: Strategy):
    # a fresh oracle session per attack: probe counter and random stream
    oracle = copy.deepcopy(defender)
    result = run_attack(oracle, strategy, ctx.params, ctx.attacker_seeds)
    report = evaluate(oracle, result, ctx.reference, ctx.leak_ref, cfg.amd.theta_margin)
    metrics = {"ear": report.ear, "amd": report.amd, "data_leak": report.data_leak,
               "n_attack": report.n_attack, "n_successful": report.n_successful,
               "probes_spent": report.probes_spent}
    if cfg.hidden_retrain and isinstance(defender, HiddenFeatureDefender):
        if result.failed:
            metrics.update(ear_available=None, ear_hidden=None)
        else:
            ears = retrain_ears(defender, dspec, ctx.train, result.attacks.samples, ctx.seed)
            metrics.update(ear_available=ears["available"], ear_hidden=ears["hidden"])
    return result, metrics


def _run_repetition(cfg: ExperimentConfig, base: Optional[Dataset], r: int) -> list[RepetitionRecord]:
    seed = repetition_seed(cfg.master_seed, r)
    ds_label = cfg.dataset.label

    def failed(defender, attack, exc):
        log.warning("repetition %d (%s/%s) aborted: %s", r, defender, attack, exc)
        return RepetitionRecord(ds_label, defender, attack, r, seed,
                                error=f"{type(exc).__name__}: {exc}")

    try:
        ctx = _prepare(cfg, base, r)
    except Exception as exc:  # noqa: BLE001 - any stage failure aborts the repetition
        return [failed(d.label, s.value, exc) for d in cfg.defenders for s in cfg.strategies]

    records = []
    for i, dspec in enumerate(cfg.defenders):
        try:
            defender = build_defender(dspec, ctx.train, derive_seed(seed, _DEFENDER, i))
            acc = training_accuracy(defender, ctx.train)
        except Exception as exc:  # noqa: BLE001
            records += [failed(dspec.label, s.value, exc) for s in cfg.strategies]
            continue
        for strategy in cfg.strategies:
            try:
                result, metrics = _attack_once(cfg, ctx, dspec, defender, strategy)
            except Exception as exc:  # noqa: BLE001
                records.append(failed(dspec.label, strategy.value, exc))
                continue
            records.append(RepetitionRecord(ds_label, dspec.label, strategy.value, r, seed,
                                            {"training_accuracy": acc, **metrics},
                                            dict(result.flags)))
    return records


def run_single(cfg: ExperimentConfig, defender: int = 0, strategy=None, repetition: int = 0):
    """One attack of repetition ``repetition``, exactly as the experiment runs it.

    Returns the attack result and that run's metric dict.
    """
    if not 0 <= defender < len(cfg.defenders):
        raise ConfigError(f"defender index {defender} out of range")
    strategy = Strategy(strategy) if strategy is not None else cfg.strategies[0]
    ctx = _prepare(cfg, _load_dataset(cfg.dataset), repetition)
    dspec = cfg.defenders[defender]
    d = build_defender(dspec, ctx.train, derive_seed(ctx.seed, _DEFENDER, defender))
    result, metrics = _attack_once(cfg, ctx, dspec, d, strategy)
    return result, {"training_accuracy": training_accuracy(d, ctx.train), **metrics}


def run_records(cfg: ExperimentConfig) -> list[RepetitionRecord]:
    base = _load_dataset(cfg.dataset)
    reps = range(cfg.repetitions)
    if cfg.jobs > 1:
        with ProcessPoolExecutor(cfg.jobs) as pool:
            batches = list(pool.map(_run_repetition, [cfg] * len(reps), [base] * len(reps), reps))
    else:
        batches = [_run_repetition(cfg, base, r) for r in reps]
    return [rec for batch in batches for rec in batch]


def _summary(values: list) -> MetricSummary:
    defined = [float(v) for v in values if v is not None]
    undefined = len(values) - len(defined)
    if not defined:
        return MetricSummary(None, None, None, None, 0, undefined)
    a = np.array(defined)
    return MetricSummary(float(a.mean()), float(a.std()), float(a.min()), float(a.max()),
                         len(defined), undefined)


def aggregate(records: list[RepetitionRecord]) -> list[ResultRow]:
    """Group records by (dataset, defender, attack), in first-seen order."""
    groups: dict[tuple, list[RepetitionRecord]] = {}
    for rec in records:
        groups.setdefault((rec.dataset, rec.defender, rec.attack), []).append(rec)
    rows = []
    for (ds, dname, atk), recs in groups.items():
        done = [r for r in recs if r.ok]
        keys = [m for m in METRICS if any(m in r.metrics for r in done)]
        keys += sorted({k for r in done for k in r.metrics} - set(METRICS) - {"n_attack"})
        flags: dict[str, int] = {}
        for r in recs:
            for k, v in r.flags.items():
                if v:
                    flags[k] = flags.get(k, 0) + 1
        if len(done) < len(recs):
            flags["errors"] = len(recs) - len(done)
        rows.append(ResultRow(
            ds, dname, atk,
            {k: _summary([r.metrics.get(k) for r in done]) for k in keys},
            len(recs), len(done), flags, 2 * len(done) >= len(recs), recs))
    return rows


def run_experiment(cfg: ExperimentConfig) -> list[ResultRow]:
    return aggregate(run_records(cfg))


def hidden_retrain_eval(cfg: ExperimentConfig) -> tuple[ResultRow, ResultRow]:
    """After the attack on a hidden-feature defender, the EAR of fresh models
    trained on the available (visible) features and on the hidden ones."""
    hidden = [d for d in cfg.defenders if d.design == "hidden"]
    if not hidden:
        raise ConfigError("hidden_retrain_eval needs a hidden-feature defender")
    cfg = replace(cfg, defenders=(hidden[0],), hidden_retrain=True)
    (row,) = run_experiment(cfg)[:1]
    pair = []
    for key in ("available", "hidden"):
        m = dict(row.metrics)
        pair.append(ResultRow(row.dataset, f"{row.defender}[{key}-features model]", row.attack,
                              {"ear": m[f"ear_{key}"]}, row.repetitions, row.completed,
                              dict(row.flags), row.valid, row.records))
    return pair[0], pair[1]


# ---------------------------------------------------------------- reports


def _fmt(s: MetricSummary, pct: bool = False, digits: int = 3) -> str:
    if s.mean is None:
        return f"- [{s.n_undefined}/{s.n_undefined} undefined]"
    scale = 100.0 if pct else 1.0
    text = f"{s.mean * scale:.{1 if pct else digits}f} ± {s.std * scale:.{1 if pct else digits}f}"
    if s.n_undefined:
        text += f" [{s.n_undefined}/{s.n_defined + s.n_undefined} undefined]"
    return text


def render_table(rows: list[ResultRow]) -> str:
    columns = [("training_accuracy", "Train acc (%)", True), ("ear", "EAR", False),
               ("data_leak", "Data leak", False), ("amd", "AMD", False),
               ("ear_available", "EAR avail.", False), ("ear_hidden", "EAR hidden", False),
               ("probes_spent", "Probes", False)]
    present = [c for c in columns if any(c[0] in r.metrics for r in rows)]
    header = ["Dataset", "Defender", "Attack", *(c[1] for c in present), "Reps", "Flags"]
    body = []
    for r in rows:
        cells = [r.dataset, r.defender, r.attack]
        for key, _, pct in present:
            s = r.metrics.get(key)
            if s is None:
                cells.append("-")
            elif key == "probes_spent":
                cells.append(f"{s.mean:.0f}" if s.mean is not None else "-")
            else:
                cells.append(_fmt(s, pct))
        cells.append(f"{r.completed}/{r.repetitions}" + ("" if r.valid else " INVALID"))
        cells.append(", ".join(f"{k}={v}" for k, v in sorted(r.flags.items())) or "-")
        body.append(cells)
    widths = [max(len(str(x)) for x in col) for col in zip(header, *body)]
    line = lambda cells: " | ".join(str(c).ljust(w) for c, w in zip(cells, widths)).rstrip()
    sep = "-+-".join("-" * w for w in widths)
    return "\n".join([line(header), sep, *(line(b) for b in body)]) + "\n"


def row_to_dict(row: ResultRow) -> dict:
    d = asdict(row)
    d.pop("records")
    return d


def row_from_dict(d: dict, records: list) -> ResultRow:
    metrics = {k: MetricSummary(**v) for k, v in d["metrics"].items()}
    return ResultRow(d["dataset"], d["defender"], d["attack"], metrics, d["repetitions"],
                     d["completed"], d["flags"], d["valid"], records)


def emit_report(rows: list[ResultRow], path, config: Optional[ExperimentConfig] = None) -> dict:
    """Write results.json, summary.txt and repetitions.jsonl into directory ``path``."""
    if not rows:
        raise ValueError("nothing to report")
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        files = {"results": out / "results.json", "summary": out / "summary.txt",
                 "repetitions": out / "repetitions.jsonl"}
        doc = {"format": RESULTS_FORMAT, "version": RESULTS_VERSION,
               "config": config_to_dict(config) if config else None,
               "rows": [row_to_dict(r) for r in rows]}
        files["results"].write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n",
                                    encoding="utf-8")
        files["summary"].write_text(render_table(rows), encoding="utf-8")
        seen = set()
        with files["repetitions"].open("w", encoding="utf-8") as fh:
            for row in rows:
                for rec in row.records:
                    key = (rec.dataset, rec.defender, rec.attack, rec.repetition)
                    if key in seen:
                        continue
                    seen.add(key)
                    fh.write(json.dumps(asdict(rec), sort_keys=True) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write report to {out}: {exc}") from exc
    return files


def read_records(path) -> list[RepetitionRecord]:
    path = Path(path)
    if path.is_dir():
        path = path / "repetitions.jsonl"
    return [RepetitionRecord(**json.loads(line))
            for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]


def load_report(path) -> list[ResultRow]:
    """Inverse of :func:`emit_report`."""
    out = Path(path)
    doc = json.loads((out / "results.json").read_text(encoding="utf-8"))
    if doc.get("format") != RESULTS_FORMAT or doc.get("version") != RESULTS_VERSION:
        raise ValueError(f"{out}: not a {RESULTS_FORMAT} v{RESULTS_VERSION} report")
    records = read_records(out)
    by_key: dict[tuple, list] = {}
    for rec in records:
        by_key.setdefault((rec.dataset, rec.defender, rec.attack), []).append(rec)
    rows = []
    for d in doc["rows"]:
        base_def = d["defender"].split("[", 1)[0]
        rows.append(row_from_dict(d, by_key.get((d["dataset"], base_def, d["attack"]), [])))
    return rows
