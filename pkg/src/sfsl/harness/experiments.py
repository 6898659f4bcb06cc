"""Config-driven experiments: build a population, run rounds, write metrics."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from ..errors import ConfigError, InvalidRate, RoundAborted
from ..federation.data import read_dataset, synthesize_client
from ..federation.round import FederatedClient, RoundConfig, run_round, select_clients
from ..model_store import GlobalModel, save_checkpoint
from ..perturb import resolve_params
from ..psu import BloomParams, PartitionScheme
from ..quant import QuantConfig
from ..rng import derive_rng, derive_seed
from ..secure_agg import get_group
from .cost_model import CostModelInput, predict_cost
from .dropout import NO_DROPOUT, inject_dropout

log = logging.getLogger(__name__)

PRESETS = ("smoke", "psu-bench", "sfsl-vs-sfl")


@dataclass
class ExperimentConfig:
    name: str = "custom"
    seed: int = 0
    rounds: int = 1
    population: int = 0  # 0 means exactly n registered clients
    n: int = 4
    threshold: int | None = None
    m: int = 2000
    d: int = 18
    init_scale: float = 0.1
    set_size: int = 50
    samples: int = 40
    history_len: int = 5
    dataset_dir: str | None = None
    schemes: list = field(default_factory=lambda: ["sfsl"])
    cpp: object = "CPP5"
    psu: dict = field(default_factory=dict)
    modulus_bits: int = 32
    quant: dict = field(default_factory=dict)
    max_count: int = 512
    trainer: dict = field(default_factory=dict)
    dense_rows: int = 0
    weighting: str = "count"
    group: str = "modp2048"
    dropout: dict = field(default_factory=dict)
    transport: str = "inproc"
    period_rounds: int = 0  # 0: one period for the whole run
    memo_dir: str | None = None
    psu_only: bool = False
    n_values: list = field(default_factory=list)  # sweep over n when non-empty

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**raw)
        if isinstance(cfg.schemes, str):
            cfg.schemes = [cfg.schemes]
        cfg.validate()
        return cfg

    def validate(self):
        if self.rounds < 1:
            raise ConfigError("rounds must be >= 1")
        if self.n < 2:
            raise ConfigError("n must be >= 2")
        if self.m < 1 or self.d < 1:
            raise ConfigError("model needs m >= 1 and d >= 1")
        if self.set_size < 1 or self.samples < 1:
            raise ConfigError("set_size and samples must be positive")
        if self.dense_rows >= self.m:
            raise ConfigError("dense_rows must leave some sparse rows")
        if self.transport not in ("inproc", "socket"):
            raise ConfigError("transport must be inproc or socket")
        if not 1 <= self.modulus_bits <= 64:
            raise ConfigError("modulus_bits must lie in [1, 64]")
        for scheme in self.schemes:
            if scheme not in ("sfsl", "sfl"):
                raise ConfigError(f"unknown scheme {scheme!r}")
        if self.weighting not in ("count", "per_client"):
            raise ConfigError("weighting must be count or per_client")
        try:
            resolve_params(self.cpp)
            get_group(self.group)
        except (InvalidRate, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        self.quant_config()
        mode = self.psu.get("mode", "identity")
        if mode not in ("identity", "bloom"):
            raise ConfigError("psu.mode must be identity or bloom")

    def quant_config(self) -> QuantConfig:
        q = self.quant
        return QuantConfig(int(q.get("levels", 2 ** 15)), float(q.get("w_min", -1.0)), float(q.get("w_max", 1.0)))

    def population_size(self, n: int | None = None) -> int:
        return max(self.population, n or self.n)

    def round_config(self, round_id: int, scheme: str, n: int | None = None) -> RoundConfig:
        n = n or self.n
        psu_cfg = self.psu
        bloom = None
        if psu_cfg.get("mode", "identity") == "bloom":
            phi = psu_cfg.get("capacity") or n * (self.set_size + self.dense_rows)
            fpr = float(psu_cfg.get("target_fpr", 1e-4))
            bloom = BloomParams.from_capacity(phi, fpr, derive_seed(self.seed, "hash", round_id))
        parts = psu_cfg.get("partitions")
        partitions = PartitionScheme.equal_width(self.m, parts) if parts else None
        period = round_id // self.period_rounds if self.period_rounds else 0
        return RoundConfig(
            n=n,
            modulus=2 ** self.modulus_bits,
            threshold=self.threshold,
            cpp=self.cpp if scheme == "sfsl" else "CPP5",
            bloom=bloom,
            partitions=partitions,
            quant=self.quant_config(),
            hyperparams=dict(self.trainer),
            round_id=round_id,
            period_id=period,
            seed=self.seed,
            scheme=scheme,
            dense_rows=self.dense_rows,
            weighting=self.weighting,
            max_count=self.max_count,
            group=self.group,
            positive_only=bool(psu_cfg.get("positive_only", False)),
            expected_set_size=self.set_size,
        )


def load_config(path) -> ExperimentConfig:
    try:
        raw = yaml.safe_load(Path(path).read_text()) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return ExperimentConfig.from_dict(raw)


def load_preset(name: str) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {PRESETS}")
    text = resources.files("sfsl.harness").joinpath("presets", f"{name}.yaml").read_text()
    return ExperimentConfig.from_dict(yaml.safe_load(text))


def build_population(cfg: ExperimentConfig, size: int | None = None, memo_dir=None) -> dict:
    size = size or cfg.population_size()
    sparse_m = cfg.m - cfg.dense_rows
    clients = {}
    if cfg.dataset_dir:
        files = sorted(Path(cfg.dataset_dir).glob("*.tsv"))
        if len(files) < size:
            raise ConfigError(f"{cfg.dataset_dir} holds {len(files)} datasets, need {size}")
        datasets = [read_dataset(f) for f in files[:size]]
    else:
        datasets = [
            synthesize_client(derive_rng(cfg.seed, "data", i), sparse_m, cfg.set_size, cfg.samples, cfg.history_len)
            for i in range(size)
        ]
    for i, data in enumerate(datasets):
        memo_path = Path(memo_dir) / f"client_{i}.memo" if memo_dir else None
        clients[i] = FederatedClient(i, data, memo_path=memo_path)
    return clients


def initial_model(cfg: ExperimentConfig) -> GlobalModel:
    return GlobalModel.random(cfg.m, cfg.d, derive_rng(cfg.seed, "init"), cfg.init_scale)


def linear_fit(xs, ys):
    """Least-squares line; returns (slope, intercept, r_squared)."""
    xs, ys = np.asarray(xs, dtype=float), np.asarray(ys, dtype=float)
    slope, intercept = np.polyfit(xs, ys, 1)
    resid = ys - (slope * xs + intercept)
    ss_tot = float(np.sum((ys - ys.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), r2


@dataclass
class ExperimentResult:
    rows: list
    summary: dict
    csv_path: Path | None = None
    summary_path: Path | None = None


def _predicted_client_comm(cfg: ExperimentConfig, scheme: str, n: int) -> float:
    params = resolve_params(cfg.cpp) if scheme == "sfsl" else resolve_params("CPP5")
    x = CostModelInput(n=n, s=cfg.set_size + cfg.dense_rows, m=cfg.m, d=cfg.d, p5=params.p5, p6=params.p6,
                       role="client", scheme=scheme)
    return predict_cost(x, "comm").total


def run_experiment(cfg: ExperimentConfig, out_dir=None, dropout: float | None = None,
                   transport: str | None = None, seed: int | None = None) -> ExperimentResult:
    """Run every round for every scheme (and every n of a sweep)."""
    if seed is not None:
        cfg = dataclasses.replace(cfg, seed=seed)
    if transport is not None:
        cfg = dataclasses.replace(cfg, transport=transport)
    ratio = float(cfg.dropout.get("ratio", 0.0)) if dropout is None else float(dropout)
    phase = cfg.dropout.get("phase", "update")
    n_values = list(cfg.n_values) or [cfg.n]
    out = Path(out_dir) if out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)

    rows = []
    for scheme in cfg.schemes:
        for n in n_values:
            memo_dir = None
            if cfg.memo_dir or out:
                memo_dir = Path(cfg.memo_dir) if cfg.memo_dir else out / "memos" / f"{scheme}_n{n}"
                memo_dir.mkdir(parents=True, exist_ok=True)
            clients = build_population(cfg, cfg.population_size(n), memo_dir)
            model = initial_model(cfg)
            for r in range(cfg.rounds):
                rc = cfg.round_config(r, scheme, n)
                plan = NO_DROPOUT
                if ratio > 0:
                    # dropouts are drawn among the clients the round will select
                    chosen = select_clients(clients.keys(), n, derive_rng(cfg.seed, "select", r))
                    plan = inject_dropout(chosen, ratio, derive_rng(cfg.seed, "dropout", r), phase)
                try:
                    model, metrics = run_round(model, clients, rc, plan, cfg.transport, stop_after_union=cfg.psu_only)
                except RoundAborted as exc:
                    metrics = exc.metrics
                row = metrics.summary_row()
                row["scheme"] = scheme
                row["cpp"] = cfg.cpp if scheme == "sfsl" else "CPP5"
                row["dropout_ratio"] = ratio
                row["client_union_bytes_mean"] = metrics.mean_client_bytes("psu") + metrics.mean_client_bytes("union")
                row["predicted_client_comm"] = _predicted_client_comm(cfg, "psu" if cfg.psu_only else scheme, n)
                row["conservation_ok"] = int(not metrics.traffic.conservation_errors())
                rows.append(row)
                log.info("%s n=%d round %d: %s", scheme, n, r, "aborted" if metrics.aborted else "ok")
            if out:
                save_checkpoint(model, out / f"model_{scheme}_n{n}.ckpt")

    summary = summarize(cfg, rows)
    result = ExperimentResult(rows, summary)
    if out:
        result.csv_path = out / "metrics.csv"
        result.summary_path = out / "summary.json"
        write_csv(rows, result.csv_path)
        result.summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True, default=_jsonable))
    return result


def _jsonable(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    return str(v)


def write_csv(rows: list, path) -> None:
    fields = []
    for row in rows:
        for k in row:
            if k not in fields:
                fields.append(k)
    with Path(path).open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for row in rows:
            w.writerow(row)


def summarize(cfg: ExperimentConfig, rows: list) -> dict:
    summary = {"name": cfg.name, "rounds": len(rows), "aborted": sum(r["aborted"] for r in rows), "schemes": {}}
    for scheme in cfg.schemes:
        mine = [r for r in rows if r["scheme"] == scheme and not r["aborted"]]
        if not mine:
            continue
        summary["schemes"][scheme] = {
            "client_bytes_mean": float(np.mean([r["client_bytes_mean"] for r in mine])),
            "server_bytes_mean": float(np.mean([r["server_bytes"] for r in mine])),
            "seconds_mean": float(np.mean([r["seconds_total"] for r in mine])),
            "union_size_mean": float(np.mean([r["union_size"] for r in mine])),
        }
    schemes = summary["schemes"]
    if "sfsl" in schemes and "sfl" in schemes:
        a, b = schemes["sfsl"]["client_bytes_mean"], schemes["sfl"]["client_bytes_mean"]
        summary["client_bytes_reduction"] = 1.0 - a / b if b else math.nan
    ok = [r for r in rows if not r["aborted"]]
    ns = sorted({r["n"] for r in ok})
    if len(ns) >= 3:
        key = "client_union_bytes_mean" if cfg.psu_only else "client_bytes_mean"
        xs = [r["n"] for r in ok]
        slope, intercept, r2 = linear_fit(xs, [r[key] for r in ok])
        summary["trend"] = {"metric": key, "slope_bytes_per_client": slope, "intercept": intercept, "r_squared": r2}
        _, _, r2_pred = linear_fit(xs, [r["predicted_client_comm"] for r in ok])
        summary["trend"]["predicted_r_squared"] = r2_pred
    summary["conservation_ok"] = all(r["conservation_ok"] for r in rows)
    return summary
