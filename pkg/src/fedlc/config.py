"""Experiment configuration: a TOML file with one table per subsystem."""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, fields

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending key."""

    def __init__(self, field_name: str, message: str):
        self.field = field_name
        super().__init__(f"config field '{field_name}': {message}")


@dataclass
class DatasetConfig:
    kind: str = "synthetic"  # synthetic | idx | csv
    # synthetic knobs
    lam: float = 0.0
    mu: float = 0.0
    dim: int = 60
    num_classes: int = 10
    min_size: int = 32
    power_law_exponent: float = 1.25
    # file-backed datasets: the global test set is always a separate input
    train_images: str = ""
    train_labels: str = ""
    test_images: str = ""
    test_labels: str = ""
    train_csv: str = ""
    test_csv: str = ""


@dataclass
class PartitionConfig:
    scheme: str = "native"  # native | quantity | dirichlet
    alpha: int = 2
    beta: float = 0.5
    min_size: int = 0  # 0 means the default rule min(128, n // m)


@dataclass
class LossConfig:
    kind: str = "standard_ce"  # standard_ce | fedlc | fedrs
    tau: float = 1.0
    count_floor: float = 1.0
    variant: str = "inclusive"
    prox_mu: float = 0.0
    alpha_rs: float = 0.5
    expel_missing: bool = False


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    partition: PartitionConfig = field(default_factory=PartitionConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    num_clients: int = 2
    rounds: int = 1
    local_epochs: int = 1
    batch_size: int = 128
    lr: float = 0.01
    arch: str = "logistic"  # logistic | mlp
    hidden: int = 64
    strategy: str = "fedavg"  # fedavg | fednova | scaffold | fedopt
    server_lr: float = 0.1
    seeds: list[int] = field(default_factory=lambda: [0])
    output_dir: str = "runs"
    test_fraction: float = 0.2
    track_deviation: bool = False


_TOP_KEYS = {"name", "num_clients", "rounds", "local_epochs", "batch_size", "lr",
             "arch", "hidden", "strategy", "server_lr", "seeds", "output_dir",
             "test_fraction", "track_deviation"}


def _fill(section_cls, table: dict, section: str):
    obj = section_cls()
    known = {f.name for f in fields(section_cls)}
    for key, value in table.items():
        name = "lam" if key == "lambda" else key
        if name not in known:
            raise ConfigError(f"{section}.{key}", "unknown key")
        setattr(obj, name, value)
    return obj


def parse_config(text: str) -> ExperimentConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("<toml>", str(exc)) from None

    cfg = ExperimentConfig()
    for key, value in raw.items():
        if key == "dataset":
            cfg.dataset = _fill(DatasetConfig, value, "dataset")
        elif key == "partition":
            cfg.partition = _fill(PartitionConfig, value, "partition")
        elif key == "loss":
            cfg.loss = _fill(LossConfig, value, "loss")
        elif key in _TOP_KEYS:
            setattr(cfg, key, value)
        else:
            raise ConfigError(key, "unknown key")
    validate_config(cfg)
    return cfg


def load_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def validate_config(cfg: ExperimentConfig) -> None:
    def positive(name, value, strict=True):
        if (value <= 0) if strict else (value < 0):
            raise ConfigError(name, f"must be {'positive' if strict else 'non-negative'}, got {value}")

    if cfg.dataset.kind not in ("synthetic", "idx", "csv"):
        raise ConfigError("dataset.kind", f"must be synthetic, idx or csv, got {cfg.dataset.kind!r}")
    if cfg.partition.scheme not in ("native", "quantity", "dirichlet"):
        raise ConfigError("partition.scheme",
                          f"must be native, quantity or dirichlet, got {cfg.partition.scheme!r}")
    if cfg.dataset.kind == "synthetic" and cfg.partition.scheme != "native":
        raise ConfigError("partition.scheme", "synthetic data is generated per client; use 'native'")
    if cfg.dataset.kind != "synthetic" and cfg.partition.scheme == "native":
        raise ConfigError("partition.scheme", "file-backed datasets need quantity or dirichlet")
    if cfg.loss.kind not in ("standard_ce", "fedlc", "fedrs"):
        raise ConfigError("loss.kind", f"must be standard_ce, fedlc or fedrs, got {cfg.loss.kind!r}")
    if cfg.loss.variant not in ("inclusive", "exclusive"):
        raise ConfigError("loss.variant", f"must be inclusive or exclusive, got {cfg.loss.variant!r}")
    if cfg.strategy not in ("fedavg", "fednova", "scaffold", "fedopt"):
        raise ConfigError("strategy", f"must be fedavg, fednova, scaffold or fedopt, got {cfg.strategy!r}")
    if cfg.arch not in ("logistic", "mlp"):
        raise ConfigError("arch", f"must be logistic or mlp, got {cfg.arch!r}")

    positive("num_clients", cfg.num_clients)
    positive("rounds", cfg.rounds)
    positive("local_epochs", cfg.local_epochs)
    positive("batch_size", cfg.batch_size)
    positive("lr", cfg.lr, strict=False)
    positive("hidden", cfg.hidden)
    positive("server_lr", cfg.server_lr)
    positive("loss.tau", cfg.loss.tau, strict=False)
    positive("loss.count_floor", cfg.loss.count_floor)
    positive("loss.prox_mu", cfg.loss.prox_mu, strict=False)
    if not 0 < cfg.loss.alpha_rs <= 1:
        raise ConfigError("loss.alpha_rs", f"must lie in (0, 1], got {cfg.loss.alpha_rs}")
    if not cfg.seeds:
        raise ConfigError("seeds", "need at least one seed")
    if any(s < 0 for s in cfg.seeds):
        raise ConfigError("seeds", "seeds must be non-negative")
    if not 0 < cfg.test_fraction < 1:
        raise ConfigError("test_fraction", f"must lie in (0, 1), got {cfg.test_fraction}")
    positive("dataset.lambda", cfg.dataset.lam, strict=False)
    positive("dataset.mu", cfg.dataset.mu, strict=False)
    positive("dataset.dim", cfg.dataset.dim)
    positive("dataset.min_size", cfg.dataset.min_size)
    positive("dataset.power_law_exponent", cfg.dataset.power_law_exponent)
    if cfg.dataset.num_classes < 2:
        raise ConfigError("dataset.num_classes", "need at least 2 classes")
    if cfg.partition.scheme == "quantity" and cfg.partition.alpha < 1:
        raise ConfigError("partition.alpha", f"must be >= 1, got {cfg.partition.alpha}")
    if cfg.partition.scheme == "dirichlet" and cfg.partition.beta <= 0:
        raise ConfigError("partition.beta", f"must be positive, got {cfg.partition.beta}")
    if cfg.partition.min_size < 0:
        raise ConfigError("partition.min_size", "must be >= 0 (0 selects the default)")
    if cfg.dataset.kind == "idx":
        for name in ("train_images", "train_labels", "test_images", "test_labels"):
            if not getattr(cfg.dataset, name):
                raise ConfigError(f"dataset.{name}", "required for idx datasets")
    if cfg.dataset.kind == "csv":
        for name in ("train_csv", "test_csv"):
            if not getattr(cfg.dataset, name):
                raise ConfigError(f"dataset.{name}", "required for csv datasets")


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, list):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise TypeError(f"cannot serialize {type(v)}")


def serialize_config(cfg: ExperimentConfig) -> str:
    """Emit the canonical TOML form; parse(serialize(cfg)) == cfg."""
    lines = []
    for key in ("name", "num_clients", "rounds", "local_epochs", "batch_size", "lr",
                "arch", "hidden", "strategy", "server_lr", "seeds", "output_dir",
                "test_fraction", "track_deviation"):
        lines.append(f"{key} = {_toml_value(getattr(cfg, key))}")
    lines.append("")
    lines.append("[dataset]")
    for f in fields(DatasetConfig):
        key = "lambda" if f.name == "lam" else f.name
        lines.append(f"{key} = {_toml_value(getattr(cfg.dataset, f.name))}")
    lines.append("")
    lines.append("[partition]")
    for f in fields(PartitionConfig):
        lines.append(f"{f.name} = {_toml_value(getattr(cfg.partition, f.name))}")
    lines.append("")
    lines.append("[loss]")
    for f in fields(LossConfig):
        lines.append(f"{f.name} = {_toml_value(getattr(cfg.loss, f.name))}")
    return "\n".join(lines) + "\n"
