"""Experiment configuration: TOML files, named profiles and a stable hash."""
from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import tomli
import tomli_w

from .adblock import AdConfig
from .channel import SystemConfig
from .fpnet import EncoderConfig, TrainConfig
from .metrics import ANCHORED_TABLE, LADDER_TABLE, McsTable, TimingModel


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EnvironmentConfig:
    n_zones: int = 20
    n_scatterers: int = 30
    seed: int = 0
    base_grid: tuple[int, int] = (4, 5)
    zone_size: float = 1.3
    jitter_radius: float = 0.02
    wall_loss_db: float = 10.0
    scatter_gain: float = 1.0
    n_corridor_scatterers: int = 8
    snr_db: float = 12.0
    link_budget: bool = True


@dataclass(frozen=True)
class DataConfig:
    n_per_zone: int = 150
    splits: tuple[float, float, float] = (0.8, 0.1, 0.1)
    seed: int = 1
    split_seed: int = 0
    # corridor packets; half join FPNet's reconstruction training, half are held out
    n_ood: int = 600
    ood_seed: int = 2
    ood_in_training: bool = True


@dataclass(frozen=True)
class EncoderSection:
    codeword_lens: tuple[int, ...] = (20,)
    quant_bits: int = 5
    conv_filters: int = 2
    kernel: int = 3


@dataclass(frozen=True)
class SweepConfig:
    alphas: tuple[float, ...] = (1.0, 10.0, 30.0, 70.0, 150.0, 300.0)
    codeword_lens: tuple[int, ...] = (12, 14, 16, 18, 20)
    zone_counts: tuple[int, ...] = (5, 10, 20, 40)
    knn_ks: tuple[int, ...] = (1, 3, 5, 7, 9)
    drift_intensity: float = 0.3
    drift_seed: int = 7
    fine_tune_sizes: tuple[int, ...] = (150, 600, 2400)
    fine_tune_epochs: int = 40
    position_scale: float = 0.01
    reflectivity_scale: float = 0.3


@dataclass(frozen=True)
class LinkConfig:
    snr_db: float = 25.0
    n_symbols: int = 64
    seed: int = 0
    mcs_table: str = "ladder"  # "ladder", "anchored" or "custom"
    mcs_entries: tuple[tuple[float, float], ...] = ()

    def table(self) -> McsTable:
        if self.mcs_table == "ladder":
            return LADDER_TABLE
        if self.mcs_table == "anchored":
            return ANCHORED_TABLE
        if self.mcs_table == "custom":
            return McsTable.from_pairs(self.mcs_entries)
        raise ConfigError(f"unknown mcs_table {self.mcs_table!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    system: SystemConfig = field(default_factory=SystemConfig)
    environment: EnvironmentConfig = field(default_factory=EnvironmentConfig)
    data: DataConfig = field(default_factory=DataConfig)
    encoder: EncoderSection = field(default_factory=EncoderSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    ad: AdConfig = field(default_factory=AdConfig)
    sweeps: SweepConfig = field(default_factory=SweepConfig)
    link: LinkConfig = field(default_factory=LinkConfig)
    timing: TimingModel = field(default_factory=TimingModel)
    profile: str = "default"
    output: str = "runs/default"

    def encoder_config(self, codeword_len: int | None = None) -> EncoderConfig:
        return EncoderConfig.for_system(
            self.system,
            codeword_len=codeword_len or self.encoder.codeword_lens[-1],
            quant_bits=self.encoder.quant_bits,
            conv_filters=self.encoder.conv_filters,
            kernel=self.encoder.kernel,
        )

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))

    def hash(self) -> str:
        """Digest of the resolved configuration, independent of key order."""
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


# overrides applied on top of the defaults, before the user's file
PROFILES: dict[str, dict] = {
    "default": {},
    "quick": {
        "train": {"epochs_stage1": 30, "epochs_stage2": 80, "lr_stage1": 2e-3, "lr_stage2": 2e-3, "lr_schedule": "cosine"},
        "ad": {"epochs": 60, "lr": 1e-3},
    },
    "paper-scale": {
        "train": {"epochs_stage1": 500, "epochs_stage2": 300},
        "ad": {"epochs": 300},
        "data": {"n_per_zone": 500},
    },
}


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _coerce(value, ftype, where: str):
    """Convert TOML values to the field's declared type, rejecting mismatches."""
    t = str(ftype)
    if t.startswith("tuple"):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list, got {type(value).__name__}")
        inner = t[len("tuple[") : -1]
        if inner.startswith("tuple"):
            return tuple(tuple(float(x) for x in v) for v in value)
        scalar = inner.split(",")[0].strip()
        return tuple(_coerce(v, scalar, where) for v in value)
    if t in ("int", "<class 'int'>"):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if t in ("float", "<class 'float'>"):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if t in ("bool", "<class 'bool'>"):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if t in ("str", "<class 'str'>"):
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    return value


def _build(cls, values: dict, where: str):
    if not isinstance(values, dict):
        raise ConfigError(f"[{where}] must be a table")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - set(fields))
    if unknown:
        raise ConfigError(f"[{where}] has unknown keys: {', '.join(unknown)}")
    kwargs = {}
    for name, value in values.items():
        f = fields[name]
        if dataclasses.is_dataclass(f.default_factory if f.default_factory is not dataclasses.MISSING else None):
            kwargs[name] = _build(f.default_factory, value, name)
        else:
            kwargs[name] = _coerce(value, f.type, f"{where}.{name}")
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{where}] {exc}") from exc


def from_dict(values: dict, profile: str | None = None) -> ExperimentConfig:
    """Resolve ``values`` over the defaults of ``profile`` (or the file's own ``profile`` key)."""
    profile = profile or values.get("profile", "default")
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}; choose from {', '.join(PROFILES)}")
    merged = _merge(PROFILES[profile], values)
    merged["profile"] = profile
    return _build(ExperimentConfig, merged, "root")


def load_config(path=None, profile: str | None = None, overrides: dict | None = None) -> ExperimentConfig:
    values: dict = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file {p} does not exist")
        try:
            values = tomli.loads(p.read_text())
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"{p}: {exc}") from exc
    if overrides:
        values = _merge(values, overrides)
    return from_dict(values, profile)


def dump_config(cfg: ExperimentConfig) -> str:
    return tomli_w.dumps(cfg.to_dict())


def write_resolved(cfg: ExperimentConfig, run_dir) -> str:
    """Store the resolved config and its hash in ``run_dir``; returns the hash."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.toml").write_text(dump_config(cfg))
    h = cfg.hash()
    (run_dir / "config.hash").write_text(h + "\n")
    return h


def read_resolved(run_dir) -> ExperimentConfig:
    p = Path(run_dir) / "config.toml"
    if not p.exists():
        raise ConfigError(f"{run_dir} has no resolved config.toml")
    values = tomli.loads(p.read_text())
    # the stored file is already resolved, so no profile overrides apply again
    cfg = _build(ExperimentConfig, values, "root")
    stored = (Path(run_dir) / "config.hash").read_text().strip() if (Path(run_dir) / "config.hash").exists() else None
    if stored is not None and stored != cfg.hash():
        raise ConfigError(f"config hash mismatch in {run_dir}: stored {stored}, recomputed {cfg.hash()}")
    return cfg
