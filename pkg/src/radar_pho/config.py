"""Run configuration: strict JSON loading, seed streams, provenance hash."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import typing
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .channel import CodebookConfig
from .radar import RadarConfig, RadarError
from .scene import SCENARIO_ROWS, ConfigError, ScenarioConfig, scenario_config

DEFAULT_P_SHIFT = {"SBS1": 0.10, "SBS2": 0.10, "SBS3": 0.10, "SBS4": 0.08, "SBS5": 0.08, "SBS6": 0.10}


@dataclass(frozen=True)
class SplitConfig:
    eval_size: int = 2000
    personal_size: int = 500


@dataclass(frozen=True)
class TrainingConfig:
    lr: float = 1e-3
    batch_size: int = 100
    local_epochs: int = 10
    personal_epochs: int = 5
    personal_batch_size: int = 50
    personal_holdout: float = 0.2
    mae_weight: float = 1.0
    mask_mae: bool = False


@dataclass(frozen=True)
class FLConfig:
    clients: tuple[str, ...] = ("SBS1", "SBS2", "SBS3", "SBS4", "SBS5")
    new_clients: tuple[str, ...] = ("SBS6",)
    max_rounds: int = 30
    delta: float = 1e-3
    patience: int = 3
    stopping: bool = True
    pool_per_client: int = 1000


@dataclass(frozen=True)
class PHOConfig:
    p_shift: dict = field(default_factory=lambda: dict(DEFAULT_P_SHIFT))
    sweep: tuple[float, ...] = (0.0, 0.02, 0.04, 0.06, 0.08, 0.10)
    spho_denominator: str = "blocked"
    t_fft: float = 6e-3
    t_c: float = 26e-3
    t_inf: float = 1e-3
    t_ho: float = 80e-3
    r_alt: float = 0.8
    r_nlos: float = 0.3
    object_length: float = 4.0
    dt: float = 1e-3


@dataclass(frozen=True)
class DemoConfig:
    sbs: str = "SBS1"
    n_tracks: int = 10
    block_ratio: float = 0.3
    spacing: float = 80.0
    dt: float = 0.01


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    features_from: str = "radar"
    height_noise: float = 0.0
    scenarios: dict = field(default_factory=dict)       # sbs_id -> ScenarioConfig
    radar: RadarConfig = field(default_factory=RadarConfig)
    codebook: CodebookConfig = field(default_factory=CodebookConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    fl: FLConfig = field(default_factory=FLConfig)
    pho: PHOConfig = field(default_factory=PHOConfig)
    demo: DemoConfig = field(default_factory=DemoConfig)

    @property
    def sbs_ids(self) -> list[str]:
        return sorted(self.scenarios)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["scenarios"] = {k: dataclasses.asdict(v) for k, v in sorted(self.scenarios.items())}
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=list).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def stream(self, name: str) -> np.random.Generator:
        return stream(self.seed, name)

    def p_shift_for(self, sbs_id: str) -> float:
        return float(self.pho.p_shift.get(sbs_id, 0.10))


def stream(root: int, name: str) -> np.random.Generator:
    """Independent generator for a named purpose, e.g. ``scene/SBS3``."""
    return np.random.default_rng([int(root), zlib.crc32(name.encode())])


def stream_seed(root: int, name: str) -> int:
    return int(stream(root, name).integers(0, 2**31 - 1))


def _build(cls, data, where: str, errors: list[str]):
    if not isinstance(data, dict):
        errors.append(f"{where}: expected an object")
        return None
    fields = {f.name: f for f in dataclasses.fields(cls)}
    hints = typing.get_type_hints(cls)
    for k in data:
        if k not in fields:
            errors.append(f"{where}.{k}: unknown key")
    kw = {}
    for k, v in data.items():
        if k not in fields:
            continue
        hint = hints[k]
        ok = True
        if hint is bool:
            ok = isinstance(v, bool)
        elif hint is int:
            ok = isinstance(v, int) and not isinstance(v, bool)
        elif hint is float:
            ok = isinstance(v, (int, float)) and not isinstance(v, bool)
        elif hint is str:
            ok = isinstance(v, str)
        elif typing.get_origin(hint) is tuple:
            ok = isinstance(v, list)
            v = tuple(v) if ok else v
        elif hint is dict:
            ok = isinstance(v, dict)
        if not ok:
            errors.append(f"{where}.{k}: bad type {type(v).__name__}, expected {hint}")
            continue
        kw[k] = v
    try:
        return cls(**kw)
    except (ValueError, TypeError, RadarError) as exc:
        errors.append(f"{where}: {exc}")
        return None


def from_dict(data: dict) -> RunConfig:
    """Build and validate a RunConfig; all problems are reported together."""
    errors: list[str] = []
    if not isinstance(data, dict):
        raise ConfigError("config: expected a JSON object")
    known = {f.name for f in dataclasses.fields(RunConfig)}
    for k in data:
        if k not in known:
            errors.append(f"{k}: unknown key")
    kw = {}
    for k in ("seed", "features_from", "height_noise"):
        if k in data:
            kw[k] = data[k]
    if not isinstance(kw.get("seed", 0), int):
        errors.append("seed: expected an integer")
    if kw.get("features_from", "radar") not in ("radar", "oracle"):
        errors.append("features_from: expected 'radar' or 'oracle'")
    sections = {"radar": RadarConfig, "codebook": CodebookConfig, "split": SplitConfig,
                "training": TrainingConfig, "fl": FLConfig, "pho": PHOConfig, "demo": DemoConfig}
    for name, cls in sections.items():
        if name in data:
            obj = _build(cls, data[name], name, errors)
            if obj is not None:
                kw[name] = obj

    scen = {}
    raw = data.get("scenarios", {sid: {} for sid in SCENARIO_ROWS})
    if not isinstance(raw, dict):
        errors.append("scenarios: expected an object keyed by SBS id")
        raw = {}
    sc_fields = {f.name for f in dataclasses.fields(ScenarioConfig)}
    for sid, over in raw.items():
        if not isinstance(over, dict):
            errors.append(f"scenarios.{sid}: expected an object")
            continue
        bad = [k for k in over if k not in sc_fields or k == "sbs_id"]
        errors += [f"scenarios.{sid}.{k}: unknown key" for k in bad]
        if bad:
            continue
        over = {k: tuple(v) if isinstance(v, list) else v for k, v in over.items()}
        try:
            scen[sid] = scenario_config(sid, **over) if sid in SCENARIO_ROWS else ScenarioConfig(sbs_id=sid, **over)
        except (ConfigError, TypeError, ValueError) as exc:
            errors.append(f"scenarios.{sid}: {exc}")
    kw["scenarios"] = scen

    pho = kw.get("pho", PHOConfig())
    if pho.spho_denominator not in ("blocked", "all"):
        errors.append("pho.spho_denominator: expected 'blocked' or 'all'")
    for sid, p in pho.p_shift.items():
        if not isinstance(p, (int, float)) or not 0 <= p < 1:
            errors.append(f"pho.p_shift.{sid}: must be in [0, 1)")
    fl = kw.get("fl", FLConfig())
    for sid in (*fl.clients, *fl.new_clients):
        if sid not in scen:
            errors.append(f"fl: client {sid} has no scenario")
    if kw.get("demo", DemoConfig()).sbs not in scen:
        errors.append("demo.sbs: no such scenario")
    if errors:
        raise ConfigError("invalid config:\n  " + "\n  ".join(errors))
    return RunConfig(**kw)


def load(path) -> RunConfig:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    return from_dict(data)


def with_overrides(cfg: RunConfig, seed: int | None = None, features_from: str | None = None,
                   p_shift: float | None = None) -> RunConfig:
    out = cfg
    if seed is not None:
        out = dataclasses.replace(out, seed=seed)
    if features_from is not None:
        if features_from not in ("radar", "oracle"):
            raise ConfigError("features_from: expected 'radar' or 'oracle'")
        out = dataclasses.replace(out, features_from=features_from)
    if p_shift is not None:
        if not 0 <= p_shift < 1:
            raise ConfigError("p_shift: must be in [0, 1)")
        out = dataclasses.replace(out, pho=dataclasses.replace(
            out.pho, p_shift={sid: p_shift for sid in out.scenarios}))
    return out
