"""Synthetic street scenes for the six augmented SBS environments.

Every scene is generated from an explicit seed; two calls with the same
config produce identical scenes.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import geometry as geo

DISTRIBUTIONS = ("uniform", "gaussian", "gamma", "binomial", "poisson", "beta")
MAX_RETRIES = 1000

_BINOMIAL_N = 20
_POISSON_LAM = 10
_POISSON_KMAX = 20


class ConfigError(ValueError):
    pass


class ScenarioError(RuntimeError):
    pass


@dataclass(frozen=True)
class ScenarioConfig:
    sbs_id: str
    distribution: str
    street_x_range: tuple[float, float]
    radar_height: float
    user_y: float
    object_y_range: tuple[float, float]
    speed_range: tuple[float, float]
    n_samples: int
    block_ratio: float
    object_height_range: tuple[float, float] = (1.0, 4.5)
    user_x: float = 0.0
    user_z: float = 1.5
    frame_interval: float = 1.0
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("street_x_range", "object_height_range", "object_y_range", "speed_range"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        self.validate()

    @property
    def antenna_pos(self) -> tuple[float, float, float]:
        return (0.0, 0.0, float(self.radar_height))

    @property
    def user_pos(self) -> tuple[float, float, float]:
        return (float(self.user_x), float(self.user_y), float(self.user_z))

    def validate(self) -> None:
        if self.distribution not in DISTRIBUTIONS:
            raise ConfigError(f"distribution: unknown kind {self.distribution!r}")
        for name in ("street_x_range", "object_height_range", "object_y_range", "speed_range"):
            a, b = getattr(self, name)
            if len(getattr(self, name)) != 2 or not a <= b:
                raise ConfigError(f"{name}: not a valid interval [{a}, {b}]")
        if self.speed_range[0] <= 0:
            raise ConfigError("speed_range: speeds must be > 0")
        if self.object_y_range[0] <= 0:
            raise ConfigError("object_y_range: lanes must have y > 0")
        if not self.user_y > self.object_y_range[1]:
            raise ConfigError("user_y: must exceed max(object_y_range)")
        if not 0.0 <= self.block_ratio <= 1.0:
            raise ConfigError("block_ratio: must lie in [0, 1]")
        if self.n_samples < 0:
            raise ConfigError("n_samples: must be >= 0")
        if self.radar_height <= 0 or self.user_z <= 0:
            raise ConfigError("radar_height/user_z: must be > 0")
        if self.frame_interval < 0:
            raise ConfigError("frame_interval: must be >= 0")


# Street layouts and traffic mix per SBS.
SCENARIO_ROWS = {
    "SBS1": dict(distribution="uniform", street_x_range=(-20, 20), radar_height=3, user_y=12,
                 object_y_range=(1, 11), speed_range=(3, 9), n_samples=10_000, block_ratio=0.10),
    "SBS2": dict(distribution="gaussian", street_x_range=(-30, 30), radar_height=4, user_y=13,
                 object_y_range=(1, 12), speed_range=(3, 11), n_samples=15_000, block_ratio=0.25),
    "SBS3": dict(distribution="gamma", street_x_range=(-40, 40), radar_height=5, user_y=14,
                 object_y_range=(1, 13), speed_range=(3, 13), n_samples=30_000, block_ratio=0.50),
    "SBS4": dict(distribution="binomial", street_x_range=(-50, 50), radar_height=6, user_y=15,
                 object_y_range=(1, 14), speed_range=(3, 15), n_samples=25_000, block_ratio=0.75),
    "SBS5": dict(distribution="poisson", street_x_range=(-60, 60), radar_height=7, user_y=16,
                 object_y_range=(1, 15), speed_range=(3, 17), n_samples=20_000, block_ratio=0.90),
    "SBS6": dict(distribution="beta", street_x_range=(-50, 50), radar_height=5, user_y=13,
                 object_y_range=(1, 12), speed_range=(3, 9), n_samples=2_000, block_ratio=0.50),
}


def scenario_config(sbs_id: str, **overrides) -> ScenarioConfig:
    return ScenarioConfig(sbs_id=sbs_id, **{**SCENARIO_ROWS[sbs_id], **overrides})


@dataclass(frozen=True)
class ObjectTrack:
    x0: float
    y0: float
    h: float
    v: float
    dir: int
    spawn: float = 0.0

    def position(self, t: float = 0.0) -> float:
        return self.x0 + self.dir * self.v * t


@dataclass
class Scenario:
    config: ScenarioConfig
    tracks: list[ObjectTrack] = field(default_factory=list)
    labels: list[geo.BlockageLabel] = field(default_factory=list)

    @property
    def user(self) -> tuple[float, float, float]:
        return self.config.user_pos

    @property
    def antenna(self) -> tuple[float, float, float]:
        return self.config.antenna_pos

    def n_blocked(self) -> int:
        return sum(lab.b for lab in self.labels)

    def to_dict(self) -> dict:
        cfg = asdict(self.config)
        return {
            "config": cfg,
            "user": list(self.user),
            "antenna": list(self.antenna),
            "tracks": [{"x0": t.x0, "y0": t.y0, "h": t.h, "v": t.v, "dir": t.dir,
                        "spawn": t.spawn} for t in self.tracks],
        }

    def to_json(self) -> str:
        # repr-precision floats keep the round trip lossless
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        cfg = ScenarioConfig(**d["config"])
        tracks = [ObjectTrack(x0=t["x0"], y0=t["y0"], h=t["h"], v=t["v"], dir=int(t["dir"]),
                              spawn=t["spawn"]) for t in d["tracks"]]
        return cls(config=cfg, tracks=tracks, labels=[label_track(t, cfg) for t in tracks])

    @classmethod
    def from_json(cls, text: str) -> "Scenario":
        return cls.from_dict(json.loads(text))


def sample_distribution(kind: str, interval, rng: np.random.Generator) -> float:
    """Draw one value from a named distribution mapped onto ``[a, b]``."""
    a, b = float(interval[0]), float(interval[1])
    if kind not in DISTRIBUTIONS:
        raise ConfigError(f"unknown distribution kind {kind!r}")
    if a > b:
        raise ConfigError(f"invalid interval [{a}, {b}]")
    if a == b:
        return a
    w = b - a
    if kind == "uniform":
        return float(rng.uniform(a, b))
    if kind == "gaussian":
        mid, sd = 0.5 * (a + b), w / 6.0
        for _ in range(MAX_RETRIES):
            v = rng.normal(mid, sd)
            if a <= v <= b:
                return float(v)
        return float(np.clip(v, a, b))
    if kind == "gamma":
        for _ in range(MAX_RETRIES):
            v = a + rng.gamma(2.0, w / 6.0)
            if v <= b:
                return float(v)
        return b
    if kind == "binomial":
        return a + w * rng.binomial(_BINOMIAL_N, 0.5) / _BINOMIAL_N
    if kind == "poisson":
        k = rng.poisson(_POISSON_LAM)
        while k > _POISSON_KMAX:
            k = rng.poisson(_POISSON_LAM)
        return a + w * k / _POISSON_KMAX
    return a + w * float(rng.beta(2.0, 2.0))


def label_track(track: ObjectTrack, cfg: ScenarioConfig) -> geo.BlockageLabel:
    obj = geo.object_from_position(track.x0, track.y0, track.v, track.dir)
    user = geo.user_localisation(cfg.user_x, cfg.user_y)
    return geo.label_from_localisation(obj, user, track.h, cfg.antenna_pos, cfg.user_pos)


def _draw_track(cfg: ScenarioConfig, rng: np.random.Generator, spawn: float) -> ObjectTrack:
    kind = cfg.distribution
    return ObjectTrack(
        x0=sample_distribution(kind, cfg.street_x_range, rng),
        y0=sample_distribution(kind, cfg.object_y_range, rng),
        h=sample_distribution(kind, cfg.object_height_range, rng),
        v=sample_distribution(kind, cfg.speed_range, rng),
        dir=geo.PLUS_X if rng.random() < 0.5 else geo.MINUS_X,
        spawn=spawn,
    )


def build_scenario(cfg: ScenarioConfig, rng: np.random.Generator | None = None) -> Scenario:
    """Generate ``cfg.n_samples`` tracks hitting the configured block ratio.

    The blocked count is ``round(block_ratio * n)``; the order of blocked and
    clear tracks is shuffled, then each slot is filled by rejection sampling.
    """
    if rng is None:
        rng = np.random.default_rng(cfg.rng_seed)
    n = cfg.n_samples
    n_block = int(round(cfg.block_ratio * n))
    wanted = np.zeros(n, dtype=int)
    wanted[:n_block] = 1
    rng.shuffle(wanted)

    tracks, labels = [], []
    for i, want in enumerate(wanted):
        spawn = i * cfg.frame_interval
        for _ in range(MAX_RETRIES):
            track = _draw_track(cfg, rng, spawn)
            label = label_track(track, cfg)
            if label.b == want:
                break
        else:
            kind = "blocked" if want else "non-blocked"
            raise ScenarioError(
                f"{cfg.sbs_id}: could not draw a {kind} track in {MAX_RETRIES} tries; "
                f"block_ratio={cfg.block_ratio} is not reachable with this geometry")
        tracks.append(track)
        labels.append(label)
    return Scenario(config=cfg, tracks=tracks, labels=labels)


def advance(track: ObjectTrack, dt: float) -> ObjectTrack:
    if dt < 0:
        raise ValueError(f"dt must be >= 0, got {dt}")
    if dt == 0:
        return track
    return replace(track, x0=track.x0 + track.dir * track.v * dt)


def slant_range(track: ObjectTrack, H: float, t: float = 0.0) -> float:
    x = track.position(t)
    return math.sqrt(x * x + track.y0 ** 2 + (H - track.h) ** 2)
