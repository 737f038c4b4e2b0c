"""Beam codebook, wideband LoS/NLoS channel with blockage gating, RSS sweep,
and a two-SBS serving-cell timeline."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from .scene import Scenario


@dataclass(frozen=True)
class CodebookConfig:
    M: int = 16
    B: int = 16
    d_over_lambda: float = 0.5
    sector: tuple[float, float] = (-math.pi / 2, math.pi / 2)
    grid: str = "dft"   # "dft": sin(psi) uniform on [-1, 1); "circle": psi_i = 2*pi*i/B

    def __post_init__(self):
        if self.M < 1:
            raise ValueError("M: must be >= 1")
        if self.B < 1:
            raise ValueError("B: must be >= 1")
        if self.grid not in ("dft", "circle"):
            raise ValueError("grid: must be 'dft' or 'circle'")

    def angles(self) -> np.ndarray:
        i = np.arange(self.B)
        if self.grid == "circle":
            return 2 * np.pi * i / self.B
        return np.arcsin(-1.0 + 2.0 * i / self.B)


def steering(M: int, d_over_lambda: float, theta: float) -> np.ndarray:
    """Unnormalised ULA response; elevation does not enter a horizontal array."""
    return np.exp(2j * np.pi * d_over_lambda * np.arange(M) * np.sin(theta))


def build_codebook(cfg: CodebookConfig) -> np.ndarray:
    """Beams as rows, shape ``(B, M)``, each of unit norm."""
    psi = cfg.angles()
    n = np.arange(cfg.M)
    return np.exp(2j * np.pi * cfg.d_over_lambda * np.outer(np.sin(psi), n)) / math.sqrt(cfg.M)


@dataclass(frozen=True)
class Path:
    alpha: complex
    tau: float
    theta: float
    phi: float = 0.0
    is_los: bool = False


@dataclass
class PathSet:
    paths: list[Path]
    M: int = 16
    K: int = 16
    Q: int = 4
    Ts: float = 1e-9
    d_over_lambda: float = 0.5
    pulse: str = "sinc"

    def __post_init__(self):
        if sum(p.is_los for p in self.paths) > 1:
            raise ValueError("at most one LoS path allowed")
        if any(p.tau < 0 for p in self.paths):
            raise ValueError("path delays must be >= 0")
        if self.pulse != "sinc":
            raise ValueError(f"unknown pulse {self.pulse!r}")

    @property
    def los(self) -> Path | None:
        return next((p for p in self.paths if p.is_los), None)

    @property
    def nlos(self) -> list[Path]:
        return [p for p in self.paths if not p.is_los]


@dataclass
class ChannelState:
    h: np.ndarray     # (K, M)
    b: int

    def __post_init__(self):
        if not np.all(np.isfinite(self.h)):
            raise ValueError("channel has non-finite entries")


def _path_term(ps: PathSet, path: Path, k: int) -> np.ndarray:
    q = np.arange(ps.Q)
    taps = np.sinc((q * ps.Ts - path.tau) / ps.Ts) * np.exp(-2j * np.pi * k * q / ps.K)
    return path.alpha * taps.sum() * steering(ps.M, ps.d_over_lambda, path.theta)


def channel_response(ps: PathSet, k: int, b: int) -> np.ndarray:
    """Channel vector on subcarrier ``k``; the LoS term is switched off when ``b`` is 1."""
    if not 0 <= k < ps.K:
        raise ValueError(f"subcarrier {k} out of range [0, {ps.K})")
    h = np.zeros(ps.M, dtype=complex)
    for p in ps.nlos:
        h += _path_term(ps, p, k)
    if not b and ps.los is not None:
        h += _path_term(ps, ps.los, k)
    return h


def channel_state(ps: PathSet, b: int) -> ChannelState:
    return ChannelState(np.stack([channel_response(ps, k, b) for k in range(ps.K)]), int(b))


def rss(h: np.ndarray, f: np.ndarray) -> float:
    """Received power summed over subcarriers; ``h`` is ``(K, M)``."""
    h = np.atleast_2d(h)
    if h.shape[1] != len(f):
        raise ValueError(f"beam length {len(f)} does not match {h.shape[1]} antennas")
    return float(np.sum(np.abs(h.conj() @ f) ** 2))


def best_beam(h: np.ndarray, codebook: np.ndarray) -> tuple[int, float]:
    """Exhaustive sweep; ties go to the lowest index."""
    codebook = np.atleast_2d(codebook)
    if codebook.size == 0:
        raise ValueError("empty codebook")
    h = np.atleast_2d(h)
    if h.shape[1] != codebook.shape[1]:
        raise ValueError("codebook and channel dimensions differ")
    powers = np.sum(np.abs(h.conj() @ codebook.T) ** 2, axis=0)
    i = int(np.argmax(powers))
    return i, float(powers[i])


def synthetic_paths(antenna, user, rng: np.random.Generator, M: int = 16, K: int = 16, Q: int = 4,
                    n_nlos: int = 2, nlos_ratio: tuple[float, float] = (0.05, 0.2),
                    Ts: float = 1e-9) -> PathSet:
    """One LoS path toward the user plus weaker scattered paths.

    The LoS gain falls off as 1/distance; array broadside points along +y
    for an SBS on the near kerb and along -y for one on the far side.
    """
    lo, hi = nlos_ratio
    if not 0 <= lo <= hi <= 0.2:
        raise ValueError("NLoS gains must stay within 0.2 of the LoS gain")
    dx, dy, dz = (u - a for u, a in zip(user, antenna))
    dist = math.sqrt(dx * dx + dy * dy + dz * dz)
    theta = math.atan2(dx, abs(dy)) if dy != 0 else math.copysign(math.pi / 2, dx)
    a_los = 1.0 / dist
    paths = [Path(a_los, 0.0, theta, math.atan2(dz, math.hypot(dx, dy)), True)]
    for _ in range(n_nlos):
        g = a_los * rng.uniform(lo, hi)
        paths.append(Path(g * np.exp(2j * np.pi * rng.uniform()), float(rng.uniform(0, (Q - 1) * Ts)),
                          float(rng.uniform(-math.pi / 2, math.pi / 2)), 0.0, False))
    assert all(abs(p.alpha) <= 0.2 * a_los + 1e-15 for p in paths[1:])
    return PathSet(paths, M, K, Q, Ts)


@dataclass(frozen=True)
class SBS:
    sbs_id: str
    position: tuple[float, float, float]


@dataclass
class TwoSBSTrace:
    t: np.ndarray
    rss: np.ndarray          # (n, 2)
    serving: np.ndarray      # index into the SBS list
    blocked: np.ndarray      # (n, 2)
    sbs_ids: tuple[str, str] = ("SBS1", "SBS2")
    switches: list[float] = field(default_factory=list)

    @property
    def served_rss(self) -> np.ndarray:
        return self.rss[np.arange(len(self.t)), self.serving]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "rss_sbs1", "rss_sbs2", "serving", "blocked_1", "blocked_2"])
        for i in range(len(self.t)):
            w.writerow([f"{self.t[i]:.4f}", f"{self.rss[i, 0]:.6e}", f"{self.rss[i, 1]:.6e}",
                        self.sbs_ids[self.serving[i]], int(self.blocked[i, 0]), int(self.blocked[i, 1])])
        return buf.getvalue()


def two_sbs_trace(scenario: Scenario, sbs_list: list[SBS], policy: str, duration: float | None = None,
                  dt: float = 0.01, object_length: float = 4.0, t_F: float = 0.14753,
                  t_reactive: float = 0.3122, p_shift: float = 0.0, predictions=None,
                  cb: CodebookConfig = CodebookConfig(), seed: int = 0) -> TwoSBSTrace:
    """Serving-cell timeline for a static user between two SBSs.

    Blockage bits per SBS come from object kinematics.  ``reactive`` leaves a
    blocked SBS only after ``t_reactive`` of outage; ``pho`` hands over at the
    trigger point set by the predicted blockage time of each object sensed by
    the first SBS.  ``predictions`` is a list of ``(b_hat, T_hat)`` per track;
    by default the geometric labels are used.  The user returns to the
    preferred SBS once its link is clear.
    """
    if policy not in ("reactive", "pho"):
        raise ValueError("policy must be 'reactive' or 'pho'")
    if len(sbs_list) != 2:
        raise ValueError("two SBS definitions required")
    user = scenario.config.user_pos
    rng = np.random.default_rng(seed)
    codebook = build_codebook(cb)
    power = np.zeros((2, 2))   # [sbs, b]
    for s, sbs in enumerate(sbs_list):
        ps = synthetic_paths(sbs.position, user, rng, M=cb.M)
        for b in (0, 1):
            power[s, b] = best_beam(channel_state(ps, b).h, codebook)[1]

    windows: list[list[tuple[float, float]]] = [[], []]
    for tr in scenario.tracks:
        for s, sbs in enumerate(sbs_list):
            w = geo.blocked_intervals(tr.x0, tr.y0, tr.h, tr.v, tr.dir, tr.spawn, sbs.position,
                                      user, object_length)
            if w is not None:
                windows[s].append(w)
    if duration is None:
        ends = [w[1] for ws in windows for w in ws] + [tr.spawn for tr in scenario.tracks] + [0.0]
        duration = max(ends) + t_reactive + 0.5
    t = np.arange(0.0, duration, dt)
    blocked = np.zeros((len(t), 2), dtype=bool)
    for s in range(2):
        for a, e in windows[s]:
            blocked[(t >= a) & (t < e), s] = True
    rss_t = np.where(blocked, power[None, :, 1], power[None, :, 0])

    pref = int(np.argmax(power[:, 0]))
    other = 1 - pref
    # planned departures from the preferred SBS: (leave_at, return_after)
    plans = []
    if policy == "pho":
        preds = predictions if predictions is not None else [(lab.b, lab.T_b) for lab in scenario.labels]
        for tr, (b_hat, T_hat) in zip(scenario.tracks, preds):
            if not b_hat:
                continue
            trig = tr.spawn + t_F + max(0.0, max(T_hat, 0.0) * (1 - p_shift) - t_F)
            w = geo.blocked_intervals(tr.x0, tr.y0, tr.h, tr.v, tr.dir, tr.spawn,
                                      sbs_list[pref].position, user, object_length)
            back = w[1] if w is not None else tr.spawn + max(T_hat, 0.0) + object_length / tr.v
            plans.append((trig, back))

    serving = np.empty(len(t), dtype=int)
    cur, since, switches = pref, None, []
    away_until = -math.inf
    for i, ti in enumerate(t):
        if policy == "pho":
            for trig, back in plans:
                if trig <= ti < back:
                    away_until = max(away_until, back)
        if cur == pref:
            if policy == "pho" and ti < away_until:
                cur = other
                switches.append(float(ti))
            elif blocked[i, pref]:
                since = ti if since is None else since
                if ti - since >= t_reactive and not blocked[i, other]:
                    cur = other
                    switches.append(float(ti))
            else:
                since = None
        elif not blocked[i, pref] and ti >= away_until:
            cur, since = pref, None
            switches.append(float(ti))
        serving[i] = cur
    ids = (sbs_list[0].sbs_id, sbs_list[1].sbs_id)
    return TwoSBSTrace(t, rss_t, serving, blocked, ids, switches)


def default_sbs_pair(scenario: Scenario, spacing: float = 80.0) -> list[SBS]:
    """The scenario SBS plus a second one ``spacing`` metres down the street on
    the user's kerb, out of reach of the traffic lanes."""
    H = scenario.config.radar_height
    return [SBS("SBS1", scenario.config.antenna_pos),
            SBS("SBS2", (spacing, scenario.config.user_y + 2.0, H))]
