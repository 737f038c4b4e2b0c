"""Proactive handover: timing budget, trigger rule and evaluation metrics.

Times are seconds throughout; latency helpers report milliseconds where the
name says so.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .radar import RadarConfig

T_PHO_MS = 80.0
T_REACTIVE_MS = 312.2


class PredictionError(ValueError):
    pass


@dataclass(frozen=True)
class TimingBudget:
    T_m: float
    T_s: float
    T_FFT: float
    T_c: float
    T_Inf: float
    T_HO: float

    @property
    def T_R(self) -> float:
        return self.T_m + self.T_s + self.T_FFT + self.T_c

    @property
    def T_F(self) -> float:
        return self.T_R + self.T_Inf + self.T_HO

    def to_dict(self) -> dict:
        return {"T_m": self.T_m, "T_s": self.T_s, "T_FFT": self.T_FFT, "T_c": self.T_c,
                "T_R": self.T_R, "T_Inf": self.T_Inf, "T_HO": self.T_HO, "T_F": self.T_F}


def timing_budget(cfg: RadarConfig | None = None, t_fft: float = 6e-3, t_c: float = 26e-3,
                  t_inf: float = 1e-3, t_ho: float = 80e-3) -> TimingBudget:
    """Framework execution time from the radar frame layout.

    Measurement time is ``L * (tau_c + tau_p)``; sampling time is the number
    of samples per measurement over the ADC rate.
    """
    cfg = cfg or RadarConfig()
    for name, val in (("t_fft", t_fft), ("t_c", t_c), ("t_inf", t_inf), ("t_ho", t_ho)):
        if not val > 0:
            raise ValueError(f"{name}: must be > 0")
    T_m = cfg.n_chirps * cfg.chirp_period
    T_s = cfg.n_rx * cfg.samples_per_chirp * cfg.n_chirps / cfg.sampling_rate
    return TimingBudget(T_m, T_s, t_fft, t_c, t_inf, t_ho)


@dataclass(frozen=True)
class PHODecision:
    action: str             # "none" | "pho"
    T_D: float = 0.0
    shifted_T_b: float = -1.0


def decide(b_hat: int, T_b_hat: float, p_shift: float, budget: TimingBudget) -> PHODecision:
    """Schedule a handover ``T_D`` after inference so it lands at the shifted
    predicted blockage time; trigger at once when that is already too late."""
    if not 0.0 <= p_shift < 1.0:
        raise ValueError(f"p_shift must be in [0, 1), got {p_shift}")
    if not b_hat:
        return PHODecision("none")
    if T_b_hat < 0:
        raise PredictionError(f"blockage predicted with negative time {T_b_hat}")
    shifted = T_b_hat * (1.0 - p_shift)
    return PHODecision("pho", max(0.0, shifted - budget.T_F), shifted)


@dataclass
class PHOReport:
    s_pho: float
    false_ho_rate: float
    t_do: np.ndarray
    n_blocked: int
    n_success: int
    n_unwinnable: int
    p_shift: float

    @property
    def zeta_ms(self) -> float:
        return avg_latency_ms(self.s_pho)

    def t_do_cdf(self) -> tuple[np.ndarray, np.ndarray]:
        x = np.sort(self.t_do)
        return x, np.arange(1, len(x) + 1) / max(len(x), 1)

    def to_dict(self) -> dict:
        hist, edges = np.histogram(self.t_do, bins=10, range=(0, 100))
        return {"p_shift": self.p_shift, "s_pho": self.s_pho, "false_ho_rate": self.false_ho_rate,
                "zeta_ms": self.zeta_ms, "n_blocked": self.n_blocked, "n_success": self.n_success,
                "n_unwinnable": self.n_unwinnable,
                "t_do_histogram": {"edges": edges.tolist(), "counts": hist.tolist()}}


def evaluate(b: np.ndarray, T: np.ndarray, b_hat: np.ndarray, T_hat: np.ndarray,
             p_shift: float, budget: TimingBudget, denominator: str = "blocked") -> PHOReport:
    """Score handover decisions against the true blockage labels.

    A truly blocked sample succeeds when a handover is triggered and finishes
    (``T_F + T_D``) no later than the real blockage.  Samples whose real
    ``T_b`` does not exceed ``T_F`` cannot be saved and count as failures.
    Negative predicted times on positive predictions trigger immediately.
    """
    b = np.asarray(b, dtype=int)
    T = np.asarray(T, dtype=float)
    b_hat = np.asarray(b_hat, dtype=int)
    T_hat = np.asarray(T_hat, dtype=float)
    if denominator not in ("blocked", "all"):
        raise ValueError("denominator must be 'blocked' or 'all'")
    if not 0.0 <= p_shift < 1.0:
        raise ValueError(f"p_shift must be in [0, 1), got {p_shift}")
    T_F = budget.T_F
    shifted = np.maximum(T_hat, 0.0) * (1.0 - p_shift)
    T_D = np.maximum(0.0, shifted - T_F)
    blocked = b == 1
    winnable = blocked & (T > T_F)
    success = winnable & (b_hat == 1) & (T_F + T_D <= T)
    n_blocked = int(blocked.sum())
    if denominator == "blocked":
        s = success.sum() / n_blocked if n_blocked else 1.0
    else:
        ok = success | ((b == 0) & (b_hat == 0))
        s = ok.sum() / len(b) if len(b) else 1.0
    clear = b == 0
    false_ho = float(np.mean(b_hat[clear] == 1)) if clear.any() else 0.0
    td_max = T[success] - T_F
    t_do = (td_max - T_D[success]) / td_max * 100.0
    return PHOReport(float(s), false_ho, t_do, n_blocked, int(success.sum()),
                     int((blocked & ~winnable).sum()), p_shift)


def time_delay_offset(td_max: float, td_hat: float) -> float:
    """Relative gap (percent) between the applied and the largest safe delay."""
    if td_hat > td_max:
        raise ValueError("predicted delay exceeds the safe maximum; sample not admitted")
    return (td_max - td_hat) / td_max * 100.0


def sweep_pshift(b, T, b_hat, T_hat, budget: TimingBudget,
                 shifts=(0.0, 0.02, 0.04, 0.06, 0.08, 0.10)) -> list[PHOReport]:
    return [evaluate(b, T, b_hat, T_hat, p, budget) for p in shifts]


def avg_latency_ms(s_pho: float, t_pho: float = T_PHO_MS, t_reactive: float = T_REACTIVE_MS) -> float:
    """Mean handover latency per user: successes pay the PHO cost, the rest the
    reactive recovery cost."""
    if not 0.0 <= s_pho <= 1.0:
        raise ValueError(f"s_pho must be in [0, 1], got {s_pho}")
    return s_pho * t_pho + (1.0 - s_pho) * t_reactive


@dataclass(frozen=True)
class Rates:
    r_los: float = 1.0
    r_alt: float = 0.8
    r_nlos: float = 0.3

    def __post_init__(self):
        if not (self.r_los >= self.r_alt > self.r_nlos >= 0):
            raise ValueError("rates must satisfy r_los >= r_alt > r_nlos >= 0")


@dataclass
class ThroughputTrace:
    t: np.ndarray
    rate: np.ndarray
    episode: np.ndarray = field(repr=False)

    @property
    def mean(self) -> float:
        return float(self.rate.mean()) if len(self.rate) else 1.0

    def zero_spans(self, dt: float) -> list[float]:
        """Durations of maximal runs at zero rate."""
        z = np.concatenate([[0], (self.rate == 0).astype(int), [0]])
        d = np.diff(z)
        starts, ends = np.flatnonzero(d == 1), np.flatnonzero(d == -1)
        return [(e - s) * dt for s, e in zip(starts, ends)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "episode", "rate"])
        for row in zip(self.t, self.episode, self.rate):
            w.writerow([f"{row[0]:.6f}", int(row[1]), f"{row[2]:.6g}"])
        return buf.getvalue()


def throughput_trace(b, T, v, b_hat, T_hat, policy: str, budget: TimingBudget,
                     p_shift: float = 0.0, rates: Rates = Rates(), dt: float = 1e-3,
                     object_length: float = 4.0, t_reactive: float = T_REACTIVE_MS / 1e3,
                     v_hat=None) -> ThroughputTrace:
    """Normalised user rate over consecutive episodes, one per detected object.

    Each episode starts when the object is first sensed.  A real blockage
    lasts ``object_length / v``.  Reactive handling serves ``r_nlos`` during
    the blockage and nothing for ``t_reactive`` afterwards.  A timely PHO
    moves the user to ``r_alt`` from handover completion until the blockage
    (real or predicted) has passed; late or missed PHOs fall back to the
    reactive sequence.  Both policies share episode lengths so their means
    are comparable.
    """
    if policy not in ("reactive", "pho"):
        raise ValueError("policy must be 'reactive' or 'pho'")
    b = np.asarray(b, dtype=int)
    T = np.asarray(T, dtype=float)
    v = np.asarray(v, dtype=float)
    b_hat = np.asarray(b_hat, dtype=int)
    T_hat = np.maximum(np.asarray(T_hat, dtype=float), 0.0)
    v_hat = v if v_hat is None else np.asarray(v_hat, dtype=float)
    T_F = budget.T_F
    dur = object_length / v
    dur_hat = object_length / np.maximum(v_hat, 1e-9)
    ho_done = T_F + np.maximum(0.0, T_hat * (1 - p_shift) - T_F)

    ends = np.zeros(len(b))
    ends = np.maximum(ends, np.where(b == 1, T + dur + t_reactive, 0.0))
    ends = np.maximum(ends, np.where(b_hat == 1, T_hat + dur_hat, 0.0))
    ends = np.maximum(ends, T_F) + 0.1

    ts, rs, eps = [], [], []
    for i in range(len(b)):
        n = int(np.ceil(ends[i] / dt))
        tt = np.arange(n) * dt
        r = np.full(n, rates.r_los)
        reactive_event = b[i] == 1
        if policy == "pho" and b_hat[i] == 1:
            if b[i] == 1 and T[i] > T_F and ho_done[i] <= T[i]:
                reactive_event = False
                r[(tt >= ho_done[i]) & (tt < T[i] + dur[i])] = rates.r_alt
            elif b[i] == 0:
                r[(tt >= ho_done[i]) & (tt < T_hat[i] + dur_hat[i])] = rates.r_alt
        if reactive_event:
            r[(tt >= T[i]) & (tt < T[i] + dur[i])] = rates.r_nlos
            r[(tt >= T[i] + dur[i]) & (tt < T[i] + dur[i] + t_reactive)] = 0.0
        ts.append(tt + (ts[-1][-1] + dt if ts else 0.0))
        rs.append(r)
        eps.append(np.full(n, i))
    if not ts:
        return ThroughputTrace(np.zeros(0), np.zeros(0), np.zeros(0, dtype=int))
    return ThroughputTrace(np.concatenate(ts), np.concatenate(rs), np.concatenate(eps))
