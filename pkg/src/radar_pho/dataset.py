"""User-object samples: feature extraction, labels, CSV persistence, splits.

A sample is ``[r_u, x_u, y_u, theta_u, r_o, x_o, y_o, theta_o, v_o, n_o]``
with labels ``(b, T_b)``.  Each row also carries the object height reported
by the height classifier stand-in; the SBS needs it for the obstacle
(height) test but it is not a network input.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass

import numpy as np

from . import geometry as geo
from . import radar as rd
from .dualnet import FEATURE_NAMES, Batch, MinMaxScaler
from .scene import ObjectTrack, Scenario, ScenarioConfig

log = logging.getLogger(__name__)

LABEL_NAMES = ("label_b", "label_T")
META_NAMES = ("h_o",)
CSV_HEADER = (*FEATURE_NAMES, *LABEL_NAMES, *META_NAMES)


@dataclass
class Dataset:
    X: np.ndarray
    b: np.ndarray
    T: np.ndarray
    h: np.ndarray
    sbs_id: str = ""

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float).reshape(-1, len(FEATURE_NAMES))
        self.b = np.asarray(self.b, dtype=int)
        self.T = np.asarray(self.T, dtype=float)
        self.h = np.asarray(self.h, dtype=float)
        if not (len(self.X) == len(self.b) == len(self.T) == len(self.h)):
            raise ValueError("dataset columns have different lengths")
        bad = (self.b == 0) != (self.T == -1.0)
        if bad.any():
            raise ValueError(f"label_T must be -1 exactly when label_b == 0 (row {int(np.argmax(bad))})")

    def __len__(self) -> int:
        return len(self.b)

    def take(self, idx) -> "Dataset":
        return Dataset(self.X[idx], self.b[idx], self.T[idx], self.h[idx], self.sbs_id)

    def batch(self, scaler: MinMaxScaler) -> Batch:
        return Batch(scaler.transform(self.X), self.b, self.T)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for x, b, t, h in zip(self.X, self.b, self.T, self.h):
            w.writerow([repr(float(v)) for v in x] + [int(b), repr(float(t)), repr(float(h))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, sbs_id: str = "") -> "Dataset":
        rows = list(csv.reader(io.StringIO(text)))
        header = tuple(rows[0])
        if header[:12] != CSV_HEADER[:12]:
            raise ValueError(f"unexpected dataset header {header}")
        body = np.array(rows[1:], dtype=float).reshape(-1, len(header))
        h = body[:, 12] if len(header) > 12 else np.full(len(body), np.nan)
        return cls(body[:, :10], body[:, 10].astype(int), body[:, 11], h, sbs_id)


def concat(parts) -> Dataset:
    parts = list(parts)
    return Dataset(np.concatenate([p.X for p in parts]), np.concatenate([p.b for p in parts]),
                   np.concatenate([p.T for p in parts]), np.concatenate([p.h for p in parts]),
                   parts[0].sbs_id if parts else "")


def _sample_row(user: geo.UserLocalisation, obj: geo.ObjectLocalisation) -> list[float]:
    return user.as_list() + obj.as_list()


def from_oracle(scenario: Scenario, height_noise: float = 0.0,
                rng: np.random.Generator | None = None) -> Dataset:
    """Samples straight from scene geometry (no radar in the loop)."""
    cfg = scenario.config
    user = geo.user_localisation(cfg.user_x, cfg.user_y)
    rng = rng if rng is not None else np.random.default_rng(0)
    rows, b, T, h = [], [], [], []
    for track, lab in zip(scenario.tracks, scenario.labels):
        obj = geo.object_from_position(track.x0, track.y0, track.v, track.dir)
        rows.append(_sample_row(user, obj))
        b.append(lab.b)
        T.append(lab.T_b)
        h.append(track.h + (rng.normal(0, height_noise) if height_noise > 0 else 0.0))
    return Dataset(np.array(rows), b, T, h, cfg.sbs_id)


def track_target(track: ObjectTrack, H: float, t: float, ref_range: float = 20.0) -> rd.Target:
    """Point target at the object's top edge as seen from the radar at (0, 0, H).

    Echo amplitude follows the two-way r^-2 law, normalised to 1 at ``ref_range``.
    """
    x = track.position(t)
    rho = math.sqrt(x * x + track.y0 ** 2 + (H - track.h) ** 2)
    v_radial = track.dir * track.v * x / rho
    phi = math.atan2(x, track.y0)
    return rd.Target(r=rho, v=v_radial, phi=phi, amplitude=(ref_range / rho) ** 2)


def detect_frame(frame: rd.RadarFrame, threshold_db: float = 0.0,
                 dynamic_range_db: float = 25.0) -> list[rd.Detection]:
    """Same detections as ``detect(process_cube(frame))`` without forming the
    zero-padded angle cube for every cell; the angle FFT runs only at peaks."""
    cfg = frame.config
    x = np.fft.fft(frame.samples, axis=1, norm="ortho")
    x = np.fft.fftshift(np.fft.fft(x, axis=2, norm="ortho"), axes=2)
    rdmap = np.transpose(x, (1, 2, 0))
    # angle-axis Parseval: summing |angle bins|^2 equals summing |receivers|^2
    pseudo = rd.RadarCube(rdmap, cfg, frame.timestamp)
    dets = rd.detect(pseudo, threshold_db, dynamic_range_db)
    out = []
    n_a = cfg.angle_bins
    for d in dets:
        ri, vi = int(round(d.bins[0])), int(round(d.bins[1])) + rdmap.shape[1] // 2
        ri %= rdmap.shape[0]
        vi %= rdmap.shape[1]
        spec = np.abs(np.fft.fftshift(np.fft.fft(rdmap[ri, vi, :], n=n_a, norm="ortho"))) ** 2
        ai = int(np.argmax(spec))
        sdb = 10 * np.log10(spec + 1e-300)
        da = rd._parabolic(sdb[(ai - 1) % n_a], sdb[ai], sdb[(ai + 1) % n_a])
        a_bin = ai - n_a // 2 + da
        s = float(np.clip(a_bin / (n_a * cfg.rx_spacing), -1, 1))
        out.append(rd.Detection(d.rho, d.v, math.asin(s), d.snr_db, d.t,
                                bins=(d.bins[0], d.bins[1], a_bin)))
    return out


@dataclass
class SensingStats:
    n: int = 0
    missed: int = 0
    clamped: int = 0
    aliased: int = 0
    ambiguous: int = 0


def sense_track(track: ObjectTrack, cfg: ScenarioConfig, rcfg: rd.RadarConfig,
                rng: np.random.Generator, h_est: float, stats: SensingStats):
    """Two radar frames of one object -> (ObjectLocalisation) or None on a miss."""
    H = cfg.radar_height
    dets = []
    for k, t in enumerate((0.0, rcfg.frame_period)):
        frame = rd.synthesize_frame([track_target(track, H, t)], rcfg, rng, timestamp=t)
        stats.aliased += int(frame.aliased and k == 0)
        best = rd.strongest(detect_frame(frame))
        if best is None:
            return None
        dets.append(best)
    try:
        direction = rd.estimate_direction(dets, height_offset=H - h_est)
    except rd.RadarError:
        # near broadside x barely moves; radial Doppler sign times x side decides
        stats.ambiguous += 1
        direction = 1 if dets[0].v * math.sin(dets[0].phi) >= 0 else -1
    first = dets[0]
    rho = first.rho
    if rho < abs(H - h_est):
        stats.clamped += 1
        rho = abs(H - h_est)
    speed = track.v if rcfg.velocity_mode == "true" else abs(first.v)
    return geo.object_localisation(rho, first.phi, H, h_est, speed, direction)


def from_radar(scenario: Scenario, rcfg: rd.RadarConfig, rng: np.random.Generator,
               height_noise: float = 0.0) -> tuple[Dataset, SensingStats]:
    """Samples through the full sensing chain: synthesize, FFT, detect, localise.

    Labels are recomputed from the sensed localisation, as the SBS would.
    """
    cfg = scenario.config
    user = geo.user_localisation(cfg.user_x, cfg.user_y)
    stats = SensingStats()
    rows, b, T, h = [], [], [], []
    for track in scenario.tracks:
        stats.n += 1
        h_est = track.h + (rng.normal(0, height_noise) if height_noise > 0 else 0.0)
        obj = sense_track(track, cfg, rcfg, rng, h_est, stats)
        if obj is None:
            stats.missed += 1
            obj = geo.object_from_position(track.x0, track.y0, track.v, track.dir)
        if obj.y <= 0:
            obj = geo.object_from_position(obj.x, 1e-6, obj.v, obj.n)
        lab = geo.label_from_localisation(obj, user, h_est, cfg.antenna_pos, cfg.user_pos)
        rows.append(_sample_row(user, obj))
        b.append(lab.b)
        T.append(lab.T_b)
        h.append(h_est)
    if stats.missed or stats.clamped or stats.aliased:
        log.info("%s sensing: %d missed, %d clamped, %d aliased of %d", cfg.sbs_id,
                 stats.missed, stats.clamped, stats.aliased, stats.n)
    return Dataset(np.array(rows), b, T, h, cfg.sbs_id), stats


def height_clear(ds: Dataset, cfg: ScenarioConfig) -> np.ndarray:
    """Obstacle test: True where the object reaches the LoS line at its lane."""
    _, z_I = geo.intersect_plane_batch(np.array(cfg.antenna_pos), np.array(cfg.user_pos),
                                       ds.X[:, 6])
    return ds.h >= z_I


@dataclass
class Splits:
    train: Dataset
    eval: Dataset
    personal: Dataset


def split_sizes(n: int, eval_size: int = 2000, personal_size: int = 500) -> tuple[int, int]:
    """Eval/personalisation sizes, shrunk proportionally for small datasets."""
    return min(eval_size, n // 5), min(personal_size, n // 4)


def split(ds: Dataset, rng: np.random.Generator, eval_size: int = 2000,
          personal_size: int = 500) -> Splits:
    n_eval, n_pers = split_sizes(len(ds), eval_size, personal_size)
    perm = rng.permutation(len(ds))
    return Splits(train=ds.take(perm[n_eval + n_pers:]), eval=ds.take(perm[:n_eval]),
                  personal=ds.take(perm[n_eval:n_eval + n_pers]))
