"""FMCW radar: IF frame synthesis, range/velocity/angle FFT cube, detection.

Frames are complex baseband (I/Q) tensors of shape ``(n_rx, samples, chirps)``.
The cube is kept complex with orthonormal FFT scaling so that it carries the
same energy as the frame; magnitudes are derived on demand.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

C = 3e8  # m/s, rounded as in the radar datasheet arithmetic


class RadarError(ValueError):
    pass


@dataclass(frozen=True)
class RadarConfig:
    n_tx: int = 1
    n_rx: int = 4
    n_chirps: int = 128
    f_c: float = 77e9
    slope: float = 15015e9           # Hz/s
    chirp_duration: float = 60e-6
    chirp_pause: float = 5e-6
    samples_per_chirp: int = 256
    sampling_rate: float = 5e6
    max_range: float = 100.0
    rx_spacing: float = 0.5          # in wavelengths
    noise_std: float = 10 ** (-30 / 20)
    angle_bins: int = 64
    velocity_mode: str = "true"      # "true" | "measured"
    frame_period: float = 0.1        # gap between the two frames used for direction

    def __post_init__(self):
        for name in ("n_rx", "n_chirps", "f_c", "slope", "chirp_duration", "chirp_pause",
                     "samples_per_chirp", "sampling_rate", "max_range", "rx_spacing",
                     "angle_bins", "frame_period"):
            if not getattr(self, name) > 0:
                raise RadarError(f"{name}: must be > 0")
        if self.noise_std < 0:
            raise RadarError("noise_std: must be >= 0")
        if self.samples_per_chirp / self.sampling_rate > self.chirp_duration:
            raise RadarError("samples_per_chirp / sampling_rate exceeds the chirp duration")
        if self.velocity_mode not in ("true", "measured"):
            raise RadarError("velocity_mode: expected 'true' or 'measured'")
        if self.angle_bins < self.n_rx:
            raise RadarError("angle_bins: must be >= n_rx")

    @property
    def wavelength(self) -> float:
        return C / self.f_c

    @property
    def chirp_period(self) -> float:
        return self.chirp_duration + self.chirp_pause

    @property
    def range_resolution(self) -> float:
        return self.sampling_rate * C / (2 * self.slope * self.samples_per_chirp)

    @property
    def velocity_resolution(self) -> float:
        return self.wavelength / (2 * self.n_chirps * self.chirp_period)

    @property
    def unambiguous_range(self) -> float:
        return self.sampling_rate * C / (2 * self.slope)

    @property
    def max_velocity(self) -> float:
        return self.wavelength / (4 * self.chirp_period)

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.n_rx, self.samples_per_chirp, self.n_chirps)

    def angle_grid(self) -> np.ndarray:
        """Azimuth (rad) of each zero-centred angle bin; NaN where |sin| > 1."""
        k = np.arange(self.angle_bins) - self.angle_bins // 2
        s = k / (self.angle_bins * self.rx_spacing)
        with np.errstate(invalid="ignore"):
            return np.where(np.abs(s) <= 1, np.arcsin(np.clip(s, -1, 1)), np.nan)


@dataclass(frozen=True)
class Target:
    r: float
    v: float = 0.0          # radial, positive receding
    phi: float = 0.0        # azimuth from boresight
    amplitude: float = 1.0


@dataclass
class RadarFrame:
    samples: np.ndarray
    config: RadarConfig
    timestamp: float = 0.0
    aliased: bool = False

    def __post_init__(self):
        if self.samples.shape != self.config.shape:
            raise RadarError(f"frame shape {self.samples.shape} != config {self.config.shape}")

    def dump(self, path) -> None:
        """Write little-endian complex64 samples plus a JSON sidecar."""
        path = Path(path)
        self.samples.astype("<c8").tofile(path)
        meta = {"config": asdict(self.config), "timestamp": self.timestamp,
                "aliased": self.aliased, "shape": list(self.samples.shape),
                "dtype": "<c8", "order": ["receiver", "sample", "chirp"]}
        path.with_suffix(path.suffix + ".json").write_text(json.dumps(meta, indent=1))

    @classmethod
    def load(cls, path) -> "RadarFrame":
        path = Path(path)
        meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
        cfg = RadarConfig(**meta["config"])
        data = np.fromfile(path, dtype="<c8").reshape(meta["shape"]).astype(np.complex128)
        return cls(data, cfg, meta["timestamp"], meta["aliased"])


@dataclass
class RadarCube:
    """Complex cube indexed (range bin, velocity bin, angle bin).

    Velocity and angle axes are zero-centred: bin ``i`` maps to
    ``i - n // 2``.
    """
    data: np.ndarray
    config: RadarConfig
    timestamp: float = 0.0

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.data)

    @property
    def range_axis(self) -> np.ndarray:
        return np.arange(self.data.shape[0]) * self.config.range_resolution

    @property
    def velocity_axis(self) -> np.ndarray:
        n = self.data.shape[1]
        return (np.arange(n) - n // 2) * self.config.velocity_resolution

    @property
    def angle_axis(self) -> np.ndarray:
        return self.config.angle_grid()

    def energy(self) -> float:
        return float(np.sum(np.abs(self.data) ** 2))

    def save_npy(self, path) -> None:
        np.save(path, self.magnitude.astype("<f8"))


@dataclass(frozen=True)
class Detection:
    rho: float
    v: float
    phi: float
    snr_db: float
    t: float = 0.0
    direction: int = 0
    bins: tuple[float, float, float] = field(default=(0.0, 0.0, 0.0), compare=False)


def synthesize_frame(targets: Sequence[Target], cfg: RadarConfig,
                     rng: np.random.Generator | int | None = None,
                     timestamp: float = 0.0) -> RadarFrame:
    """Superpose the IF phasor of each point target and add complex noise.

    Per target: beat frequency ``2 m r / c`` over fast time, Doppler phase
    ``4 pi v T_chirp / lambda`` per chirp and ``2 pi d sin(phi) / lambda`` per
    receiver, on top of the constant ``4 pi r / lambda`` term.  Range is held
    constant within a frame.
    """
    M, S, L = cfg.shape
    lam = cfg.wavelength
    n = np.arange(S) / cfg.sampling_rate
    chirp = np.arange(L)
    rx = np.arange(M)
    out = np.zeros((M, S, L), dtype=np.complex128)
    aliased = False
    for tg in targets:
        if not 0 <= tg.r <= cfg.max_range:
            raise RadarError(f"target range {tg.r} m outside [0, {cfg.max_range}] m")
        f_beat = 2 * cfg.slope * tg.r / C
        if f_beat >= cfg.sampling_rate:
            aliased = True
        fast = np.exp(2j * np.pi * f_beat * n)
        slow = np.exp(4j * np.pi * tg.v * cfg.chirp_period * chirp / lam)
        spatial = np.exp(2j * np.pi * cfg.rx_spacing * math.sin(tg.phi) * rx)
        phase0 = np.exp(4j * np.pi * tg.r / lam)
        out += (tg.amplitude * phase0) * spatial[:, None, None] * fast[None, :, None] * slow[None, None, :]
    if cfg.noise_std > 0:
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)
        sd = cfg.noise_std / math.sqrt(2)
        out += sd * (rng.standard_normal(out.shape) + 1j * rng.standard_normal(out.shape))
    return RadarFrame(out, cfg, timestamp, aliased)


def process_cube(frame: RadarFrame) -> RadarCube:
    """Range-FFT over samples, Velocity-FFT over chirps, Angle-FFT over receivers."""
    cfg = frame.config
    if frame.samples.shape != cfg.shape:
        raise RadarError("frame shape does not match its config")
    x = np.fft.fft(frame.samples, axis=1, norm="ortho")
    x = np.fft.fftshift(np.fft.fft(x, axis=2, norm="ortho"), axes=2)
    x = np.fft.fftshift(np.fft.fft(x, n=cfg.angle_bins, axis=0, norm="ortho"), axes=0)
    return RadarCube(np.ascontiguousarray(np.transpose(x, (1, 2, 0))), cfg, frame.timestamp)


def _hann_taper(x: np.ndarray, axis: int) -> np.ndarray:
    # periodic Hann applied in the frequency domain, unit coherent gain
    return x - 0.5 * (np.roll(x, 1, axis=axis) + np.roll(x, -1, axis=axis))


def _parabolic(lm1: float, l0: float, lp1: float) -> float:
    den = lm1 - 2 * l0 + lp1
    if den >= 0:
        return 0.0
    return float(np.clip(0.5 * (lm1 - lp1) / den, -0.5, 0.5))


def detect(cube: RadarCube, threshold_db: float = 0.0, dynamic_range_db: float = 25.0,
           object_extent: float = 0.0) -> list[Detection]:
    """Local maxima of the range-velocity power map above a fixed threshold.

    The map is Hann-tapered along range and velocity to keep sidelobes below
    the dynamic-range gate.  Peaks within ``object_extent`` metres of a
    nearer peak at the same velocity/angle cell are treated as returns from
    the same object and only the shortest range is kept.
    """
    if not math.isfinite(threshold_db):
        raise RadarError("threshold_db must be finite")
    cfg = cube.config
    data = cube.data
    if data.size == 0:
        return []
    tapered = _hann_taper(_hann_taper(data, 0), 1)
    power = np.sum(np.abs(tapered) ** 2, axis=2)
    if not np.any(power > 0):
        return []
    with np.errstate(divide="ignore"):
        pdb = 10 * np.log10(power)
    peak_mask = (power == ndimage.maximum_filter(power, size=3, mode="wrap"))
    gate = max(threshold_db, float(pdb.max()) - dynamic_range_db)
    cand = np.argwhere(peak_mask & (pdb >= gate))
    if len(cand) == 0:
        return []
    noise_db = float(np.median(pdb))

    n_r, n_v, n_a = data.shape
    dets = []
    for ri, vi in cand:
        dr = _parabolic(pdb[(ri - 1) % n_r, vi], pdb[ri, vi], pdb[(ri + 1) % n_r, vi])
        dv = _parabolic(pdb[ri, (vi - 1) % n_v], pdb[ri, vi], pdb[ri, (vi + 1) % n_v])
        spec = np.abs(data[ri, vi, :]) ** 2
        ai = int(np.argmax(spec))
        with np.errstate(divide="ignore"):
            sdb = 10 * np.log10(spec + 1e-300)
        da = _parabolic(sdb[(ai - 1) % n_a], sdb[ai], sdb[(ai + 1) % n_a])
        r_bin = ri + dr
        v_bin = vi - n_v // 2 + dv
        a_bin = ai - n_a // 2 + da
        s = float(np.clip(a_bin / (n_a * cfg.rx_spacing), -1, 1))
        dets.append(Detection(rho=r_bin * cfg.range_resolution,
                              v=v_bin * cfg.velocity_resolution,
                              phi=math.asin(s), snr_db=float(pdb[ri, vi]) - noise_db,
                              t=cube.timestamp, bins=(r_bin, v_bin, a_bin)))
    dets.sort(key=lambda d: d.rho)
    if object_extent > 0:
        kept: list[Detection] = []
        for d in dets:
            same = any(abs(d.bins[1] - k.bins[1]) <= 1 and abs(d.bins[2] - k.bins[2]) <= 1
                       and d.rho - k.rho <= object_extent for k in kept)
            if not same:
                kept.append(d)
        dets = kept
    return dets


def strongest(dets: Sequence[Detection]) -> Detection | None:
    return max(dets, key=lambda d: d.snr_db) if dets else None


def estimate_direction(history: Sequence[Detection], height_offset: float = 0.0,
                       min_dx: float = 0.05) -> int:
    """Direction of travel (+1 / -1 along x) from a time-ordered track.

    Each detection is projected onto the street x-axis with the ground range
    ``sqrt(rho^2 - height_offset^2)``; the sign of the least-squares slope of
    x over time gives the direction.
    """
    if len(history) < 2:
        raise RadarError("insufficient history: need at least two detections")
    t = np.array([d.t for d in history], dtype=float)
    if len(np.unique(t)) < 2:
        raise RadarError("insufficient history: detections share one timestamp")
    ground = np.sqrt(np.maximum(np.array([d.rho for d in history]) ** 2 - height_offset ** 2, 0))
    x = ground * np.sin([d.phi for d in history])
    slope = np.polyfit(t, x, 1)[0]
    if abs(slope) * (t.max() - t.min()) < min_dx:
        raise RadarError("ambiguous direction: x displacement below resolution floor")
    return 1 if slope > 0 else -1


def range_fft_peaks(frame: RadarFrame, rel_db: float = 20.0) -> np.ndarray:
    """Range bins of local maxima in the receiver/chirp-averaged Range-FFT."""
    spec = np.abs(np.fft.fft(frame.samples, axis=1, norm="ortho")) ** 2
    prof = spec.mean(axis=(0, 2))
    if not np.any(prof > 0):
        return np.array([], dtype=int)
    is_max = (prof >= np.roll(prof, 1)) & (prof > np.roll(prof, -1))
    return np.flatnonzero(is_max & (prof >= prof.max() * 10 ** (-rel_db / 10)))
