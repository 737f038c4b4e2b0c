"""Acceptance criteria.  Each test records one PASS/FAIL line, printed in
the pytest terminal summary (and directly when run as a script)."""

import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from radar_pho import config as C
from radar_pho import dualnet as dn
from radar_pho import federated as F
from radar_pho import geometry as geo
from radar_pho import pho
from radar_pho import radar as rd
from radar_pho.pipeline import run_stage

from conftest import ACCEPTANCE
from gradcheck import fd_check, random_problem
from helpers import make_client

ROOT = Path(__file__).resolve().parents[1]


def record(n, ok, detail, elapsed, limit):
    ok = ok and elapsed < limit
    ACCEPTANCE[n] = f"[{'PASS' if ok else 'FAIL'}] criterion {n:2d}: {detail} ({elapsed:.2f} s, limit {limit:g} s)"
    print(ACCEPTANCE[n])
    assert ok, ACCEPTANCE[n]


def test_c01_timing_budget():
    t0 = time.perf_counter()
    b = pho.timing_budget(rd.RadarConfig())
    ok = (math.isclose(b.T_m, 8.32e-3, abs_tol=1e-12) and math.isclose(b.T_s, 26.2144e-3, abs_tol=1e-12)
          and abs(b.T_R - 66.53e-3) <= 0.1e-3 and abs(b.T_F - 147.53e-3) <= 0.1e-3)
    record(1, ok, f"T_m={b.T_m*1e3:.4f} T_s={b.T_s*1e3:.4f} T_R={b.T_R*1e3:.4f} T_F={b.T_F*1e3:.4f} ms",
           time.perf_counter() - t0, 1)


def test_c02_latency():
    t0 = time.perf_counter()
    z = [pho.avg_latency_ms(s) for s in np.linspace(0, 1, 1001)]
    ok = pho.avg_latency_ms(1.0) == 80.0 and pho.avg_latency_ms(0.0) == 312.2 and bool(np.all(np.diff(z) < 0))
    record(2, ok, "zeta(1)=80 ms, zeta(0)=312.2 ms, strictly decreasing", time.perf_counter() - t0, 1)


def test_c03_radar_round_trip():
    t0 = time.perf_counter()
    cfg = rd.RadarConfig(noise_std=0.1)      # unit echo: 20 dB per-sample SNR
    rng = np.random.default_rng(2024)
    dr, dv = cfg.range_resolution, cfg.velocity_resolution
    d_sin = 1.0 / (cfg.angle_bins * cfg.rx_spacing)
    hits, worst_parseval = 0, 0.0
    for _ in range(200):
        t = rd.Target(rng.uniform(2, cfg.unambiguous_range - dr), rng.uniform(-0.9, 0.9) * cfg.max_velocity,
                      math.radians(rng.uniform(-60, 60)))
        frame = rd.synthesize_frame([t], cfg, rng)
        cube = rd.process_cube(frame)
        e = float(np.sum(np.abs(frame.samples) ** 2))
        worst_parseval = max(worst_parseval, abs(cube.energy() - e) / e)
        d = rd.strongest(rd.detect(cube))
        if d is None:
            continue
        hits += (abs(d.rho - t.r) <= dr and abs(d.v - t.v) <= dv
                 and abs(math.sin(d.phi) - math.sin(t.phi)) <= d_sin)
    ok = hits / 200 >= 0.95 and worst_parseval < 1e-9
    record(3, ok, f"{hits}/200 recovered within one bin, Parseval error {worst_parseval:.1e}",
           time.perf_counter() - t0, 120)


def _sampled_intersection(A, U, y, steps=100_000):
    eta = np.linspace(0.0, 1.0, steps + 1)
    ys = A[1] + eta * (U[1] - A[1]) - y
    k = int(np.flatnonzero(np.sign(ys[:-1]) != np.sign(ys[1:]))[0])
    p0, p1 = A + eta[k] * (U - A), A + eta[k + 1] * (U - A)
    w = ys[k] / (ys[k] - ys[k + 1])
    return p0 + w * (p1 - p0)


def _stepped_time(x0, v, d, x_I, dt=1e-3):
    side = math.copysign(1.0, x_I - x0)
    x, t = x0, 0.0
    while math.copysign(1.0, x_I - x) == side:
        x += d * v * dt
        t += dt
    return t


def test_c04_geometry_oracles():
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    worst_pt = 0.0
    for _ in range(1000):
        A = np.array([rng.uniform(-20, 20), 0.0, rng.uniform(2, 8)])
        U = np.array([rng.uniform(-20, 20), rng.uniform(5, 20), rng.uniform(1, 2)])
        y = rng.uniform(0.05, 0.95) * U[1]
        got = np.array(geo.intersect_plane(geo.los_line(A, U), y))
        worst_pt = max(worst_pt, float(np.max(np.abs(got - _sampled_intersection(A, U, y)))))
    worst_t, n = 0.0, 0
    while n < 1000:
        H, yu = rng.uniform(3, 7), rng.uniform(12, 16)
        A, Up = (0.0, 0.0, H), (0.0, yu, 1.5)
        x0, y0, v = rng.uniform(-50, 50), rng.uniform(1, yu - 1), rng.uniform(3, 15)
        d, h = int(rng.choice([-1, 1])), rng.uniform(1, 4.5)
        lab = geo.label_from_localisation(geo.object_from_position(x0, y0, v, d),
                                          geo.user_localisation(0, yu), h, A, Up)
        if not lab.b:
            continue
        x_I = geo.intersect_plane(geo.los_line(A, Up), y0)[0]
        worst_t = max(worst_t, abs(_stepped_time(x0, v, d, x_I) - lab.T_b))
        n += 1
    ok = worst_pt <= 1e-6 and worst_t <= 1.5e-3
    record(4, ok, f"intersection max error {worst_pt:.1e} m, T_b max error {worst_t*1e3:.3f} ms",
           time.perf_counter() - t0, 60)


def test_c05_gradient():
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    errs = [fd_check(*random_problem(rng), rng) for _ in range(100)]
    record(5, max(errs) <= 1e-4, f"max relative error {max(errs):.2e} over 100 draws",
           time.perf_counter() - t0, 60)


def test_c06_fl_equivalence():
    t0 = time.perf_counter()
    c, ref = make_client("SBS3", 800, seed=6), make_client("SBS3", 800, seed=6)
    p0 = dn.init(6)
    params, hist = F.run_rounds([c], p0, F.StoppingConfig(max_rounds=5, enabled=False), local_epochs=1)
    central = dn.train(p0, ref.nn_batch(ref.splits.train), epochs=5, batch_size=ref.batch_size,
                       seed=ref.seed, lr=ref.lr)
    err = float(np.max(np.abs(params.flat() - central.params.flat())))
    record(6, err <= 1e-9 and len(hist) == 5, f"max parameter deviation {err:.1e} after 5 rounds",
           time.perf_counter() - t0, 60)


@pytest.fixture(scope="module")
def desk_run(tmp_path_factory):
    t0 = time.perf_counter()
    cfg = C.load(ROOT / "configs" / "desk.json")
    out = tmp_path_factory.mktemp("desk")
    run_stage("all", cfg, out)
    elapsed = time.perf_counter() - t0
    rows = [line.split(",") for line in (out / "sweep_pshift.csv").read_text().split()]
    sweep = {r[0]: [float(x) for x in r[1:]] for r in rows[1:]}
    summary = json.loads((out / "metrics/summary.json").read_text())["clients"]
    personal = json.loads((out / "personalised/report.json").read_text())["clients"]
    return {"cfg": cfg, "elapsed": elapsed, "sweep": sweep, "summary": summary, "personal": personal}


def test_c07_pshift_trend(desk_run):
    t0 = time.perf_counter()
    sweep = desk_run["sweep"]
    mono = all(all(b >= a for a, b in zip(v, v[1:])) for v in sweep.values())
    gains = {k: v[-1] - v[0] for k, v in sweep.items()}
    n_big = sum(g >= 10 for g in gains.values())
    detail = "gains " + ", ".join(f"{k} {g:+.1f}" for k, g in sorted(gains.items()))
    record(7, mono and n_big >= 4 and len(sweep) == 6,
           f"non-decreasing={mono}, {n_big}/6 clients gain >= 10 pts; {detail}",
           desk_run["elapsed"] + time.perf_counter() - t0, 600)


def test_c08_fl_personalisation(desk_run):
    t0 = time.perf_counter()
    rep = desk_run["personal"]
    acc = {k: v["before"]["accuracy"] for k, v in rep.items()}
    no_worse = all(v["after"]["mae"] <= v["before"]["mae"] for v in rep.values())
    s6 = rep["SBS6"]
    ok = min(acc.values()) >= 0.90 and no_worse and s6["after"]["mae"] < s6["before"]["mae"]
    record(8, ok, f"min FL accuracy {min(acc.values()):.3f}, personalisation never raises MAE={no_worse}, "
                  f"SBS6 MAE {s6['before']['mae']:.3f} -> {s6['after']['mae']:.3f}",
           desk_run["elapsed"] + time.perf_counter() - t0, 600)


def test_c09_tdo(desk_run):
    t0 = time.perf_counter()
    share = {k: v["t_do_below_20pct"] for k, v in desk_run["summary"].items()}
    ok = all(s is not None and s >= 0.70 for s in share.values())
    record(9, ok, "T_DO<20% share " + ", ".join(f"{k} {s:.2f}" for k, s in sorted(share.items())),
           desk_run["elapsed"] + time.perf_counter() - t0, 300)


def test_c10_throughput_latency(desk_run):
    t0 = time.perf_counter()
    summ = desk_run["summary"]
    ok = True
    for k, m in summ.items():
        if m["n_blocked"] >= 1:
            ok &= m["mean_throughput_pho"] >= m["mean_throughput_reactive"]
        if m["s_pho"] > 0:
            ok &= m["zeta_ms"] < 312.2
    worst = min(m["mean_throughput_pho"] - m["mean_throughput_reactive"] for m in summ.values())
    record(10, ok, f"PHO-reactive throughput margin >= {worst:.3f}, "
                   f"max zeta {max(m['zeta_ms'] for m in summ.values()):.1f} ms",
           desk_run["elapsed"] + time.perf_counter() - t0, 120)


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
