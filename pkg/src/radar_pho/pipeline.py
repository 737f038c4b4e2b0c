"""Stage runner: scenes -> sensing -> datasets -> FL -> personalisation -> metrics.

Every artifact lands in the output directory and is registered in
``manifest.json`` with its SHA-256 and the config hash of the run that
wrote it.  Readers check both, so stale or foreign files are refused.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import channel as ch
from . import dataset as D
from . import dualnet as dn
from . import federated as F
from . import pho
from .config import RunConfig, stream, stream_seed
from .model import BlockagePredictor
from .scene import Scenario, build_scenario

log = logging.getLogger(__name__)

STAGES = ("generate", "sense", "dataset", "train-fl", "personalise", "evaluate",
          "sweep-pshift", "two-sbs-demo")
SPLIT_NAMES = ("train", "eval", "personal")


class StageError(RuntimeError):
    pass


class MissingArtifact(StageError):
    pass


class ProvenanceError(StageError):
    pass


def _sha(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def atomic_write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _producer(rel: str) -> str:
    top = rel.split("/")[0]
    return {"scenes": "generate", "sensed": "sense", "datasets": "dataset", "models": "train-fl",
            "fl_history.jsonl": "train-fl", "personalised": "personalise", "metrics": "evaluate",
            "sweep_pshift.csv": "sweep-pshift", "traces": "two-sbs-demo"}.get(top, "?")


class Store:
    """Output directory plus its provenance manifest."""

    def __init__(self, out: Path, cfg: RunConfig):
        self.out = Path(out)
        self.cfg = cfg
        self.hash = cfg.config_hash()
        self._mpath = self.out / "manifest.json"

    @property
    def manifest(self) -> dict:
        if self._mpath.exists():
            return json.loads(self._mpath.read_text())
        return {"artifacts": {}}

    @property
    def provenance(self) -> dict:
        return {"config_hash": self.hash, "seed": self.cfg.seed}

    def write(self, rel: str, data: bytes | str) -> Path:
        if isinstance(data, str):
            data = data.encode()
        path = self.out / rel
        atomic_write(path, data)
        manifest = self.manifest
        manifest["artifacts"][rel] = {"sha256": _sha(data), **self.provenance}
        atomic_write(self._mpath, json.dumps(manifest, indent=1, sort_keys=True).encode())
        return path

    def write_json(self, rel: str, obj: dict) -> Path:
        return self.write(rel, json.dumps({"provenance": self.provenance, **obj}, indent=1,
                                          sort_keys=True, default=float))

    def read(self, rel: str) -> bytes:
        entry = self.manifest["artifacts"].get(rel)
        path = self.out / rel
        if entry is None or not path.exists():
            raise MissingArtifact(f"{rel} not found; run the '{_producer(rel)}' stage first")
        if entry["config_hash"] != self.hash:
            raise ProvenanceError(f"{rel} was produced by config {entry['config_hash']}, "
                                  f"current config is {self.hash}; rerun '{_producer(rel)}'")
        data = path.read_bytes()
        if _sha(data) != entry["sha256"]:
            raise ProvenanceError(f"{rel} changed on disk since it was written")
        return data

    def read_text(self, rel: str) -> str:
        return self.read(rel).decode()

    def read_json(self, rel: str) -> dict:
        return json.loads(self.read(rel))

    def save_model(self, rel: str, params: dn.ModelParams, scaler: dn.MinMaxScaler | None,
                   extra: dict | None = None) -> None:
        with tempfile.TemporaryDirectory() as tmp:
            stem = Path(tmp) / "m"
            dn.save_checkpoint(stem, params, scaler, {"provenance": self.provenance, **(extra or {})})
            self.write(rel + ".bin", stem.with_suffix(".bin").read_bytes())
            self.write(rel + ".json", stem.with_suffix(".json").read_bytes())

    def load_model(self, rel: str):
        blob, meta = self.read(rel + ".bin"), self.read(rel + ".json")
        with tempfile.TemporaryDirectory() as tmp:
            stem = Path(tmp) / "m"
            stem.with_suffix(".bin").write_bytes(blob)
            stem.with_suffix(".json").write_bytes(meta)
            return dn.load_checkpoint(stem)


# -- stages -----------------------------------------------------------------

def stage_generate(store: Store) -> None:
    for sid in store.cfg.sbs_ids:
        sc = build_scenario(store.cfg.scenarios[sid], stream(store.cfg.seed, f"scene/{sid}"))
        store.write_json(f"scenes/{sid}.json", {"scenario": sc.to_dict()})
        log.info("%s: %d tracks, %d blocked", sid, len(sc.tracks), sc.n_blocked())


def _scenario(store: Store, sid: str) -> Scenario:
    return Scenario.from_dict(store.read_json(f"scenes/{sid}.json")["scenario"])


def stage_sense(store: Store) -> None:
    cfg = store.cfg
    stats = {}
    for sid in cfg.sbs_ids:
        ds, st = D.from_radar(_scenario(store, sid), cfg.radar, stream(cfg.seed, f"noise/{sid}"),
                              cfg.height_noise)
        store.write(f"sensed/{sid}.csv", ds.to_csv())
        stats[sid] = vars(st)
    store.write_json("sensed/stats.json", {"stats": stats})


def stage_dataset(store: Store) -> None:
    cfg = store.cfg
    for sid in cfg.sbs_ids:
        if cfg.features_from == "radar":
            ds = D.Dataset.from_csv(store.read_text(f"sensed/{sid}.csv"), sid)
        else:
            ds = D.from_oracle(_scenario(store, sid), cfg.height_noise, stream(cfg.seed, f"noise/{sid}"))
        store.write(f"datasets/{sid}.csv", ds.to_csv())
        sp = D.split(ds, stream(cfg.seed, f"split/{sid}"), cfg.split.eval_size, cfg.split.personal_size)
        for name in SPLIT_NAMES:
            store.write(f"datasets/{sid}.{name}.csv", getattr(sp, name).to_csv())


def _client(store: Store, sid: str) -> F.Client:
    cfg = store.cfg
    parts = [D.Dataset.from_csv(store.read_text(f"datasets/{sid}.{n}.csv"), sid) for n in SPLIT_NAMES]
    t = cfg.training
    return F.Client(sid, cfg.scenarios[sid], D.Splits(*parts), seed=stream_seed(cfg.seed, f"shuffle/{sid}"),
                    lr=t.lr, batch_size=t.batch_size,
                    loss_cfg=dn.LossConfig(t.mae_weight, t.mask_mae))


def stage_train_fl(store: Store) -> None:
    cfg = store.cfg
    clients = [_client(store, sid) for sid in cfg.fl.clients]
    stopping = F.StoppingConfig(cfg.fl.delta, cfg.fl.patience, cfg.fl.max_rounds, cfg.fl.stopping)
    lines = []
    params, history = F.run_rounds(clients, dn.init(stream_seed(cfg.seed, "init")), stopping,
                                   cfg.training.local_epochs, cfg.fl.pool_per_client,
                                   stream_seed(cfg.seed, "pool"),
                                   on_round=lambda r: log.info("round %d: %s", r.round, r.server))
    for r in history:
        lines.append(r.to_json())
    store.write("fl_history.jsonl", "\n".join(lines) + "\n")
    store.save_model("models/global", params, None, {"rounds": len(history)})


def stage_personalise(store: Store) -> None:
    cfg = store.cfg
    params, _, _ = store.load_model("models/global")
    reports = {}
    t = cfg.training
    for sid in (*cfg.fl.clients, *cfg.fl.new_clients):
        c = _client(store, sid)
        seed = stream_seed(cfg.seed, f"personal/{sid}")
        rep = F.personalise(c, params, t.personal_epochs, seed, t.personal_holdout, t.personal_batch_size)
        d = rep.to_dict()
        if sid in cfg.fl.new_clients:
            before, after = rep.before.mae, rep.after.mae
            d["mae_improvement"] = (before - after) / before if before > 0 else 0.0
        reports[sid] = d
        store.save_model(f"personalised/{sid}", rep.params, c.scaler, {"client": sid})
    store.write_json("personalised/report.json", {"clients": reports})


def _predict(store: Store, sid: str, ds: D.Dataset):
    params, scaler, _ = store.load_model(f"personalised/{sid}")
    return BlockagePredictor(params, scaler, store.cfg.scenarios[sid]).predict(ds)


def _eval_clients(cfg: RunConfig) -> list[str]:
    return sorted({*cfg.fl.clients, *cfg.fl.new_clients})


def stage_evaluate(store: Store) -> None:
    cfg = store.cfg
    budget = pho.timing_budget(cfg.radar, cfg.pho.t_fft, cfg.pho.t_c, cfg.pho.t_inf, cfg.pho.t_ho)
    rates = pho.Rates(1.0, cfg.pho.r_alt, cfg.pho.r_nlos)
    summary = {}
    for sid in _eval_clients(cfg):
        ev = D.Dataset.from_csv(store.read_text(f"datasets/{sid}.eval.csv"), sid)
        b_hat, T_hat = _predict(store, sid, ev)
        p = cfg.p_shift_for(sid)
        rep = pho.evaluate(ev.b, ev.T, b_hat, T_hat, p, budget, cfg.pho.spho_denominator)
        tp = {pol: pho.throughput_trace(ev.b, ev.T, ev.X[:, 8], b_hat, T_hat, pol, budget, p, rates,
                                        cfg.pho.dt, cfg.pho.object_length).mean
              for pol in ("reactive", "pho")}
        m = {"client": sid, **rep.to_dict(),
             "accuracy": float(np.mean(b_hat == ev.b)), "mae": float(np.mean(np.abs(T_hat - ev.T))),
             "t_do_below_20pct": float(np.mean(rep.t_do < 20)) if len(rep.t_do) else None,
             "mean_throughput_pho": tp["pho"], "mean_throughput_reactive": tp["reactive"]}
        store.write_json(f"metrics/{sid}.json", m)
        x, F_ = rep.t_do_cdf()
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["offset_pct", "cdf"])
        w.writerows([[f"{a:.6f}", f"{b:.6f}"] for a, b in zip(x, F_)])
        store.write(f"metrics/tdo_cdf_{sid}.csv", buf.getvalue())
        summary[sid] = m
    store.write_json("metrics/summary.json", {"budget": budget.to_dict(), "clients": summary})


def stage_sweep(store: Store) -> None:
    cfg = store.cfg
    budget = pho.timing_budget(cfg.radar, cfg.pho.t_fft, cfg.pho.t_c, cfg.pho.t_inf, cfg.pho.t_ho)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["client"] + [f"{100 * s:g}%" for s in cfg.pho.sweep])
    for sid in _eval_clients(cfg):
        ev = D.Dataset.from_csv(store.read_text(f"datasets/{sid}.eval.csv"), sid)
        b_hat, T_hat = _predict(store, sid, ev)
        reps = pho.sweep_pshift(ev.b, ev.T, b_hat, T_hat, budget, cfg.pho.sweep)
        w.writerow([sid] + [f"{100 * r.s_pho:.2f}" for r in reps])
    store.write("sweep_pshift.csv", buf.getvalue())


def stage_two_sbs(store: Store) -> None:
    cfg = store.cfg
    d = cfg.demo
    base = replace(cfg.scenarios[d.sbs], n_samples=d.n_tracks, block_ratio=d.block_ratio)
    sc = build_scenario(base, stream(cfg.seed, "demo/scene"))
    feats = D.from_oracle(sc)
    b_hat, T_hat = _predict(store, d.sbs, feats)
    budget = pho.timing_budget(cfg.radar, cfg.pho.t_fft, cfg.pho.t_c, cfg.pho.t_inf, cfg.pho.t_ho)
    pair = ch.default_sbs_pair(sc, d.spacing)
    summary = {}
    for pol in ("reactive", "pho"):
        tr = ch.two_sbs_trace(sc, pair, pol, dt=d.dt, object_length=cfg.pho.object_length,
                              t_F=budget.T_F, p_shift=cfg.p_shift_for(d.sbs),
                              predictions=list(zip(b_hat, T_hat)), cb=cfg.codebook,
                              seed=stream_seed(cfg.seed, "demo/paths"))
        store.write(f"traces/two_sbs_{pol}.csv", tr.to_csv())
        tp = pho.throughput_trace(feats.b, feats.T, feats.X[:, 8], b_hat, T_hat, pol, budget,
                                  cfg.p_shift_for(d.sbs), pho.Rates(1.0, cfg.pho.r_alt, cfg.pho.r_nlos),
                                  cfg.pho.dt, cfg.pho.object_length)
        store.write(f"traces/throughput_{pol}.csv", tp.to_csv())
        summary[pol] = {"switches": tr.switches, "mean_throughput": tp.mean}
    store.write_json("traces/summary.json", {"sbs": d.sbs, "policies": summary})


RUNNERS = {"generate": stage_generate, "sense": stage_sense, "dataset": stage_dataset,
           "train-fl": stage_train_fl, "personalise": stage_personalise, "evaluate": stage_evaluate,
           "sweep-pshift": stage_sweep, "two-sbs-demo": stage_two_sbs}


def run_stage(stage: str, cfg: RunConfig, out) -> Store:
    store = Store(Path(out), cfg)
    if stage == "all":
        for s in STAGES:
            if s == "sense" and cfg.features_from == "oracle":
                continue
            log.info("stage %s", s)
            RUNNERS[s](store)
        return store
    if stage not in RUNNERS:
        raise StageError(f"unknown stage {stage!r}")
    RUNNERS[stage](store)
    return store
