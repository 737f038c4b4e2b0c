"""Federated averaging across SBS clients, delta stopping, personalisation."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import dualnet as dn
from .dataset import Dataset, Splits, concat, height_clear
from .model import BlockagePredictor, Metrics
from .scene import ScenarioConfig


class AggregationError(ValueError):
    pass


@dataclass(frozen=True)
class StoppingConfig:
    delta: float = 1e-3
    patience: int = 3
    max_rounds: int = 30
    enabled: bool = True

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("delta: must be > 0")
        if self.patience < 1:
            raise ValueError("patience: must be >= 1")
        if self.max_rounds < 0:
            raise ValueError("max_rounds: must be >= 0")


@dataclass
class ClientUpdate:
    client_id: str
    params: dn.ModelParams
    n_samples: int
    train_loss: float


@dataclass
class RoundReport:
    round: int
    clients: list[dict]
    server: dict
    stop: bool = False

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class Client:
    """One SBS.  Raw samples stay here; only parameters and counts leave."""
    client_id: str
    geometry: ScenarioConfig
    splits: Splits
    scaler: dn.MinMaxScaler | None = None
    seed: int = 0
    lr: float = 1e-3
    batch_size: int = 100
    loss_cfg: dn.LossConfig = field(default_factory=dn.LossConfig)
    _state: dn.OptimizerState | None = field(default=None, repr=False)
    _epochs_done: int = field(default=0, repr=False)

    def __post_init__(self):
        if self.scaler is None:
            self.scaler = dn.MinMaxScaler.fit(self.splits.train.X)

    def local_stats(self) -> dn.MinMaxScaler:
        """Per-feature min/max of the training split (no samples)."""
        return dn.MinMaxScaler.fit(self.splits.train.X)

    def nn_batch(self, ds: Dataset) -> dn.Batch:
        """Samples the network actually sees: those passing the height test."""
        return ds.take(height_clear(ds, self.geometry)).batch(self.scaler)

    @property
    def n_train(self) -> int:
        return int(height_clear(self.splits.train, self.geometry).sum())

    def local_update(self, global_params: dn.ModelParams, epochs: int) -> ClientUpdate:
        data = self.nn_batch(self.splits.train)
        if len(data) == 0:
            return ClientUpdate(self.client_id, global_params.copy(), 0, float("nan"))
        res = dn.train(global_params, data, epochs=epochs, batch_size=self.batch_size,
                       seed=self.seed, state=self._state, epoch_offset=self._epochs_done,
                       lr=self.lr, cfg=self.loss_cfg)
        self._state = res.state
        self._epochs_done += epochs
        last = res.history[-1] if res.history else None
        train_loss = last.ce + self.loss_cfg.mae_weight * last.mae if last else float("nan")
        return ClientUpdate(self.client_id, res.params, len(data), train_loss)

    def predictor(self, params: dn.ModelParams) -> BlockagePredictor:
        return BlockagePredictor(params, self.scaler, self.geometry)

    def evaluate(self, params: dn.ModelParams, ds: Dataset | None = None) -> Metrics:
        return self.predictor(params).metrics(self.splits.eval if ds is None else ds)

    def pool_sample(self, k: int, rng: np.random.Generator) -> Dataset:
        ev = self.splits.eval
        idx = rng.choice(len(ev), size=min(k, len(ev)), replace=False)
        return ev.take(np.sort(idx))


def fedavg(updates) -> dn.ModelParams:
    """Sample-count weighted mean of ``(params, n_samples)`` pairs."""
    updates = list(updates)
    if not updates:
        raise AggregationError("no updates to aggregate")
    total = float(sum(n for _, n in updates))
    if total <= 0:
        raise AggregationError("all clients report zero samples")
    ref = updates[0][0]
    out = {}
    for k in dn.PARAM_ORDER:
        shapes = {p.arrays[k].shape for p, _ in updates}
        if len(shapes) != 1:
            raise AggregationError(f"{k}: incongruent shapes {shapes}")
        acc = np.zeros_like(ref.arrays[k])
        for p, n in updates:
            acc += (n / total) * p.arrays[k]
        out[k] = acc
    return dn.ModelParams(out, ref.activation)


@dataclass
class EvalPool:
    """Server-side evaluation set assembled from client eval splits."""
    parts: list[tuple[Client, Dataset]]

    def evaluate(self, params: dn.ModelParams, loss_cfg: dn.LossConfig) -> dict:
        hits = err = n = 0.0
        nn_batches = []
        for client, ds in self.parts:
            b_hat, T_hat = client.predictor(params).predict(ds)
            hits += float(np.sum(b_hat == ds.b))
            err += float(np.sum(np.abs(T_hat - ds.T)))
            n += len(ds)
            nn_batches.append(client.nn_batch(ds))
        X = np.concatenate([b.X for b in nn_batches])
        batch = dn.Batch(X, np.concatenate([b.b for b in nn_batches]),
                         np.concatenate([b.T for b in nn_batches]))
        total = dn.batch_loss(params, batch, loss_cfg) if len(batch) else 0.0
        return {"accuracy": hits / n if n else float("nan"),
                "mae": err / n if n else float("nan"), "loss": total, "n": int(n)}


def run_rounds(clients: list[Client], params: dn.ModelParams, stopping: StoppingConfig = StoppingConfig(),
               local_epochs: int = 10, pool_per_client: int = 1000, seed: int = 0,
               loss_cfg: dn.LossConfig | None = None, on_round=None):
    """FedAvg training loop.

    Every client trains ``local_epochs`` from the current global model; the
    server averages by sample count, scores the pooled eval set and stops once
    the pooled loss has improved by less than ``delta`` for ``patience``
    consecutive rounds.  Returns ``(global_params, [RoundReport])``.
    """
    if not clients:
        raise ValueError("run_rounds needs at least one client")
    loss_cfg = loss_cfg or clients[0].loss_cfg
    clients = sorted(clients, key=lambda c: c.client_id)
    rng = np.random.default_rng([seed, 7])
    pool = EvalPool([(c, c.pool_sample(pool_per_client, rng)) for c in clients])

    global_params = params.copy()
    best = pool.evaluate(global_params, loss_cfg)["loss"]
    stall = 0
    history: list[RoundReport] = []
    for r in range(1, stopping.max_rounds + 1):
        updates = [c.local_update(global_params, local_epochs) for c in clients]
        updates.sort(key=lambda u: u.client_id)
        global_params = fedavg([(u.params, u.n_samples) for u in updates])
        server = pool.evaluate(global_params, loss_cfg)
        if best - server["loss"] < stopping.delta:
            stall += 1
        else:
            stall = 0
        best = min(best, server["loss"])
        stop = stopping.enabled and stall >= stopping.patience
        report = RoundReport(r, [{"client_id": u.client_id, "n_samples": u.n_samples,
                                  "train_loss": u.train_loss} for u in updates], server, stop)
        history.append(report)
        if on_round is not None:
            on_round(report)
        if stop:
            break
    return global_params, history


@dataclass
class PersonaliseReport:
    client_id: str
    before: Metrics
    after: Metrics
    params: dn.ModelParams
    epochs_kept: int

    def to_dict(self) -> dict:
        return {"client_id": self.client_id, "before": self.before.to_dict(),
                "after": self.after.to_dict(), "epochs_kept": self.epochs_kept}


def personalise(client: Client, params: dn.ModelParams, tune_epochs: int = 5,
                seed: int = 0, holdout: float = 0.2, batch_size: int = 50) -> PersonaliseReport:
    """Fine-tune on the client's personalisation split.

    A ``holdout`` share of that split scores each epoch; the best epoch
    (possibly the untouched global model) is kept.
    """
    before = client.evaluate(params)
    data = client.nn_batch(client.splits.personal)
    if tune_epochs <= 0 or len(data) == 0:
        return PersonaliseReport(client.client_id, before, before, params.copy(), 0)
    perm = np.random.default_rng([seed, 11]).permutation(len(data))
    n_hold = int(round(holdout * len(data))) if len(data) >= 10 else 0
    val, fit = data.take(perm[:n_hold]), data.take(perm[n_hold:])
    score = (lambda p: dn.batch_loss(p, val, client.loss_cfg)) if n_hold else None

    cur, state = params.copy(), None
    best_p, best_s, kept = params.copy(), score(params) if score else None, 0
    for e in range(tune_epochs):
        res = dn.train(cur, fit, epochs=1, batch_size=batch_size, seed=seed, state=state,
                       epoch_offset=e, lr=client.lr, cfg=client.loss_cfg)
        cur, state = res.params, res.state
        if score is None:
            best_p, kept = cur, e + 1
            continue
        s = score(cur)
        if s < best_s:
            best_p, best_s, kept = cur.copy(), s, e + 1
    return PersonaliseReport(client.client_id, before, client.evaluate(best_p), best_p, kept)


@dataclass
class TransferReport:
    client_id: str
    pushed: Metrics
    tuned: Metrics
    mae_improvement: float

    def to_dict(self) -> dict:
        return {"client_id": self.client_id, "pushed": self.pushed.to_dict(),
                "tuned": self.tuned.to_dict(), "mae_improvement": self.mae_improvement}


def transfer_to_new_client(client: Client, params: dn.ModelParams, tune_epochs: int = 5,
                           seed: int = 0) -> tuple[TransferReport, dn.ModelParams]:
    """Push the global model to an SBS that sat out training, then tune it."""
    rep = personalise(client, params, tune_epochs, seed)
    before, after = rep.before.mae, rep.after.mae
    gain = (before - after) / before if before > 0 else 0.0
    return TransferReport(client.client_id, rep.before, rep.after, gain), rep.params


def centralized_train(client: Client, params: dn.ModelParams, epochs: int) -> dn.TrainResult:
    """Reference path: plain training on one client's data."""
    return dn.train(params, client.nn_batch(client.splits.train), epochs=epochs,
                    batch_size=client.batch_size, seed=client.seed, lr=client.lr,
                    cfg=client.loss_cfg)
