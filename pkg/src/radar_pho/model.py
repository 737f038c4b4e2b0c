"""Deployed blockage predictor: obstacle height test followed by the dual net."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dualnet as dn
from .dataset import Dataset, height_clear
from .scene import ScenarioConfig


@dataclass
class Metrics:
    accuracy: float
    mae: float
    n: int

    def to_dict(self) -> dict:
        return {"accuracy": self.accuracy, "mae": self.mae, "n": self.n}


@dataclass
class BlockagePredictor:
    params: dn.ModelParams
    scaler: dn.MinMaxScaler
    geometry: ScenarioConfig

    def predict(self, ds: Dataset) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(b_hat, T_hat)``; objects below the LoS line get ``(0, -1)``."""
        b_hat = np.zeros(len(ds), dtype=int)
        T_hat = np.full(len(ds), -1.0)
        if len(ds) == 0:
            return b_hat, T_hat
        tall = height_clear(ds, self.geometry)
        if tall.any():
            p, t = dn.forward(self.params, self.scaler.transform(ds.X[tall]))
            b_hat[tall] = p.argmax(axis=1)
            T_hat[tall] = t
        return b_hat, T_hat

    def metrics(self, ds: Dataset) -> Metrics:
        if len(ds) == 0:
            return Metrics(float("nan"), float("nan"), 0)
        b_hat, T_hat = self.predict(ds)
        return Metrics(float(np.mean(b_hat == ds.b)), float(np.mean(np.abs(T_hat - ds.T))), len(ds))


def oracle_predictions(ds: Dataset) -> tuple[np.ndarray, np.ndarray]:
    return ds.b.copy(), ds.T.copy()
