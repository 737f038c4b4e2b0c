"""Dual-output MLP: blockage class (2-way softmax) and time-to-block (linear).

Layout 10 -> 128 -> 64 -> 32 -> {2, 1} with ReLU hidden units.  Weights are
stored (out, in).  Everything is plain numpy in float64 so that the analytic
gradients can be checked against finite differences.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

N_FEATURES = 10
HIDDEN = (128, 64, 32)
FEATURE_NAMES = ("r_u", "x_u", "y_u", "theta_u", "r_o", "x_o", "y_o", "theta_o", "v_o", "n_o")
PARAM_ORDER = ("W1", "b1", "W2", "b2", "W3", "b3", "Wc", "bc", "Wr", "br")
P_CLIP = 1e-7


def layer_shapes(n_in: int = N_FEATURES, hidden=HIDDEN) -> dict[str, tuple[int, ...]]:
    h1, h2, h3 = hidden
    return {"W1": (h1, n_in), "b1": (h1,), "W2": (h2, h1), "b2": (h2,),
            "W3": (h3, h2), "b3": (h3,), "Wc": (2, h3), "bc": (2,), "Wr": (1, h3), "br": (1,)}


@dataclass
class ModelParams:
    arrays: dict[str, np.ndarray]
    activation: str = "relu"

    def __post_init__(self):
        shapes = layer_shapes()
        for name in PARAM_ORDER:
            if self.arrays[name].shape != shapes[name]:
                raise ValueError(f"{name}: shape {self.arrays[name].shape} != {shapes[name]}")

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def copy(self) -> "ModelParams":
        return ModelParams({k: v.copy() for k, v in self.arrays.items()}, self.activation)

    def flat(self) -> np.ndarray:
        return np.concatenate([self.arrays[k].ravel() for k in PARAM_ORDER])

    @classmethod
    def from_flat(cls, vec: np.ndarray, activation: str = "relu") -> "ModelParams":
        out, i = {}, 0
        for name, shape in layer_shapes().items():
            n = int(np.prod(shape))
            out[name] = np.asarray(vec[i:i + n], dtype=np.float64).reshape(shape).copy()
            i += n
        if i != len(vec):
            raise ValueError(f"flat vector has {len(vec)} entries, layout needs {i}")
        return cls(out, activation)

    def allclose(self, other: "ModelParams", atol: float = 0.0) -> bool:
        return all(np.allclose(self.arrays[k], other.arrays[k], rtol=0, atol=atol)
                   for k in PARAM_ORDER)


@dataclass
class MinMaxScaler:
    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray) -> "MinMaxScaler":
        X = np.asarray(X, dtype=float)
        return cls(X.min(axis=0), X.max(axis=0))

    @classmethod
    def merge(cls, scalers) -> "MinMaxScaler":
        scalers = list(scalers)
        return cls(np.min([s.lo for s in scalers], axis=0), np.max([s.hi for s in scalers], axis=0))

    def transform(self, X: np.ndarray) -> np.ndarray:
        span = self.hi - self.lo
        span = np.where(span > 0, span, 1.0)
        return (np.asarray(X, dtype=float) - self.lo) / span

    def to_dict(self) -> dict:
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "MinMaxScaler":
        return cls(np.asarray(d["lo"], dtype=float), np.asarray(d["hi"], dtype=float))


@dataclass
class Batch:
    X: np.ndarray           # (n, 10), already scaled
    b: np.ndarray           # (n,) int
    T: np.ndarray           # (n,) seconds, -1 when b == 0

    def __len__(self) -> int:
        return len(self.b)

    def take(self, idx) -> "Batch":
        return Batch(self.X[idx], self.b[idx], self.T[idx])


@dataclass
class LossConfig:
    mae_weight: float = 1.0
    mask_mae: bool = False      # when True only blocked samples enter the MAE


def init(seed: int | np.random.Generator = 0, zero: bool = False) -> ModelParams:
    """Glorot-uniform weights, zero biases."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    arrays = {}
    for name, shape in layer_shapes().items():
        if name.startswith("W") and not zero:
            fan_out, fan_in = shape
            lim = np.sqrt(6.0 / (fan_in + fan_out))
            arrays[name] = rng.uniform(-lim, lim, size=shape)
        else:
            arrays[name] = np.zeros(shape)
    return ModelParams(arrays)


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _forward_cache(params: ModelParams, X: np.ndarray):
    a0 = X
    z1 = a0 @ params["W1"].T + params["b1"]
    a1 = np.maximum(z1, 0)
    z2 = a1 @ params["W2"].T + params["b2"]
    a2 = np.maximum(z2, 0)
    z3 = a2 @ params["W3"].T + params["b3"]
    a3 = np.maximum(z3, 0)
    p = _softmax(a3 @ params["Wc"].T + params["bc"])
    t = (a3 @ params["Wr"].T + params["br"])[:, 0]
    return p, t, (a0, z1, a1, z2, a2, z3, a3)


def forward(params: ModelParams, features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return class probabilities ``(n, 2)`` and time estimates ``(n,)``.

    A single 10-vector is accepted and yields ``(2,)`` and a scalar array.
    """
    X = np.asarray(features, dtype=np.float64)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != N_FEATURES:
        raise ValueError(f"expected {N_FEATURES} features, got {X.shape[1]}")
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite input features")
    p, t, _ = _forward_cache(params, X)
    if single:
        return p[0], t[0]
    return p, t


def loss(p: np.ndarray, t_hat: np.ndarray, b: np.ndarray, T: np.ndarray,
         cfg: LossConfig = LossConfig()) -> tuple[float, float, float]:
    """Mean (total, cross-entropy, MAE) over a batch."""
    p = np.atleast_2d(p)
    t_hat = np.atleast_1d(t_hat)
    b = np.atleast_1d(b).astype(int)
    T = np.atleast_1d(T)
    py = np.clip(p[np.arange(len(b)), b], P_CLIP, 1 - P_CLIP)
    ce = float(np.mean(-np.log(py)))
    err = np.abs(t_hat - T)
    if cfg.mask_mae:
        m = b == 1
        mae = float(err[m].mean()) if m.any() else 0.0
    else:
        mae = float(err.mean())
    return ce + cfg.mae_weight * mae, ce, mae


def gradient(params: ModelParams, batch: Batch, cfg: LossConfig = LossConfig()) -> dict[str, np.ndarray]:
    """Analytic gradient of the mean batch loss with respect to every parameter."""
    n = len(batch)
    if n == 0:
        raise ValueError("empty batch")
    p, t, (a0, z1, a1, z2, a2, z3, a3) = _forward_cache(params, batch.X)
    b = batch.b.astype(int)

    # d(-log clip(p_y)) / d logits = p - onehot, zero where the clip is active
    py = p[np.arange(n), b]
    live = (py > P_CLIP) & (py < 1 - P_CLIP)
    d_logits = p.copy()
    d_logits[np.arange(n), b] -= 1.0
    d_logits *= (live / n)[:, None]

    sgn = np.sign(t - batch.T)
    if cfg.mask_mae:
        m = b == 1
        k = m.sum()
        d_t = cfg.mae_weight * sgn * m / k if k else np.zeros(n)
    else:
        d_t = cfg.mae_weight * sgn / n
    d_t = d_t[:, None]

    g = {"Wc": d_logits.T @ a3, "bc": d_logits.sum(0),
         "Wr": d_t.T @ a3, "br": d_t.sum(0)}
    d_a3 = d_logits @ params["Wc"] + d_t @ params["Wr"]
    d_z3 = d_a3 * (z3 > 0)
    g["W3"], g["b3"] = d_z3.T @ a2, d_z3.sum(0)
    d_z2 = (d_z3 @ params["W3"]) * (z2 > 0)
    g["W2"], g["b2"] = d_z2.T @ a1, d_z2.sum(0)
    d_z1 = (d_z2 @ params["W2"]) * (z1 > 0)
    g["W1"], g["b1"] = d_z1.T @ a0, d_z1.sum(0)
    return g


def batch_loss(params: ModelParams, batch: Batch, cfg: LossConfig = LossConfig()) -> float:
    p, t, _ = _forward_cache(params, batch.X)
    return loss(p, t, batch.b, batch.T, cfg)[0]


@dataclass
class OptimizerState:
    """Nadam moments with the Keras momentum schedule (decay 0.96 per step)."""
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    u_product: float = 1.0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-7

    @classmethod
    def zeros_like(cls, params: ModelParams, **kw) -> "OptimizerState":
        return cls({k: np.zeros_like(a) for k, a in params.arrays.items()},
                   {k: np.zeros_like(a) for k, a in params.arrays.items()}, **kw)

    def copy(self) -> "OptimizerState":
        return OptimizerState({k: a.copy() for k, a in self.m.items()},
                              {k: a.copy() for k, a in self.v.items()},
                              self.step, self.u_product, self.lr, self.beta1, self.beta2, self.eps)


def nadam_step(params: ModelParams, grads: dict[str, np.ndarray],
               state: OptimizerState) -> tuple[ModelParams, OptimizerState]:
    s = state.copy()
    t = s.step + 1
    u_t = s.beta1 * (1.0 - 0.5 * 0.96 ** t)
    u_t1 = s.beta1 * (1.0 - 0.5 * 0.96 ** (t + 1))
    u_prod_t = s.u_product * u_t
    u_prod_t1 = u_prod_t * u_t1
    new = {}
    for k, w in params.arrays.items():
        g = grads[k]
        if g.shape != w.shape:
            raise ValueError(f"{k}: gradient shape {g.shape} != {w.shape}")
        s.m[k] = s.beta1 * s.m[k] + (1 - s.beta1) * g
        s.v[k] = s.beta2 * s.v[k] + (1 - s.beta2) * g * g
        m_hat = u_t1 * s.m[k] / (1 - u_prod_t1) + (1 - u_t) * g / (1 - u_prod_t)
        v_hat = s.v[k] / (1 - s.beta2 ** t)
        new[k] = w - s.lr * m_hat / (np.sqrt(v_hat) + s.eps)
    s.step = t
    s.u_product = u_prod_t
    return ModelParams(new, params.activation), s


@dataclass
class EpochStats:
    ce: float
    mae: float
    accuracy: float


@dataclass
class TrainResult:
    params: ModelParams
    state: OptimizerState
    history: list[EpochStats] = field(default_factory=list)


def epoch_permutation(n: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(n)


def train(params: ModelParams, data: Batch, epochs: int = 10, batch_size: int = 100,
          seed: int = 0, state: OptimizerState | None = None, epoch_offset: int = 0,
          lr: float = 1e-3, cfg: LossConfig = LossConfig()) -> TrainResult:
    """Mini-batch Nadam.  Epoch ``e`` is shuffled with ``(seed, epoch_offset + e)``
    so that training can be resumed across calls without changing the order."""
    if len(data) == 0:
        raise ValueError("empty dataset")
    params = params.copy()
    state = OptimizerState.zeros_like(params, lr=lr) if state is None else state.copy()
    history = []
    n = len(data)
    for e in range(epochs):
        perm = epoch_permutation(n, seed, epoch_offset + e)
        ce_sum = mae_sum = hit = 0.0
        for i in range(0, n, batch_size):
            mb = data.take(perm[i:i + batch_size])
            p, t, _ = _forward_cache(params, mb.X)
            _, ce, mae = loss(p, t, mb.b, mb.T, cfg)
            ce_sum += ce * len(mb)
            mae_sum += mae * len(mb)
            hit += float(np.sum(p.argmax(1) == mb.b))
            params, state = nadam_step(params, gradient(params, mb, cfg), state)
        history.append(EpochStats(ce_sum / n, mae_sum / n, hit / n))
    return TrainResult(params, state, history)


def save_checkpoint(path, params: ModelParams, scaler: MinMaxScaler | None = None,
                    extra: dict | None = None) -> None:
    """JSON manifest ``<path>.json`` plus little-endian float32 blob ``<path>.bin``."""
    path = Path(path)
    blob = params.flat().astype("<f4")
    manifest = {
        "layout": [N_FEATURES, *HIDDEN, [2, 1]],
        "order": [[k, list(s)] for k, s in layer_shapes().items()],
        "activation": params.activation,
        "heads": {"class": "softmax", "time": "linear"},
        "dtype": "<f4",
        "scaler": scaler.to_dict() if scaler is not None else None,
        **(extra or {}),
    }
    path.with_suffix(".bin").write_bytes(blob.tobytes())
    path.with_suffix(".json").write_text(json.dumps(manifest, indent=1))


def load_checkpoint(path) -> tuple[ModelParams, MinMaxScaler | None, dict]:
    path = Path(path)
    manifest = json.loads(path.with_suffix(".json").read_text())
    blob = np.frombuffer(path.with_suffix(".bin").read_bytes(), dtype="<f4")
    params = ModelParams.from_flat(blob.astype(np.float64), manifest["activation"])
    scaler = MinMaxScaler.from_dict(manifest["scaler"]) if manifest.get("scaler") else None
    return params, scaler, manifest
