"""Training pipeline: dataset selection rules, Adam, stepped learning rate,
per-network gradient clipping, model selection and checkpoints."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from .nets import from_json_dict, to_json_dict
from .oscillator import (OscillatorModel, apply_batch_stats, lr_loss,
                         oscillator_loss_and_grad, oscillator_predict)
from .stochastic import SeededRng

SELECTION_RULES = ("best_val_linf", "last_update")
# shuffling streams live far away from the per-sample data streams
SHUFFLE_STREAM_BASE = 1 << 40


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 1600
    initial_lr: float = 0.02
    lr_drop_period: int = 100
    lr_drop_factor: float = 0.965
    clip_threshold_gamma: float = 1.0
    clip_threshold_pi: float = 1.0
    loss_power: int = 2
    seed: int = 0
    model_selection: str = "last_update"

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.lr_drop_period < 1:
            raise ValueError("epochs, batch size and drop period must be positive")
        if not self.initial_lr > 0:
            raise ValueError("learning rate must be positive")
        if not 0.0 < self.lr_drop_factor <= 1.0:
            raise ValueError("lr_drop_factor must lie in (0, 1]")
        if not (self.clip_threshold_gamma > 0 and self.clip_threshold_pi > 0):
            raise ValueError("clip thresholds must be positive")
        if self.loss_power < 1:
            raise ValueError("loss power must be >= 1")
        if self.model_selection not in SELECTION_RULES:
            raise ValueError(f"model_selection must be one of {SELECTION_RULES}")


def lr_at(config: TrainConfig, epoch: int) -> float:
    """``initial_lr * factor ** floor(epoch / period)``."""
    if epoch < 0:
        raise ValueError("epoch must be nonnegative")
    return config.initial_lr * config.lr_drop_factor ** (epoch // config.lr_drop_period)


def clip_grad_norm(grad: np.ndarray, threshold: float) -> np.ndarray:
    if not threshold > 0:
        raise ValueError("threshold must be positive")
    norm = float(np.linalg.norm(grad))
    if norm > threshold:
        return grad * (threshold / norm)
    return grad.copy()


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n))


def adam_step(params: np.ndarray, grad: np.ndarray, state: AdamState, lr: float):
    """Bias-corrected Adam update; returns ``(params, state)``."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != params.shape or state.m.shape != params.shape:
        raise ValueError("parameter, gradient and moment shapes differ")
    if not np.all(np.isfinite(grad)):
        raise FloatingPointError("non-finite gradient passed to Adam")
    t = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new = params - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new, AdamState(m, v, t, state.beta1, state.beta2, state.eps)


# ------------------------------------------------------------ datasets
@dataclass
class Dataset:
    inputs: np.ndarray  # (n, n_times, p)
    targets: np.ndarray  # (n, n_times, q)
    dt: float
    train_idx: np.ndarray
    val_idx: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.targets = np.asarray(self.targets, dtype=np.float64)
        if self.inputs.ndim == 2:
            self.inputs = self.inputs[..., None]
        if self.targets.ndim == 2:
            self.targets = self.targets[..., None]
        if self.inputs.shape[:2] != self.targets.shape[:2]:
            raise ValueError("inputs and targets must share sample count and grid")
        self.train_idx = np.asarray(self.train_idx, dtype=np.int64)
        self.val_idx = np.asarray(self.val_idx, dtype=np.int64)
        if np.intersect1d(self.train_idx, self.val_idx).size:
            raise ValueError("train and validation splits overlap")

    def __len__(self) -> int:
        return self.inputs.shape[0]


def every_fifth_split(n_selected: int) -> tuple[np.ndarray, np.ndarray]:
    """Positions 5, 10, 15, ... (1-based) go to validation, the rest to training."""
    pos = np.arange(n_selected)
    val = pos[(pos + 1) % 5 == 0]
    train = pos[(pos + 1) % 5 != 0]
    return train, val


def equally_spaced_ranks(pool: int, n_select: int) -> np.ndarray:
    """``round(j (pool - 1) / (n_select - 1))``, collisions advanced to the next
    unused rank."""
    if n_select > pool:
        raise ValueError(f"cannot select {n_select} from a pool of {pool}")
    if n_select == 1:
        return np.array([0])
    used = np.zeros(pool, dtype=bool)
    ranks = []
    for j in range(n_select):
        r = int(np.floor(j * (pool - 1) / (n_select - 1) + 0.5))
        while used[r]:
            r += 1
        used[r] = True
        ranks.append(r)
    return np.array(ranks, dtype=np.int64)


def build_case1_dataset(inputs: np.ndarray, outputs: np.ndarray, n_select: int, dt: float) -> Dataset:
    """Sort pairs by peak output, descending; keep approximately equally spaced ranks."""
    inputs = np.asarray(inputs, dtype=np.float64)
    outputs = np.asarray(outputs, dtype=np.float64)
    pool = inputs.shape[0]
    if pool < n_select:
        raise ValueError(f"pool of {pool} is smaller than the selection size {n_select}")
    peak = np.abs(outputs.reshape(pool, -1)).max(axis=1)
    order = np.argsort(-peak, kind="stable")
    chosen = order[equally_spaced_ranks(pool, n_select)]
    train, val = every_fifth_split(n_select)
    return Dataset(inputs[chosen], outputs[chosen], dt, train, val,
                   {"rule": "descending peak output; ranks round(j(pool-1)/(n-1)), collisions advance",
                    "pool_size": pool, "pool_indices": chosen.tolist()})


def build_case2_dataset(inputs: np.ndarray, outputs: np.ndarray, stride: int, dt: float,
                        n_select: Optional[int] = None) -> Dataset:
    """Sort inputs by sample standard deviation, descending; take every ``stride``-th rank."""
    inputs = np.asarray(inputs, dtype=np.float64)
    outputs = np.asarray(outputs, dtype=np.float64)
    pool = inputs.shape[0]
    if stride < 1:
        raise ValueError("stride must be positive")
    n_avail = (pool + stride - 1) // stride
    n_select = n_avail if n_select is None else n_select
    if n_select > n_avail:
        raise ValueError(f"pool of {pool} with stride {stride} yields only {n_avail} pairs")
    std = inputs.reshape(pool, inputs.shape[1], -1).std(axis=1).max(axis=1)
    order = np.argsort(-std, kind="stable")
    chosen = order[::stride][:n_select]
    train, val = every_fifth_split(n_select)
    return Dataset(inputs[chosen], outputs[chosen], dt, train, val,
                   {"rule": "descending input std; every stride-th rank from the first",
                    "pool_size": pool, "stride": stride, "pool_indices": chosen.tolist()})


# ------------------------------------------------------------ records
@dataclass
class TrainRecord:
    rows: list = field(default_factory=list)
    best_epoch: Optional[int] = None
    selection: str = "last_update"
    halted: Optional[str] = None

    def add(self, epoch, lr, train_loss, val_linf, val_lr_loss):
        if self.rows and epoch != self.rows[-1]["epoch"] + 1:
            raise ValueError("epochs must be recorded contiguously")
        self.rows.append({"epoch": int(epoch), "lr": float(lr), "train_loss": float(train_loss),
                          "val_linf": float(val_linf), "val_lr_loss": float(val_lr_loss)})

    @property
    def train_losses(self) -> np.ndarray:
        return np.array([r["train_loss"] for r in self.rows])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        cols = ["epoch", "lr", "train_loss", "val_linf", "val_lr_loss"]
        w.writerow(cols)
        for r in self.rows:
            w.writerow([r["epoch"]] + [repr(r[c]) for c in cols[1:]])
        return buf.getvalue()


def model_to_dict(model: OscillatorModel) -> dict:
    return {"format": "oscillator/1", "r": model.r, "p": model.p, "q": model.q,
            "gamma": to_json_dict(model.gamma), "pi": to_json_dict(model.pi)}


def model_from_dict(d: dict) -> OscillatorModel:
    if d.get("format") != "oscillator/1":
        raise ValueError(f"unsupported model format {d.get('format')!r}")
    return OscillatorModel(from_json_dict(d["gamma"]), from_json_dict(d["pi"]), d["r"], d["p"], d["q"])


def save_checkpoint(model: OscillatorModel, path) -> None:
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh, sort_keys=True)


def load_checkpoint(path) -> OscillatorModel:
    with open(path) as fh:
        return model_from_dict(json.load(fh))


# ------------------------------------------------------------ training loop
def _evaluate(model: OscillatorModel, U, Y, dt: float, r_power: int) -> tuple[float, float]:
    pred = oscillator_predict(model, U, dt)
    linf = float(np.max(np.abs(pred - Y)))
    lr_val = float(lr_loss(pred, Y, r_power))
    return linf, lr_val


def train(model: OscillatorModel, data: Dataset, config: TrainConfig,
          on_epoch: Optional[Callable[[int, dict], None]] = None):
    """Run ``config.epochs`` epochs of mini-batch Adam; returns ``(model, record)``.

    Each batch: ℓ_r loss and gradient through the unrolled integrator,
    Gamma and Pi gradients clipped separately, one Adam step, batch-norm
    running statistics updated.  Validation runs in inference mode after
    every epoch.
    """
    if len(data.train_idx) == 0:
        raise ValueError("empty training split")
    record = TrainRecord(selection=config.model_selection)
    if config.epochs == 0:
        return model, record
    Utr, Ytr = data.inputs[data.train_idx], data.targets[data.train_idx]
    has_val = len(data.val_idx) > 0
    Uva, Yva = (data.inputs[data.val_idx], data.targets[data.val_idx]) if has_val else (Utr, Ytr)
    theta = model.flat_params()
    n_gamma = model.gamma_size()
    adam = AdamState.zeros(theta.size)
    best_model, best_val = model, np.inf
    n = len(Utr)
    for epoch in range(config.epochs):
        lr = lr_at(config, epoch)
        perm = SeededRng(config.seed, SHUFFLE_STREAM_BASE + epoch).permutation(n)
        total = 0.0
        try:
            for start in range(0, n, config.batch_size):
                b = perm[start:start + config.batch_size]
                stats: list = []
                loss, grad = oscillator_loss_and_grad(model, Utr[b], Ytr[b], config.loss_power,
                                                      dt=data.dt, mode="train", stats_out=stats)
                grad = np.concatenate([clip_grad_norm(grad[:n_gamma], config.clip_threshold_gamma),
                                       clip_grad_norm(grad[n_gamma:], config.clip_threshold_pi)])
                theta, adam = adam_step(theta, grad, adam, lr)
                model = apply_batch_stats(model.with_flat_params(theta), stats)
                total += loss * len(b)
        except FloatingPointError as exc:
            record.halted = f"epoch {epoch}: {exc}"
            break
        val_linf, val_lr = _evaluate(model, Uva, Yva, data.dt, config.loss_power)
        record.add(epoch, lr, total / n, val_linf, val_lr)
        if val_linf < best_val:
            best_val, best_model = val_linf, model
            record.best_epoch = epoch
        if on_epoch is not None:
            on_epoch(epoch, record.rows[-1])
    if config.model_selection == "best_val_linf" or record.halted:
        return best_model, record
    record.best_epoch = record.rows[-1]["epoch"] if record.rows else None
    return model, record


def config_dict(config: TrainConfig) -> dict:
    return asdict(config)
