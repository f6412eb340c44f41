"""Mini-batch Adam with early stopping, shared by every trainable model."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Optional, Tuple

import numpy as np

from .errors import ConfigError, TrainingError
from .numerics import AdamState, Params, adam_step

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 256
    learning_rate: float = 0.001
    patience: int = 3
    hidden: Tuple[int, ...] = (128, 64, 32)
    emb_dim: int = 8
    lstm_hidden: int = 32
    init_scale: float = 0.05
    literal_cell: bool = False

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.patience < 1:
            raise ConfigError("epochs >= 0, batch_size >= 1 and patience >= 1 required")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        types = {f.name: f.type for f in fields(cls)}
        unknown = set(d) - set(types)
        if unknown:
            raise ConfigError(f"unknown training keys: {sorted(unknown)}")
        kw = {}
        for k, v in d.items():
            if k == "hidden":
                kw[k] = tuple(int(x) for x in (v.split(",") if isinstance(v, str) else v))
            elif k == "literal_cell":
                kw[k] = v if isinstance(v, bool) else str(v).lower() in ("1", "true", "yes")
            elif k in ("learning_rate", "init_scale"):
                kw[k] = float(v)
            else:
                kw[k] = int(v)
        return cls(**kw)


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = -1

    @property
    def epochs_run(self) -> int:
        return len(self.train_loss)

    @property
    def best_val_loss(self) -> float:
        return min(self.val_loss) if self.val_loss else float("nan")


def fit(params: Params,
        batch_loss: Callable[[Params, np.ndarray], Tuple[float, Params]],
        n_train: int,
        val_loss: Optional[Callable[[Params], float]],
        cfg: TrainConfig,
        seed: int) -> TrainHistory:
    """Optimize ``params`` in place.

    ``batch_loss(params, idx)`` returns the mean loss and gradients on the
    training rows ``idx``. When ``val_loss`` is given, training stops after
    ``cfg.patience`` epochs without improvement and the best parameters are
    restored.
    """
    rng = np.random.default_rng(seed)
    opt = AdamState.for_params(params, learning_rate=cfg.learning_rate)
    hist = TrainHistory()
    best = float("inf")
    best_params = None
    stale = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(n_train)
        total = 0.0
        for start in range(0, n_train, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, grads = batch_loss(params, idx)
            if not np.isfinite(loss):
                raise TrainingError(f"loss became non-finite in epoch {epoch}")
            adam_step(opt, params, grads)
            total += loss * len(idx)
        hist.train_loss.append(total / max(n_train, 1))
        if val_loss is None:
            continue
        vl = val_loss(params)
        hist.val_loss.append(vl)
        log.debug("epoch %d train %.5f val %.5f", epoch, hist.train_loss[-1], vl)
        if vl < best:
            best, stale, hist.best_epoch = vl, 0, epoch
            best_params = {k: v.copy() for k, v in params.items()}
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    if best_params is not None:
        for k in params:
            params[k][...] = best_params[k]
    return hist
