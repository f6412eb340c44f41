"""List ranking: the Bi-LSTM permutation-wise scorer (DPWN) and the LR metric.

DPWN reads the exhibited list in both directions and scores position ``t``
with ``sigmoid(MLP(user ⊕ item_t ⊕ h_t))``, so every position's probability
depends on the whole permutation. The LR of a list is the sum of those
probabilities; SR is the same sum under a point-wise model.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .datamodel import (InteractionRecord, ItemProfile, RecordArrays, Schema,
                        UserProfile, embedding_grads, encode_fields,
                        init_embeddings, item_arrays, record_arrays,
                        user_arrays)
from .errors import ConfigError, FormatError, TrainingError
from .numerics import (Params, bce_grad, bce_loss, bilstm_backward,
                       bilstm_forward, init_bilstm, init_mlp, load_checkpoint,
                       mlp_backward, mlp_forward, save_checkpoint)
from .pmatch import BeamEntry, CandidateSet, PointwiseModel, infer_schema
from .training import TrainConfig, TrainHistory, fit


@dataclass
class DpwnModel:
    schema: Schema
    params: Params
    config: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0
    history: Optional[TrainHistory] = None

    @classmethod
    def init(cls, schema: Schema, config: TrainConfig = TrainConfig(), seed: int = 0) -> "DpwnModel":
        schema = Schema(**{**schema.to_dict(), "dim": config.emb_dim})
        rng = np.random.default_rng(seed)
        params = init_embeddings(schema, rng, config.init_scale)
        params.update(init_bilstm(schema.item_dim, config.lstm_hidden, rng,
                                  config.init_scale, prefix="lstm."))
        head_in = schema.user_dim + schema.item_dim + 2 * config.lstm_hidden
        params.update(init_mlp(head_in, config.hidden, rng, config.init_scale, prefix="mlp."))
        return cls(schema, params, config, seed)

    @property
    def head_input_dim(self) -> int:
        return self.schema.user_dim + self.schema.item_dim + 2 * self.config.lstm_hidden

    def forward(self, uids, udense, iids, idense):
        """Batched scoring of equal-length lists.

        ``uids (B, 2)``, ``udense (B, 1)``, ``iids (B, T, 3)``,
        ``idense (B, T, 1)``. Returns ``(probs (B, T), cache)``.
        """
        xu = encode_fields(uids, udense, self.params, self.schema, "user")
        xv = encode_fields(iids, idense, self.params, self.schema, "item")
        h, lcache = bilstm_forward(self.params, xv, prefix="lstm.",
                                   literal_cell=self.config.literal_cell)
        B, T, _ = xv.shape
        head = np.concatenate([np.broadcast_to(xu[:, None, :], (B, T, xu.shape[1])), xv, h], axis=2)
        p, mcache = mlp_forward(self.params, head.reshape(B * T, -1), prefix="mlp.")
        return p.reshape(B, T), (xu.shape[1], xv.shape[2], B, T, lcache, mcache)

    def backward(self, cache, grad_p, uids, iids) -> Params:
        du, di, B, T, lcache, mcache = cache
        grads, g_in = mlp_backward(self.params, mcache, np.asarray(grad_p).reshape(-1), prefix="mlp.")
        g_in = g_in.reshape(B, T, -1)
        g_xu = g_in[:, :, :du].sum(axis=1)
        g_xv = g_in[:, :, du:du + di].copy()
        g_lstm, g_x = bilstm_backward(self.params, lcache, g_in[:, :, du + di:], prefix="lstm.")
        grads.update(g_lstm)
        g_xv += g_x
        grads.update(embedding_grads(uids, g_xu, self.params, self.schema, "user"))
        grads.update(embedding_grads(iids, g_xv, self.params, self.schema, "item"))
        return grads

    def loss_and_grads(self, a: RecordArrays) -> Tuple[float, Params]:
        p, cache = self.forward(a.user_ids, a.user_dense, a.item_ids, a.item_dense)
        loss = bce_loss(a.y_ctr, p, a.mask)
        grads = self.backward(cache, bce_grad(a.y_ctr, p, a.mask), a.user_ids, a.item_ids)
        return loss, grads

    def score_lists(self, user: UserProfile, lists: Sequence[Sequence[ItemProfile]]) -> np.ndarray:
        """Per-position probabilities for several equal-length lists, ``(L, n)``."""
        if not lists or any(len(l) == 0 for l in lists):
            raise ConfigError("lists must be nonempty")
        n = len(lists[0])
        if any(len(l) != n for l in lists):
            raise ConfigError("lists must share one length")
        uids, ud = user_arrays([user] * len(lists))
        iids, idn = item_arrays([it for l in lists for it in l])
        p, _ = self.forward(uids, ud, iids.reshape(len(lists), n, 3), idn.reshape(len(lists), n, 1))
        return p

    def save(self, path) -> None:
        meta = {"schema": self.schema.to_dict(), "config": self.config.to_dict()}
        save_checkpoint(path, "dpwn", self.params, meta, self.seed)

    @classmethod
    def load(cls, path) -> "DpwnModel":
        kind, params, meta, seed = load_checkpoint(path)
        if kind != "dpwn":
            raise FormatError(f"{path}: expected a dpwn checkpoint, got {kind!r}")
        return cls(Schema(**meta["schema"]), params, TrainConfig.from_dict(meta["config"]), seed)


def train_dpwn(records: Sequence[InteractionRecord], config: TrainConfig = TrainConfig(),
               seed: int = 0, val_records: Optional[Sequence[InteractionRecord]] = None,
               schema: Optional[Schema] = None) -> DpwnModel:
    """Fit DPWN on exhibited lists against click labels, unexposed positions masked."""
    if not records:
        raise TrainingError("empty training set")
    data = record_arrays(records)
    if data.mask.sum() == 0:
        raise TrainingError("no exposed positions to train on")
    schema = (schema or infer_schema(records)).with_stats(records)
    model = DpwnModel.init(schema, config, seed)
    val_fn = None
    if val_records:
        va = record_arrays(val_records)
        if va.mask.sum() > 0:
            def val_fn(params):
                p, _ = model.forward(va.user_ids, va.user_dense, va.item_ids, va.item_dense)
                return bce_loss(va.y_ctr, p, va.mask)

    def batch_loss(params, idx):
        batch = data.take(idx)
        if batch.mask.sum() == 0:
            return 0.0, {}
        return model.loss_and_grads(batch)

    model.history = fit(model.params, batch_loss, len(data), val_fn, config, seed)
    return model


def dpwn_score(model: DpwnModel, user: UserProfile, items: Sequence[ItemProfile]) -> np.ndarray:
    return model.score_lists(user, [items])[0]


def lr_metric(model: DpwnModel, user: UserProfile, items: Sequence[ItemProfile]) -> float:
    """Sum of DPWN per-position probabilities."""
    return float(dpwn_score(model, user, items).sum())


def sr_metric(model: PointwiseModel, user: UserProfile, items: Sequence[ItemProfile]) -> float:
    """Sum of point-wise probabilities; order-independent by construction."""
    if len(items) == 0:
        raise ConfigError("empty list")
    return float(np.sort(model.predict(user, items)).sum())


def select_best(candidates: CandidateSet, model: DpwnModel, user: UserProfile,
                C: Sequence[ItemProfile]) -> Tuple[BeamEntry, List[Tuple[BeamEntry, float]]]:
    """Pick the list with the highest LR.

    Ties go to the higher ``r_sum``, then to the lexicographically smaller
    rank sequence. Returns the winner and the full ``(entry, lr)`` ranking.
    All lists are scored in a single batched pass.
    """
    entries = list(candidates)
    if not entries:
        raise ConfigError("empty candidate set")
    probs = model.score_lists(user, [[C[i] for i in e.items] for e in entries])
    lrs = probs.sum(axis=1)
    ranking = sorted(zip(entries, lrs.tolist()),
                     key=lambda t: (-t[1], -t[0].r_sum, t[0].items))
    return ranking[0][0], ranking
