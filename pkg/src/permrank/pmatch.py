"""Candidate-list generation: point-wise CTR/NEXT models and FPSA beam search.

Items inside the search are referred to by their rank, i.e. their index in
the input ranking list. Ties between equal rewards are always broken in
favour of the lexicographically smaller rank sequence.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .datamodel import (InteractionRecord, ItemProfile, Schema, UserProfile,
                        embedding_grads, encode_fields, init_embeddings,
                        item_arrays, record_arrays, user_arrays)
from .errors import ConfigError, FormatError, ParseError, TrainingError
from .heap import BoundedTopK
from .numerics import (Params, bce_grad, bce_loss, init_mlp, load_checkpoint,
                       mlp_backward, mlp_forward, save_checkpoint)
from .training import TrainConfig, TrainHistory, fit

TARGETS = ("ctr", "next")


# ---------------------------------------------------------------------------
# Point-wise models
# ---------------------------------------------------------------------------


@dataclass
class PointwiseModel:
    """``sigmoid(MLP(item ⊕ user))`` predicting click or continue."""
    target: str
    schema: Schema
    params: Params
    config: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0
    history: Optional[TrainHistory] = None

    @classmethod
    def init(cls, target: str, schema: Schema, config: TrainConfig = TrainConfig(),
             seed: int = 0) -> "PointwiseModel":
        if target not in TARGETS:
            raise ConfigError(f"unknown target {target!r}")
        schema = Schema(**{**schema.to_dict(), "dim": config.emb_dim})
        rng = np.random.default_rng(seed)
        params = init_embeddings(schema, rng, config.init_scale)
        params.update(init_mlp(schema.item_dim + schema.user_dim, config.hidden, rng,
                               config.init_scale, prefix="mlp."))
        return cls(target, schema, params, config, seed)

    @property
    def input_dim(self) -> int:
        return self.schema.item_dim + self.schema.user_dim

    def _inputs(self, uids, udense, iids, idense):
        xv = encode_fields(iids, idense, self.params, self.schema, "item")
        xu = encode_fields(uids, udense, self.params, self.schema, "user")
        return np.concatenate([xv, xu], axis=1)

    def predict_arrays(self, uids, udense, iids, idense) -> np.ndarray:
        p, _ = mlp_forward(self.params, self._inputs(uids, udense, iids, idense), prefix="mlp.")
        return p

    def predict(self, user: UserProfile, items: Sequence[ItemProfile]) -> np.ndarray:
        """Probabilities for every item in ``items`` for one user."""
        uids, ud = user_arrays([user] * len(items))
        iids, idn = item_arrays(items)
        return self.predict_arrays(uids, ud, iids, idn)

    def loss_and_grads(self, uids, udense, iids, idense, y) -> Tuple[float, Params]:
        x = self._inputs(uids, udense, iids, idense)
        p, cache = mlp_forward(self.params, x, prefix="mlp.")
        grads, gx = mlp_backward(self.params, cache, bce_grad(y, p), prefix="mlp.")
        d = self.schema.item_dim
        grads.update(embedding_grads(iids, gx[:, :d], self.params, self.schema, "item"))
        grads.update(embedding_grads(uids, gx[:, d:], self.params, self.schema, "user"))
        return bce_loss(y, p), grads

    def save(self, path) -> None:
        meta = {"target": self.target, "schema": self.schema.to_dict(),
                "config": self.config.to_dict()}
        save_checkpoint(path, f"pointwise-{self.target}", self.params, meta, self.seed)

    @classmethod
    def load(cls, path) -> "PointwiseModel":
        kind, params, meta, seed = load_checkpoint(path)
        if not kind.startswith("pointwise-"):
            raise FormatError(f"{path}: expected a point-wise checkpoint, got {kind!r}")
        return cls(meta["target"], Schema(**meta["schema"]), params,
                   TrainConfig.from_dict(meta["config"]), seed)


def pointwise_examples(records: Sequence[InteractionRecord], target: str):
    """Flatten exposed positions into ``(uids, udense, iids, idense, labels)``."""
    a = record_arrays(records)
    keep = a.mask.reshape(-1) > 0
    n = a.item_ids.shape[1]
    uids = np.repeat(a.user_ids, n, axis=0)[keep]
    ud = np.repeat(a.user_dense, n, axis=0)[keep]
    iids = a.item_ids.reshape(-1, 3)[keep]
    idn = a.item_dense.reshape(-1, 1)[keep]
    y = (a.y_ctr if target == "ctr" else a.y_next).reshape(-1)[keep]
    return uids, ud, iids, idn, y


def train_pointwise(records: Sequence[InteractionRecord], target: str,
                    config: TrainConfig = TrainConfig(), seed: int = 0,
                    val_records: Optional[Sequence[InteractionRecord]] = None,
                    schema: Optional[Schema] = None) -> PointwiseModel:
    """Fit a CTR or NEXT model with masked BCE.

    Dense-feature statistics are fitted on ``records`` only. ``schema``
    supplies vocabulary sizes; when omitted they are inferred from the data.
    """
    if target not in TARGETS:
        raise ConfigError(f"unknown target {target!r}")
    if not records:
        raise TrainingError("empty training set")
    schema = (schema or infer_schema(records)).with_stats(records)
    model = PointwiseModel.init(target, schema, config, seed)
    ex = pointwise_examples(records, target)
    if len(ex[-1]) == 0:
        raise TrainingError("no exposed positions to train on")
    val_fn = None
    if val_records:
        vex = pointwise_examples(val_records, target)
        if len(vex[-1]):
            val_fn = lambda params: bce_loss(vex[-1], model.predict_arrays(*vex[:-1]))

    def batch_loss(params, idx):
        return model.loss_and_grads(*(e[idx] for e in ex))

    model.history = fit(model.params, batch_loss, len(ex[-1]), val_fn, config, seed)
    return model


def infer_schema(records: Sequence[InteractionRecord], dim: int = 8) -> Schema:
    users = [r.user for r in records]
    items = [it for r in records for it in r.C]
    mx = lambda xs: (max(xs) + 1) if xs else 1
    return Schema(mx([u.user_id for u in users]), mx([u.gender for u in users]),
                  mx([i.item_id for i in items]), mx([i.category for i in items]),
                  mx([i.brand for i in items]), dim=dim)


# ---------------------------------------------------------------------------
# Scoring and reward
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScoredCandidate:
    item: ItemProfile
    p_ctr: float
    p_next: float


def score_candidates(model_ctr: PointwiseModel, model_next: PointwiseModel,
                     user: UserProfile, C: Sequence[ItemProfile]) -> List[ScoredCandidate]:
    if not C:
        raise ConfigError("empty input list")
    pc = model_ctr.predict(user, C)
    pn = model_next.predict(user, C)
    return [ScoredCandidate(it, float(a), float(b)) for it, a, b in zip(C, pc, pn)]


def _reward_walk(items: Sequence[int], scores: Sequence[ScoredCandidate]):
    r_pv, r_ipv, p_expose = 1.0, 0.0, 1.0
    for i in items:
        if not 0 <= i < len(scores):
            raise LookupError(f"no score for candidate {i}")
        s = scores[i]
        r_pv += p_expose * s.p_next
        r_ipv += p_expose * s.p_ctr
        p_expose *= s.p_next
    return r_pv, r_ipv, p_expose


def calc_estimated_reward(items: Sequence[int], scores: Sequence[ScoredCandidate],
                          alpha: float, beta: float) -> Tuple[float, float, float]:
    """Estimated ``(r_pv, r_ipv, r_sum)`` of a list of candidate ranks.

    PV starts at 1 before any item is walked; each item adds its expose
    probability times its NEXT (to PV) and CTR (to IPV) score, then the
    expose probability is multiplied by its NEXT score.
    """
    if len(items) == 0:
        raise ConfigError("empty list")
    r_pv, r_ipv, _ = _reward_walk(items, scores)
    return r_pv, r_ipv, alpha * r_pv + beta * r_ipv


@dataclass(frozen=True)
class BeamEntry:
    items: Tuple[int, ...]
    r_pv: float
    r_ipv: float
    r_sum: float
    p_expose: float
    source: str = "fpsa"

    def key(self):
        # larger is better: reward first, then lexicographically smaller ranks
        return (self.r_sum, tuple(-i for i in self.items))


def make_entry(items: Sequence[int], scores: Sequence[ScoredCandidate], alpha: float,
               beta: float, source: str = "fpsa") -> BeamEntry:
    r_pv, r_ipv, p_exp = _reward_walk(items, scores)
    return BeamEntry(tuple(items), r_pv, r_ipv, alpha * r_pv + beta * r_ipv, p_exp, source)


class CandidateSet:
    """Complete lists of one length, deduplicated by exact rank sequence."""

    def __init__(self, entries: Iterable[BeamEntry] = (), n: Optional[int] = None):
        self.n = n
        self._entries: Dict[Tuple[int, ...], BeamEntry] = {}
        for e in entries:
            self.add(e)

    def add(self, entry: BeamEntry) -> bool:
        if self.n is None:
            self.n = len(entry.items)
        elif len(entry.items) != self.n:
            raise ConfigError(f"list length {len(entry.items)} differs from set length {self.n}")
        if len(set(entry.items)) != len(entry.items):
            raise ConfigError("list contains a duplicate item")
        if entry.items in self._entries:
            return False
        self._entries[entry.items] = entry
        return True

    def __len__(self):
        return len(self._entries)

    def __contains__(self, items) -> bool:
        return tuple(items) in self._entries

    def __iter__(self) -> Iterator[BeamEntry]:
        return iter(self.entries())

    def entries(self) -> List[BeamEntry]:
        """All lists, best estimated reward first."""
        return sorted(self._entries.values(), key=BeamEntry.key, reverse=True)

    def top(self) -> BeamEntry:
        return self.entries()[0]

    def __eq__(self, other):
        return isinstance(other, CandidateSet) and self._entries == other._entries


# ---------------------------------------------------------------------------
# FPSA
# ---------------------------------------------------------------------------


def fpsa(scored: Sequence[ScoredCandidate], n: int, k: int, alpha: float,
         beta: float) -> CandidateSet:
    """Goal-oriented beam search over ordered ``n``-selections.

    Each round extends every beam by every unused candidate and keeps the
    ``k`` best by ``r_sum``. Rewards are carried on the beam and updated in
    O(1) per extension with the same arithmetic as
    :func:`calc_estimated_reward`, so stored values equal a from-scratch walk
    exactly.
    """
    m = len(scored)
    if not 1 <= n <= m:
        raise ConfigError(f"need 1 <= n <= |C|, got n={n}, |C|={m}")
    if k < 1:
        raise ConfigError("beam size k must be >= 1")
    if alpha < 0 or beta < 0 or (alpha == 0 and beta == 0):
        raise ConfigError("alpha and beta must be >= 0 and not both 0")
    ctr = np.array([s.p_ctr for s in scored], dtype=np.float64)
    nxt = np.array([s.p_next for s in scored], dtype=np.float64)

    seqs: List[Tuple[int, ...]] = [()]
    r_pv = np.ones(1)
    r_ipv = np.zeros(1)
    p_exp = np.ones(1)
    used = np.zeros((1, m), dtype=bool)
    for _ in range(n):
        cand_pv = r_pv[:, None] + p_exp[:, None] * nxt[None, :]
        cand_ipv = r_ipv[:, None] + p_exp[:, None] * ctr[None, :]
        cand_sum = alpha * cand_pv + beta * cand_ipv
        cand_sum[used] = -np.inf
        flat = cand_sum.ravel()
        valid = flat.size - int(used.sum())
        if valid > k:
            thr = np.partition(flat, flat.size - k)[flat.size - k]
            pool = np.flatnonzero(flat >= thr)
        else:
            pool = np.flatnonzero(flat > -np.inf)
        # exact top-k with the lexicographic tie rule
        keeper = BoundedTopK(k)
        for f in pool.tolist():
            b, c = divmod(f, m)
            seq = seqs[b] + (c,)
            keeper.offer((flat[f], tuple(-i for i in seq), b, c))
        kept = keeper.sorted_desc()
        bi = np.array([t[2] for t in kept])
        ci = np.array([t[3] for t in kept])
        seqs = [seqs[b] + (c,) for _, _, b, c in kept]
        r_pv = cand_pv[bi, ci]
        r_ipv = cand_ipv[bi, ci]
        p_exp = p_exp[bi] * nxt[ci]
        used = used[bi].copy()
        used[np.arange(len(ci)), ci] = True
    entries = [BeamEntry(s, float(a), float(b), float(alpha * a + beta * b), float(p))
               for s, a, b, p in zip(seqs, r_pv, r_ipv, p_exp)]
    return CandidateSet(entries, n)


def greedy_ctr_list(scored: Sequence[ScoredCandidate], n: int, alpha: float = 7.0,
                    beta: float = 1.0) -> CandidateSet:
    """External generator: top-``n`` by descending CTR (ties by rank)."""
    if not 1 <= n <= len(scored):
        raise ConfigError(f"need 1 <= n <= |C|, got n={n}")
    order = sorted(range(len(scored)), key=lambda i: (-scored[i].p_ctr, i))[:n]
    return CandidateSet([make_entry(order, scored, alpha, beta, "external")], n)


def merge_candidates(sets: Sequence[CandidateSet], scored: Sequence[ScoredCandidate],
                     alpha: float, beta: float) -> CandidateSet:
    """Union with exact-sequence dedup; first occurrence wins.

    Lists that did not come from FPSA get their rewards recomputed against
    ``scored`` so that all entries are comparable.
    """
    lengths = {s.n for s in sets if len(s)}
    if len(lengths) > 1:
        raise ConfigError(f"cannot merge lists of different lengths {sorted(lengths)}")
    out = CandidateSet(n=lengths.pop() if lengths else None)
    for s in sets:
        for e in s.entries():
            if e.source != "fpsa":
                e = make_entry(e.items, scored, alpha, beta, e.source)
            out.add(e)
    return out


# ---------------------------------------------------------------------------
# Candidate-set files
# ---------------------------------------------------------------------------

CANDIDATES_FORMAT = "permrank-candidates"


def save_candidate_sets(path, sessions: Sequence[Tuple[int, CandidateSet, Sequence[int]]]) -> None:
    """One line per list: session index, ranks, item ids and the reward triple.

    ``sessions`` holds ``(session_index, candidate_set, item_ids_of_C)``.
    """
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"format": CANDIDATES_FORMAT, "version": 1}) + "\n")
        for sid, cset, ids in sessions:
            for e in cset.entries():
                row = {"session": sid, "items": list(e.items),
                       "item_ids": [int(ids[i]) for i in e.items],
                       "r_pv": e.r_pv, "r_ipv": e.r_ipv, "r_sum": e.r_sum,
                       "p_expose": e.p_expose, "source": e.source}
                fh.write(json.dumps(row) + "\n")


def load_candidate_sets(path) -> Dict[int, CandidateSet]:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError("missing header", line=1)
    try:
        head = json.loads(lines[0])
    except json.JSONDecodeError:
        raise ParseError("bad header", line=1) from None
    if head.get("format") != CANDIDATES_FORMAT or head.get("version") != 1:
        raise FormatError("not a candidate-set file")
    out: Dict[int, CandidateSet] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            row = json.loads(line)
            e = BeamEntry(tuple(row["items"]), row["r_pv"], row["r_ipv"], row["r_sum"],
                          row["p_expose"], row["source"])
            out.setdefault(int(row["session"]), CandidateSet()).add(e)
        except (json.JSONDecodeError, KeyError, TypeError, ConfigError) as exc:
            raise ParseError(f"malformed candidate line: {exc}", line=lineno) from None
    return out
