"""Metrics and the exhaustive permutation oracle."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import rankdata

from .datamodel import InteractionRecord, ItemProfile, UserProfile
from .errors import MetricError, ResourceGuardError
from .pmatch import ScoredCandidate, calc_estimated_reward, fpsa

ORACLE_GUARD = 10 ** 7


def auc(labels, scores) -> float:
    """Mann-Whitney AUC with midranks for ties."""
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    if y.shape != s.shape:
        raise MetricError("labels and scores differ in length")
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos == 0 or n_neg == 0 or n_pos + n_neg != y.size:
        raise MetricError("AUC needs binary labels with both classes present")
    ranks = rankdata(s)
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def pearson(x, y) -> float:
    a = np.asarray(x, dtype=np.float64)
    b = np.asarray(y, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.size < 2:
        raise MetricError("pearson needs two equal-length vectors of length >= 2")
    a = a - a.mean()
    b = b - b.mean()
    na, nb = np.sqrt((a * a).sum()), np.sqrt((b * b).sum())
    if na == 0 or nb == 0:
        raise MetricError("pearson is undefined for a constant vector")
    return float(np.clip((a * b).sum() / (na * nb), -1.0, 1.0))


def list_metric_pearson(metric: Callable[[InteractionRecord], float],
                        records: Sequence[InteractionRecord]) -> float:
    """Correlation between a per-record list metric and the record's click count."""
    if len(records) < 2:
        raise MetricError("need at least two records")
    return pearson([metric(r) for r in records], [sum(r.y_ctr) for r in records])


def relative_improvement(candidate: float, reference: float) -> float:
    if not reference > 0:
        raise MetricError("reference must be positive")
    return (candidate - reference) / reference


@dataclass
class OracleResult:
    best: Tuple[int, ...]
    best_value: float
    evaluations: int
    table: Optional[Dict[Tuple[int, ...], float]] = None


def exhaustive_oracle(m: int, n: int, reward: Callable[[Tuple[int, ...]], float],
                      guard: int = ORACLE_GUARD, full_table: bool = False) -> OracleResult:
    """Evaluate ``reward`` on every ordered ``n``-selection of ``range(m)``.

    Ties resolve to the lexicographically first sequence, matching the beam
    search tie rule.
    """
    total = math.perm(m, n)
    if total > guard:
        raise ResourceGuardError(f"{total} permutations exceed the guard of {guard}")
    best, best_v = None, -math.inf
    table = {} if full_table else None
    count = 0
    for seq in itertools.permutations(range(m), n):
        v = reward(seq)
        count += 1
        if table is not None:
            table[seq] = v
        if v > best_v:
            best, best_v = seq, v
    return OracleResult(best, best_v, count, table)


def rsum_reward(scored: Sequence[ScoredCandidate], alpha: float, beta: float):
    return lambda seq: calc_estimated_reward(seq, scored, alpha, beta)[2]


def alpha_sweep(sessions: Sequence[Tuple[UserProfile, Sequence[ItemProfile], Sequence[ScoredCandidate]]],
                alphas: Sequence[float], beta: float, n: int, k: int, lr_model) -> List[Tuple[float, float]]:
    """Mean LR of the FPSA top list for each ``alpha``.

    ``sessions`` holds ``(user, C, scored_C)`` triples.
    """
    if not alphas:
        raise MetricError("empty alpha grid")
    rows = []
    for a in alphas:
        lrs = []
        for user, C, scored in sessions:
            top = fpsa(scored, n, k, a, beta).top()
            lrs.append(float(lr_model.score_lists(user, [[C[i] for i in top.items]]).sum()))
        rows.append((float(a), float(np.mean(lrs))))
    return rows
