"""Synthetic cascade user with a price-anchoring permutation effect.

The user browses an exhibited list top-down. At each exposed position ``t``
(0-based) they click with probability

    sigmoid(base_click[u, i] + gamma_price * [price(prev) > price(i)])

and continue to position ``t + 1`` with probability

    sigmoid(base_next[u, i] + gamma_pos * t).

Base logits are a global bias plus an item effect, a gender x category
affinity and small per-pair noise, all Gaussian, so they are learnable from
the feature schema in :mod:`permrank.datamodel`.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .datamodel import InteractionRecord, ItemProfile, Schema, UserProfile
from .errors import ConfigError, DomainError
from .numerics import _sigmoid


@dataclass(frozen=True)
class SimSpec:
    n_users: int = 10
    n_items: int = 50
    n_genders: int = 2
    n_categories: int = 10
    n_brands: int = 20
    click_bias: float = -1.0
    item_click_std: float = 0.3
    click_affinity_std: float = 0.3
    next_bias: float = 3.0
    item_next_std: float = 0.3
    next_affinity_std: float = 0.4
    pair_noise_std: float = 0.2
    price_log_mean: float = 3.0
    price_log_std: float = 0.6
    gamma_price: float = 1.0
    gamma_pos: float = -0.15
    seed: int = 0

    def __post_init__(self):
        for f in ("n_users", "n_items", "n_genders", "n_categories", "n_brands"):
            if getattr(self, f) <= 0:
                raise ConfigError(f"{f} must be positive")
        if self.gamma_pos > 0:
            raise ConfigError("gamma_pos must be <= 0")
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, float) and not np.isfinite(v):
                raise ConfigError(f"{f.name} must be finite")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SimSpec":
        known = {f.name: f.type for f in fields(cls)}
        unknown = set(d) - set(known)
        if unknown:
            raise ConfigError(f"unknown simulator keys: {sorted(unknown)}")
        kw = {}
        for k, v in d.items():
            kw[k] = int(v) if k.startswith("n_") or k == "seed" else float(v)
        return cls(**kw)


@dataclass
class Catalog:
    spec: SimSpec
    users: List[UserProfile]
    items: List[ItemProfile]
    click_logit: np.ndarray  # (n_users, n_items)
    next_logit: np.ndarray  # (n_users, n_items)

    @property
    def prices(self) -> np.ndarray:
        return np.array([it.price for it in self.items])

    def schema(self, dim: int = 8) -> Schema:
        s = self.spec
        return Schema(s.n_users, s.n_genders, s.n_items, s.n_categories, s.n_brands, dim=dim)


@dataclass(frozen=True)
class SessionOutcome:
    y_ctr: Tuple[int, ...]
    y_next: Tuple[int, ...]
    exposure_mask: Tuple[int, ...]


def gen_catalog(spec: SimSpec) -> Catalog:
    """Draw users, items and latent logit tables; deterministic in ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    U, I = spec.n_users, spec.n_items
    genders = rng.integers(spec.n_genders, size=U)
    ages = np.round(rng.uniform(18.0, 65.0, size=U), 1)
    cats = rng.integers(spec.n_categories, size=I)
    brands = rng.integers(spec.n_brands, size=I)
    prices = np.round(np.exp(rng.normal(spec.price_log_mean, spec.price_log_std, size=I)), 2)
    prices = np.maximum(prices, 0.01)

    item_click = rng.normal(0.0, spec.item_click_std, size=I)
    aff_click = rng.normal(0.0, spec.click_affinity_std, size=(spec.n_genders, spec.n_categories))
    item_next = rng.normal(0.0, spec.item_next_std, size=I)
    aff_next = rng.normal(0.0, spec.next_affinity_std, size=(spec.n_genders, spec.n_categories))
    noise_c = rng.normal(0.0, spec.pair_noise_std, size=(U, I))
    noise_n = rng.normal(0.0, spec.pair_noise_std, size=(U, I))

    click = spec.click_bias + item_click[None, :] + aff_click[genders][:, cats] + noise_c
    nxt = spec.next_bias + item_next[None, :] + aff_next[genders][:, cats] + noise_n
    users = [UserProfile(u, int(genders[u]), float(ages[u])) for u in range(U)]
    items = [ItemProfile(i, int(cats[i]), int(brands[i]), float(prices[i])) for i in range(I)]
    return Catalog(spec, users, items, click, nxt)


def _check_position(items: Sequence[int], position: int) -> None:
    if not 0 <= position < len(items):
        raise DomainError(f"position {position} outside list of length {len(items)}")


def click_prob(catalog: Catalog, user: int, items: Sequence[int], position: int) -> float:
    """Click probability at 0-based ``position`` given the list prefix."""
    _check_position(items, position)
    logit = catalog.click_logit[user, items[position]]
    if position > 0:
        p = catalog.items
        if p[items[position - 1]].price > p[items[position]].price:
            logit += catalog.spec.gamma_price
    return float(_sigmoid(logit))


def continue_prob(catalog: Catalog, user: int, items: Sequence[int], position: int) -> float:
    """Probability of continuing past 0-based ``position``."""
    _check_position(items, position)
    logit = catalog.next_logit[user, items[position]] + catalog.spec.gamma_pos * position
    return float(_sigmoid(logit))


def list_probs(catalog: Catalog, user: int, items: Sequence[int]) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorized ``(click_probs, continue_probs)`` for every position."""
    items = np.asarray(items, dtype=np.int64)
    prices = catalog.prices[items]
    anchor = np.zeros(len(items))
    anchor[1:] = prices[:-1] > prices[1:]
    click = _sigmoid(catalog.click_logit[user, items] + catalog.spec.gamma_price * anchor)
    cont = _sigmoid(catalog.next_logit[user, items] + catalog.spec.gamma_pos * np.arange(len(items)))
    return click, cont


def simulate_session(catalog: Catalog, user: int, items: Sequence[int],
                     rng: np.random.Generator) -> SessionOutcome:
    """Cascade browsing with a click draw then a continue draw per exposed item."""
    if len(items) == 0:
        raise DomainError("cannot simulate an empty list")
    click, cont = list_probs(catalog, user, items)
    n = len(items)
    y_ctr, y_next, mask = [0] * n, [0] * n, [0] * n
    for t in range(n):
        mask[t] = 1
        y_ctr[t] = int(rng.random() < click[t])
        y_next[t] = int(rng.random() < cont[t])
        if not y_next[t]:
            break
    return SessionOutcome(tuple(y_ctr), tuple(y_next), tuple(mask))


def true_expected_reward(catalog: Catalog, user: int, items: Sequence[int]) -> Tuple[float, float]:
    """Closed-form ``(E[PV], E[IPV])`` under the cascade."""
    if len(items) == 0:
        raise DomainError("empty list")
    click, cont = list_probs(catalog, user, items)
    exposure = np.concatenate([[1.0], np.cumprod(cont[:-1])])
    return float(exposure.sum()), float((exposure * click).sum())


def _session_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def _noisy_greedy(catalog, user, C, n, epsilon, rng) -> List[int]:
    V = list(C[:n])  # C is already sorted by base click logit
    outside = list(C[n:])
    for t in range(n):
        if rng.random() >= epsilon:
            continue
        if outside and rng.random() < 0.5:
            j = int(rng.integers(len(outside)))
            V[t], outside[j] = outside[j], V[t]
        else:
            j = int(rng.integers(n))
            V[t], V[j] = V[j], V[t]
    return V


def gen_logs(catalog: Catalog, sessions: int, m: int = 100, n: int = 4,
             policy: str = "noisy_greedy", epsilon: float = 0.2,
             seed: Optional[int] = None) -> List[InteractionRecord]:
    """Generate logged sessions.

    ``C`` is ``m`` distinct items sorted by the user's base click logit (the
    upstream ranker's order). ``V`` is chosen by ``policy``:

    * ``noisy_greedy``: top-``n`` of ``C``; each slot is perturbed with
      probability ``epsilon`` by a swap with an outside item or another slot.
    * ``random``: ``n`` uniformly random items of ``C`` in random order.

    Session ``k`` draws from its own stream seeded by ``(seed, k)``.
    """
    if sessions < 0:
        raise ConfigError("sessions must be >= 0")
    if not 1 <= n <= m <= catalog.spec.n_items:
        raise ConfigError(f"need 1 <= n <= m <= n_items, got n={n}, m={m}")
    if policy not in ("noisy_greedy", "random"):
        raise ConfigError(f"unknown logging policy {policy!r}")
    seed = catalog.spec.seed if seed is None else seed
    out = []
    for k in range(sessions):
        rng = _session_rng(seed, k)
        user = int(rng.integers(catalog.spec.n_users))
        pool = rng.choice(catalog.spec.n_items, size=m, replace=False)
        C = [int(i) for i in pool[np.argsort(-catalog.click_logit[user, pool], kind="stable")]]
        if policy == "noisy_greedy":
            V = _noisy_greedy(catalog, user, C, n, epsilon, rng)
        else:
            V = [C[j] for j in rng.permutation(m)[:n]]
        res = simulate_session(catalog, user, V, rng)
        out.append(_make_record(catalog, user, C, V, res))
    return out


def gen_anchor_only_logs(catalog: Catalog, sessions: int, m: int = 20, n: int = 4,
                         seed: Optional[int] = None) -> List[InteractionRecord]:
    """Fully exposed random lists whose click label is exactly
    ``[previous item is pricier]``; the first position never clicks."""
    if not 1 <= n <= m <= catalog.spec.n_items:
        raise ConfigError(f"need 1 <= n <= m <= n_items, got n={n}, m={m}")
    seed = catalog.spec.seed if seed is None else seed
    prices = catalog.prices
    out = []
    for k in range(sessions):
        rng = _session_rng(seed, k)
        user = int(rng.integers(catalog.spec.n_users))
        C = [int(i) for i in rng.choice(catalog.spec.n_items, size=m, replace=False)]
        V = [C[j] for j in rng.permutation(m)[:n]]
        y = tuple([0] + [int(prices[V[t - 1]] > prices[V[t]]) for t in range(1, n)])
        res = SessionOutcome(y, (1,) * n, (1,) * n)
        out.append(_make_record(catalog, user, C, V, res))
    return out


def _make_record(catalog, user, C, V, res: SessionOutcome) -> InteractionRecord:
    items = catalog.items
    return InteractionRecord(catalog.users[user], tuple(items[i] for i in C),
                             tuple(items[i] for i in V), res.y_ctr, res.y_next,
                             res.exposure_mask)
