"""Records, feature schema, embedding lookup and the dataset file format.

Reference schema: users carry ``(user_id, gender)`` sparse and ``age`` dense,
items carry ``(item_id, category, brand)`` sparse and ``price`` dense. Each
sparse field owns an embedding table stored in the model's parameter dict
under ``emb.<field>``; the last row of every table is the out-of-vocabulary
row. Dense fields are z-scored with statistics fitted on training data.

Dataset file layout (UTF-8, one JSON document per line)::

    {"format": "permrank-dataset", "version": 1, "count": N,
     "vocab": {...}, "stats": {...}}
    [[user_id, gender, age], [[item_id, category, brand, price], ...],
     [V as indices into C], [y_ctr], [y_next], [exposure_mask]]
    ...
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import DomainError, FormatError, ParseError, ShapeError
from .numerics import INIT_SCALE, Params

USER_SPARSE = ("user_id", "gender")
USER_DENSE = ("age",)
ITEM_SPARSE = ("item_id", "category", "brand")
ITEM_DENSE = ("price",)

DATASET_FORMAT = "permrank-dataset"
DATASET_VERSION = 1


@dataclass(frozen=True)
class UserProfile:
    user_id: int
    gender: int
    age: float


@dataclass(frozen=True)
class ItemProfile:
    item_id: int
    category: int
    brand: int
    price: float


@dataclass(frozen=True)
class InteractionRecord:
    """One logged session.

    ``C`` is the input ranking list, ``V`` the exhibited list. Labels are
    aligned with ``V``. ``exposure_mask`` is a prefix of ones.
    """
    user: UserProfile
    C: Tuple[ItemProfile, ...]
    V: Tuple[ItemProfile, ...]
    y_ctr: Tuple[int, ...]
    y_next: Tuple[int, ...]
    exposure_mask: Tuple[int, ...]

    def __post_init__(self):
        for name in ("C", "V", "y_ctr", "y_next", "exposure_mask"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        validate_record(self)

    @property
    def n(self) -> int:
        return len(self.V)

    @property
    def m(self) -> int:
        return len(self.C)

    def v_indices(self) -> List[int]:
        pos = {it.item_id: k for k, it in enumerate(self.C)}
        return [pos[it.item_id] for it in self.V]


def validate_record(rec: InteractionRecord) -> None:
    n = len(rec.V)
    if n > len(rec.C):
        raise DomainError("exhibited list longer than input list")
    if not (len(rec.y_ctr) == len(rec.y_next) == len(rec.exposure_mask) == n):
        raise ShapeError("label vectors must match the exhibited list length")
    c_ids = {it.item_id for it in rec.C}
    if len(c_ids) != len(rec.C):
        raise DomainError("duplicate item in input list")
    if len({it.item_id for it in rec.V}) != n or any(it.item_id not in c_ids for it in rec.V):
        raise DomainError("exhibited list must be a duplicate-free subset of the input list")
    for vec in (rec.y_ctr, rec.y_next, rec.exposure_mask):
        if any(b not in (0, 1) for b in vec):
            raise DomainError("labels and mask must be bits")
    mask = rec.exposure_mask
    if n:
        exposed = sum(mask)
        if exposed == 0 or any(mask[t] != 1 for t in range(exposed)):
            raise DomainError("exposure mask must be a nonempty prefix of ones")
        for t in range(exposed, n):
            if rec.y_ctr[t] or rec.y_next[t]:
                raise DomainError(f"labels at unexposed position {t} must be 0")
        for t in range(exposed - 1):
            if rec.y_next[t] != 1:
                raise DomainError(f"y_next at position {t} must be 1: position {t + 1} was exposed")
        if exposed < n and rec.y_next[exposed - 1] != 0:
            raise DomainError("y_next at the stopping position must be 0")
    if rec.user.age < 0 or not np.isfinite(rec.user.age):
        raise DomainError("age must be finite and non-negative")
    for it in rec.C:
        if not (it.price > 0 and np.isfinite(it.price)):
            raise DomainError("price must be positive")


# ---------------------------------------------------------------------------
# Schema and encoding
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Schema:
    """Vocabulary sizes, embedding dim and dense-feature normalization."""
    n_users: int
    n_genders: int
    n_items: int
    n_categories: int
    n_brands: int
    dim: int = 8
    age_mean: float = 0.0
    age_std: float = 1.0
    price_mean: float = 0.0
    price_std: float = 1.0

    def vocab(self, fld: str) -> int:
        return {"user_id": self.n_users, "gender": self.n_genders, "item_id": self.n_items,
                "category": self.n_categories, "brand": self.n_brands}[fld]

    @property
    def user_dim(self) -> int:
        return len(USER_SPARSE) * self.dim + len(USER_DENSE)

    @property
    def item_dim(self) -> int:
        return len(ITEM_SPARSE) * self.dim + len(ITEM_DENSE)

    def with_stats(self, records: Sequence[InteractionRecord]) -> "Schema":
        """Copy with z-score statistics fitted on ``records``."""
        stats = fit_stats(records)
        return Schema(**{**asdict(self), **stats})

    def to_dict(self) -> dict:
        return asdict(self)


def fit_stats(records: Sequence[InteractionRecord]) -> Dict[str, float]:
    ages = np.array([r.user.age for r in records], dtype=np.float64)
    prices = np.array([it.price for r in records for it in r.C], dtype=np.float64)

    def ms(a):
        if a.size == 0:
            return 0.0, 1.0
        sd = float(a.std())
        return float(a.mean()), (sd if sd > 0 else 1.0)

    am, asd = ms(ages)
    pm, psd = ms(prices)
    return {"age_mean": am, "age_std": asd, "price_mean": pm, "price_std": psd}


def init_embeddings(schema: Schema, rng: np.random.Generator,
                    scale: float = INIT_SCALE) -> Params:
    """One ``(vocab + 1, dim)`` table per sparse field; last row is OOV."""
    return {f"emb.{f}": rng.uniform(-scale, scale, size=(schema.vocab(f) + 1, schema.dim))
            for f in USER_SPARSE + ITEM_SPARSE}


def _rows(ids: np.ndarray, vocab: int) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64)
    return np.where((ids >= 0) & (ids < vocab), ids, vocab)


def user_arrays(users: Sequence[UserProfile]) -> Tuple[np.ndarray, np.ndarray]:
    ids = np.array([[u.user_id, u.gender] for u in users], dtype=np.int64).reshape(-1, 2)
    dense = np.array([[u.age] for u in users], dtype=np.float64).reshape(-1, 1)
    return ids, dense


def item_arrays(items: Sequence[ItemProfile]) -> Tuple[np.ndarray, np.ndarray]:
    ids = np.array([[i.item_id, i.category, i.brand] for i in items], dtype=np.int64).reshape(-1, 3)
    dense = np.array([[i.price] for i in items], dtype=np.float64).reshape(-1, 1)
    return ids, dense


def encode_fields(ids: np.ndarray, dense: np.ndarray, tables: Params, schema: Schema,
                  kind: str) -> np.ndarray:
    """Vectorized encoder: ``ids (..., n_sparse)``, ``dense (..., n_dense)``."""
    sparse_fields = USER_SPARSE if kind == "user" else ITEM_SPARSE
    if kind == "user":
        mean, std = schema.age_mean, schema.age_std
    else:
        mean, std = schema.price_mean, schema.price_std
    parts = [tables[f"emb.{f}"][_rows(ids[..., k], schema.vocab(f))]
             for k, f in enumerate(sparse_fields)]
    parts.append((np.asarray(dense, dtype=np.float64) - mean) / std)
    return np.concatenate(parts, axis=-1)


def embedding_grads(ids: np.ndarray, grad_vec: np.ndarray, tables: Params, schema: Schema,
                    kind: str) -> Params:
    """Scatter-add the gradient of encoded vectors back into the tables."""
    sparse_fields = USER_SPARSE if kind == "user" else ITEM_SPARSE
    d = schema.dim
    flat_ids = ids.reshape(-1, len(sparse_fields))
    flat_g = grad_vec.reshape(-1, grad_vec.shape[-1])
    grads = {}
    for k, f in enumerate(sparse_fields):
        key = f"emb.{f}"
        g = np.zeros_like(tables[key])
        np.add.at(g, _rows(flat_ids[:, k], schema.vocab(f)), flat_g[:, k * d:(k + 1) * d])
        grads[key] = g
    return grads


def encode_user(profile: UserProfile, tables: Params, schema: Schema) -> np.ndarray:
    ids, dense = user_arrays([profile])
    return encode_fields(ids, dense, tables, schema, "user")[0]


def encode_item(profile: ItemProfile, tables: Params, schema: Schema) -> np.ndarray:
    ids, dense = item_arrays([profile])
    return encode_fields(ids, dense, tables, schema, "item")[0]


@dataclass
class RecordArrays:
    """Column view of equal-length records, ready for batched training."""
    user_ids: np.ndarray  # (N, 2)
    user_dense: np.ndarray  # (N, 1)
    item_ids: np.ndarray  # (N, n, 3)
    item_dense: np.ndarray  # (N, n, 1)
    y_ctr: np.ndarray  # (N, n)
    y_next: np.ndarray  # (N, n)
    mask: np.ndarray  # (N, n)

    def __len__(self):
        return self.user_ids.shape[0]

    def take(self, idx) -> "RecordArrays":
        return RecordArrays(*(getattr(self, f)[idx] for f in self.__dataclass_fields__))


def record_arrays(records: Sequence[InteractionRecord]) -> RecordArrays:
    if not records:
        raise ShapeError("no records")
    n = records[0].n
    if any(r.n != n for r in records):
        raise ShapeError("records have different exhibited-list lengths")
    uid, ud = user_arrays([r.user for r in records])
    iid, idn = item_arrays([it for r in records for it in r.V])
    N = len(records)
    return RecordArrays(uid, ud, iid.reshape(N, n, 3), idn.reshape(N, n, 1),
                        np.array([r.y_ctr for r in records], dtype=np.float64).reshape(N, n),
                        np.array([r.y_next for r in records], dtype=np.float64).reshape(N, n),
                        np.array([r.exposure_mask for r in records], dtype=np.float64).reshape(N, n))


def split_records(records: Sequence[InteractionRecord], seed: int = 0,
                  test_frac: float = 0.1, val_frac: float = 0.1):
    """Deterministic ``(train, validation, test)`` split.

    ``test_frac`` of all records is held out; ``val_frac`` of the remainder
    becomes validation.
    """
    N = len(records)
    order = np.random.default_rng(seed).permutation(N)
    n_test = int(round(N * test_frac))
    rest = order[n_test:]
    n_val = int(round(len(rest) * val_frac))
    pick = lambda idx: [records[i] for i in sorted(idx)]
    return pick(rest[n_val:]), pick(rest[:n_val]), pick(order[:n_test])


# ---------------------------------------------------------------------------
# Dataset file I/O
# ---------------------------------------------------------------------------


def _record_to_row(r: InteractionRecord) -> list:
    return [[r.user.user_id, r.user.gender, r.user.age],
            [[i.item_id, i.category, i.brand, i.price] for i in r.C],
            r.v_indices(), list(r.y_ctr), list(r.y_next), list(r.exposure_mask)]


def _row_to_record(row) -> InteractionRecord:
    if not isinstance(row, list) or len(row) != 6:
        raise ValueError("expected a 6-field record")
    u, c, v, yc, yn, mask = row
    user = UserProfile(int(u[0]), int(u[1]), float(u[2]))
    C = tuple(ItemProfile(int(a), int(b), int(cc), float(p)) for a, b, cc, p in c)
    V = tuple(C[k] for k in v)
    return InteractionRecord(user, C, V, tuple(yc), tuple(yn), tuple(mask))


def save_dataset(records: Sequence[InteractionRecord], path, schema: Optional[Schema] = None) -> None:
    """Write records with a versioned header; output is a pure function of input."""
    vocab = {}
    if schema is not None:
        vocab = {f: schema.vocab(f) for f in USER_SPARSE + ITEM_SPARSE}
    header = {"format": DATASET_FORMAT, "version": DATASET_VERSION, "count": len(records),
              "vocab": vocab, "stats": fit_stats(records)}
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for r in records:
            fh.write(json.dumps(_record_to_row(r), separators=(",", ":")) + "\n")


def read_dataset_header(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return _parse_header(fh.readline())


def _parse_header(line: str) -> dict:
    try:
        header = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(f"bad header: {exc.msg}", line=1) from None
    if not isinstance(header, dict) or header.get("format") != DATASET_FORMAT:
        raise FormatError("not a permrank dataset file")
    if header.get("version") != DATASET_VERSION:
        raise FormatError(f"unsupported dataset version {header.get('version')!r}")
    return header


def load_dataset(path) -> List[InteractionRecord]:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ParseError("missing header", line=1)
    header = _parse_header(lines[0])
    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            records.append(_row_to_record(json.loads(line)))
        except (json.JSONDecodeError, ValueError, TypeError, IndexError, KeyError) as exc:
            raise ParseError(f"malformed record: {exc}", line=lineno) from None
    if len(records) != header["count"]:
        raise ParseError(f"expected {header['count']} records, found {len(records)}",
                         line=len(lines) + 1)
    return records
