"""Run configuration and the end-to-end re-ranking pipeline.

A run is described by an INI file with one section per concern. Every key
has a built-in default, so an empty file (or none at all) is a valid
configuration. Relative paths resolve against ``paths.workdir``.
"""

from __future__ import annotations

import configparser
import json
import os
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .datamodel import (InteractionRecord, ItemProfile, Schema, UserProfile,
                        load_dataset, read_dataset_header, record_arrays,
                        split_records)
from .errors import ConfigError, FormatError, MetricError
from .evaluation import auc, list_metric_pearson, relative_improvement
from .pmatch import (BeamEntry, PointwiseModel, fpsa, greedy_ctr_list,
                     merge_candidates, pointwise_examples, score_candidates)
from .prank import DpwnModel, lr_metric, select_best, sr_metric
from .simulator import Catalog, SimSpec, gen_catalog, true_expected_reward
from .training import TrainConfig

CONFIG_ENV = "PERMRANK_CONFIG"


def _stringify(d: Mapping) -> Dict[str, str]:
    out = {}
    for k, v in d.items():
        if isinstance(v, (tuple, list)):
            v = ",".join(str(x) for x in v)
        out[k] = str(v).lower() if isinstance(v, bool) else str(v)
    return out


DEFAULTS: Dict[str, Dict[str, str]] = {
    "paths": {"workdir": ".", "data": "data.jsonl", "ctr": "ctr.ckpt",
              "next": "next.ckpt", "dpwn": "dpwn.ckpt",
              "candidates": "candidates.jsonl", "rerank": "rerank.jsonl",
              "report": "report.json", "sweep": "sweep.tsv"},
    "simulator": _stringify(SimSpec().to_dict()),
    "logging": {"sessions": "10000", "m": "20", "n": "4",
                "policy": "noisy_greedy", "epsilon": "0.2"},
    "train": _stringify(TrainConfig().to_dict()),
    "dpwn": _stringify(TrainConfig(batch_size=64, patience=6).to_dict()),
    "search": {"n": "4", "beam_k": "50", "alpha": "7.0", "beta": "1.0",
               "external": "true"},
    "run": {"seed": "0", "eval_sessions": "500",
            "alphas": "0,0.5,1,2,4,7,10,15"},
    "bench": {"m": "100", "n": "10", "k": "50", "calls": "20"},
    "oracle": {"m": "6", "n": "3", "instances": "20"},
}


class Config:
    """Typed view over the INI document."""

    def __init__(self, parser: configparser.ConfigParser, source: Optional[str] = None):
        self.parser = parser
        self.source = source

    @classmethod
    def load(cls, path=None, overrides: Optional[Mapping[Tuple[str, str], object]] = None) -> "Config":
        """Defaults, then ``path`` (or ``$PERMRANK_CONFIG``), then ``overrides``."""
        cp = configparser.ConfigParser(interpolation=None)
        cp.read_dict(DEFAULTS)
        path = path or os.environ.get(CONFIG_ENV) or None
        if path is not None:
            user = configparser.ConfigParser(interpolation=None)
            try:
                with open(path, encoding="utf-8") as fh:
                    user.read_file(fh)
            except OSError as exc:
                raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
            except configparser.Error as exc:
                raise ConfigError(f"malformed config {path}: {exc}") from None
            for section in user.sections():
                for key, value in user.items(section, raw=True):
                    cls._set(cp, section, key, value)
        for (section, key), value in (overrides or {}).items():
            cls._set(cp, section, key, value)
        cfg = cls(cp, str(path) if path else None)
        cfg.validate()
        return cfg

    @staticmethod
    def _set(cp, section, key, value):
        if section not in DEFAULTS:
            raise ConfigError(f"unknown config section [{section}]")
        if key not in DEFAULTS[section]:
            raise ConfigError(f"unknown config key {section}.{key}")
        cp.set(section, key, str(value))

    def _get(self, conv, section, key):
        raw = self.parser.get(section, key)
        try:
            return conv(raw)
        except ValueError:
            raise ConfigError(f"{section}.{key}: cannot parse {raw!r}") from None

    def int(self, section, key) -> int:
        return self._get(int, section, key)

    def float(self, section, key) -> float:
        return self._get(float, section, key)

    def str(self, section, key) -> str:
        return self.parser.get(section, key)

    def bool(self, section, key) -> bool:
        try:
            return self.parser.getboolean(section, key)
        except ValueError:
            raise ConfigError(f"{section}.{key}: not a boolean") from None

    def floats(self, section, key) -> List[float]:
        return self._get(lambda s: [float(x) for x in s.split(",") if x.strip()], section, key)

    @property
    def seed(self) -> int:
        return self.int("run", "seed")

    def path(self, name: str) -> Path:
        p = Path(self.str("paths", name))
        return p if p.is_absolute() else Path(self.str("paths", "workdir")) / p

    def sim_spec(self) -> SimSpec:
        return SimSpec.from_dict(dict(self.parser.items("simulator")))

    def train_config(self, section: str = "train") -> TrainConfig:
        return TrainConfig.from_dict(dict(self.parser.items(section)))

    def search(self) -> "SearchParams":
        return SearchParams(self.int("search", "n"), self.int("search", "beam_k"),
                            self.float("search", "alpha"), self.float("search", "beta"),
                            self.bool("search", "external"))

    def validate(self) -> None:
        self.sim_spec()
        self.train_config("train")
        self.train_config("dpwn")
        s = self.search()
        if s.n < 1 or s.k < 1:
            raise ConfigError("search.n and search.beam_k must be >= 1")
        if s.alpha < 0 or s.beta < 0 or s.alpha == s.beta == 0:
            raise ConfigError("search.alpha and search.beta must be >= 0 and not both 0")
        if self.str("logging", "policy") not in ("noisy_greedy", "random"):
            raise ConfigError("logging.policy must be noisy_greedy or random")
        for section in ("logging", "bench", "oracle"):
            for key in ("m", "n"):
                self.int(section, key)
        self.floats("run", "alphas")
        self.int("run", "eval_sessions")
        self.seed

    def dump(self) -> str:
        """Canonical text form of the effective configuration."""
        lines = []
        for section in DEFAULTS:
            lines.append(f"[{section}]")
            lines.extend(f"{k} = {v}" for k, v in self.parser.items(section))
            lines.append("")
        return "\n".join(lines)


@dataclass(frozen=True)
class SearchParams:
    n: int
    k: int
    alpha: float
    beta: float
    external: bool = True


# ---------------------------------------------------------------------------
# Data and models
# ---------------------------------------------------------------------------


def catalog_for(cfg: Config) -> Catalog:
    return gen_catalog(cfg.sim_spec())


def load_splits(cfg: Config):
    """``(train, val, test, schema)`` from the configured dataset."""
    path = cfg.path("data")
    if not path.exists():
        raise ConfigError(f"dataset {path} not found; run gen-data first")
    records = load_dataset(path)
    if not records:
        raise ConfigError(f"dataset {path} is empty")
    vocab = read_dataset_header(path).get("vocab")
    schema = None
    if vocab:
        schema = Schema(vocab["user_id"], vocab["gender"], vocab["item_id"],
                        vocab["category"], vocab["brand"])
    train, val, test = split_records(records, seed=cfg.seed)
    return train, val, test, schema


def _load(loader, path: Path, what: str):
    if not path.exists():
        raise ConfigError(f"{what} checkpoint {path} not found")
    try:
        return loader(path)
    except FormatError as exc:
        raise ConfigError(f"{what} checkpoint {path}: {exc}") from None


def load_models(cfg: Config) -> Tuple[PointwiseModel, PointwiseModel, DpwnModel]:
    ctr = _load(PointwiseModel.load, cfg.path("ctr"), "CTR")
    nxt = _load(PointwiseModel.load, cfg.path("next"), "NEXT")
    dpwn = _load(DpwnModel.load, cfg.path("dpwn"), "DPWN")
    if (ctr.target, nxt.target) != ("ctr", "next"):
        raise ConfigError("CTR/NEXT checkpoints are swapped or mislabeled")
    return ctr, nxt, dpwn


# ---------------------------------------------------------------------------
# Re-ranking
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RerankResult:
    session: int
    user: UserProfile
    chosen: BeamEntry
    item_ids: Tuple[int, ...]
    lr: float
    n_candidates: int

    def to_json(self) -> dict:
        e = self.chosen
        return {"session": self.session, "user": self.user.user_id,
                "ranks": list(e.items), "item_ids": list(self.item_ids),
                "lr": self.lr, "r_pv": e.r_pv, "r_ipv": e.r_ipv, "r_sum": e.r_sum,
                "source": e.source, "candidates": self.n_candidates}


def rerank_one(user: UserProfile, C: Sequence[ItemProfile], ctr: PointwiseModel,
               nxt: PointwiseModel, dpwn: DpwnModel, sp: SearchParams, session: int = 0):
    """Score ``C``, search, merge the external list and pick by LR.

    Returns ``(result, candidate_set)``.
    """
    scored = score_candidates(ctr, nxt, user, C)
    sets = [fpsa(scored, sp.n, sp.k, sp.alpha, sp.beta)]
    if sp.external:
        sets.append(greedy_ctr_list(scored, sp.n, sp.alpha, sp.beta))
    cands = merge_candidates(sets, scored, sp.alpha, sp.beta)
    best, ranking = select_best(cands, dpwn, user, C)
    lr = dict((e.items, v) for e, v in ranking)[best.items]
    ids = tuple(C[i].item_id for i in best.items)
    return RerankResult(session, user, best, ids, float(lr), len(cands)), cands


def eval_sessions(cfg: Config, test: Sequence[InteractionRecord]) -> List[InteractionRecord]:
    return list(test[: cfg.int("run", "eval_sessions")])


def pipeline_rerank(cfg: Config, records: Optional[Sequence[InteractionRecord]] = None,
                    models=None) -> Tuple[List[RerankResult], list]:
    """Re-rank each session's input list ``C``.

    ``records`` defaults to the held-out split of the configured dataset.
    Returns the per-session results and ``(session, candidate_set, item_ids)``
    triples ready for :func:`permrank.pmatch.save_candidate_sets`.
    """
    ctr, nxt, dpwn = models or load_models(cfg)
    if records is None:
        records = eval_sessions(cfg, load_splits(cfg)[2])
    sp = cfg.search()
    results, sets = [], []
    for sid, r in enumerate(records):
        if sp.n > r.m:
            raise ConfigError(f"search.n={sp.n} exceeds the input list length {r.m}")
        res, cands = rerank_one(r.user, r.C, ctr, nxt, dpwn, sp, sid)
        results.append(res)
        sets.append((sid, cands, [it.item_id for it in r.C]))
    return results, sets


# ---------------------------------------------------------------------------
# Evaluation report
# ---------------------------------------------------------------------------


def model_aucs(ctr, nxt, dpwn, records) -> Dict[str, float]:
    out = {}
    for name, model in (("ctr", ctr), ("next", nxt)):
        ex = pointwise_examples(records, name)
        try:
            out[f"auc_{name}"] = auc(ex[-1], model.predict_arrays(*ex[:-1]))
        except MetricError:
            out[f"auc_{name}"] = float("nan")
    a = record_arrays(records)
    p, _ = dpwn.forward(a.user_ids, a.user_dense, a.item_ids, a.item_dense)
    keep = a.mask.reshape(-1) > 0
    out["auc_dpwn"] = auc(a.y_ctr.reshape(-1)[keep], p.reshape(-1)[keep])
    return out


def uplift(catalog: Catalog, results: Sequence[RerankResult], ctr, nxt, records, n: int):
    """Mean true ``E_IPV`` of the chosen lists against greedy-CTR lists."""
    chosen, greedy = [], []
    for res, r in zip(results, records):
        scored = score_candidates(ctr, nxt, r.user, r.C)
        g = greedy_ctr_list(scored, n).top()
        uid = r.user.user_id
        chosen.append(true_expected_reward(catalog, uid, list(res.item_ids))[1])
        greedy.append(true_expected_reward(catalog, uid, [r.C[i].item_id for i in g.items])[1])
    return float(np.mean(chosen)), float(np.mean(greedy))


def evaluate(cfg: Config) -> Dict[str, float]:
    ctr, nxt, dpwn = load_models(cfg)
    _, val, test, _ = load_splits(cfg)
    report = {f"val_{k}": v for k, v in model_aucs(ctr, nxt, dpwn, val).items()}
    report["pearson_lr"] = list_metric_pearson(lambda r: lr_metric(dpwn, r.user, r.V), val)
    report["pearson_sr"] = list_metric_pearson(lambda r: sr_metric(ctr, r.user, r.V), val)
    sessions = eval_sessions(cfg, test)
    results, _ = pipeline_rerank(cfg, sessions, (ctr, nxt, dpwn))
    prs, greedy = uplift(catalog_for(cfg), results, ctr, nxt, sessions, cfg.search().n)
    report.update({"sessions": len(sessions), "true_eipv_prs": prs,
                   "true_eipv_greedy": greedy,
                   "ri_eipv": relative_improvement(prs, greedy),
                   "mean_lr_prs": float(np.mean([r.lr for r in results]))})
    return report


def write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n", encoding="utf-8")
