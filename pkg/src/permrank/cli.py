"""``permrank`` command line.

Exit codes: 0 success, 1 failed check or unexpected domain error, 2 usage,
3 config, 4 training, 5 resource guard.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
import time
from typing import Callable, Dict, List, Optional

import numpy as np

from .datamodel import ItemProfile, UserProfile, save_dataset
from .errors import (ConfigError, FormatError, PermrankError,
                     ResourceGuardError, TrainingError)
from .evaluation import alpha_sweep, exhaustive_oracle, rsum_reward
from .pipeline import (Config, catalog_for, eval_sessions, evaluate,
                       load_models, load_splits, pipeline_rerank, write_json)
from .pmatch import (ScoredCandidate, fpsa, save_candidate_sets,
                     score_candidates, train_pointwise)
from .prank import DpwnModel, select_best, train_dpwn
from .simulator import gen_catalog, gen_logs

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_CONFIG, EXIT_TRAINING, EXIT_GUARD = 0, 1, 2, 3, 4, 5

# flag dest -> (section, key)
FLAG_KEYS = {"n": ("search", "n"), "beam_k": ("search", "beam_k"),
             "alpha": ("search", "alpha"), "beta": ("search", "beta"),
             "seed": ("run", "seed"), "workdir": ("paths", "workdir")}


def _digest(path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()[:12]


def cmd_gen_data(cfg: Config) -> str:
    cat = catalog_for(cfg)
    recs = gen_logs(cat, cfg.int("logging", "sessions"), m=cfg.int("logging", "m"),
                    n=cfg.int("logging", "n"), policy=cfg.str("logging", "policy"),
                    epsilon=cfg.float("logging", "epsilon"), seed=cfg.seed)
    out = cfg.path("data")
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(recs, out, cat.schema())
    return f"wrote {len(recs)} sessions to {out} (sha256 {_digest(out)})"


def _train_pointwise(target: str):
    def run(cfg: Config) -> str:
        train, val, _, schema = load_splits(cfg)
        model = train_pointwise(train, target, cfg.train_config("train"), cfg.seed, val, schema)
        out = cfg.path(target)
        out.parent.mkdir(parents=True, exist_ok=True)
        model.save(out)
        h = model.history
        return (f"{target.upper()} model: {h.epochs_run} epochs, best val loss "
                f"{h.best_val_loss:.5f}, saved {out} (sha256 {_digest(out)})")
    return run


def cmd_train_dpwn(cfg: Config) -> str:
    train, val, _, schema = load_splits(cfg)
    model = train_dpwn(train, cfg.train_config("dpwn"), cfg.seed, val, schema)
    out = cfg.path("dpwn")
    out.parent.mkdir(parents=True, exist_ok=True)
    model.save(out)
    h = model.history
    return (f"DPWN model: {h.epochs_run} epochs, best val loss {h.best_val_loss:.5f}, "
            f"saved {out} (sha256 {_digest(out)})")


def cmd_rerank(cfg: Config) -> str:
    results, sets = pipeline_rerank(cfg)
    out, cand = cfg.path("rerank"), cfg.path("candidates")
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        for r in results:
            fh.write(json.dumps(r.to_json(), sort_keys=True) + "\n")
    save_candidate_sets(cand, sets)
    mean_lr = float(np.mean([r.lr for r in results])) if results else float("nan")
    return f"re-ranked {len(results)} sessions, mean LR {mean_lr:.4f}, wrote {out} and {cand}"


def cmd_evaluate(cfg: Config) -> str:
    report = evaluate(cfg)
    write_json(cfg.path("report"), report)
    return (f"AUC ctr {report['val_auc_ctr']:.4f} dpwn {report['val_auc_dpwn']:.4f} | "
            f"Pearson LR {report['pearson_lr']:.4f} SR {report['pearson_sr']:.4f} | "
            f"E_IPV PRS {report['true_eipv_prs']:.4f} greedy {report['true_eipv_greedy']:.4f} "
            f"RI {100 * report['ri_eipv']:+.2f}% | wrote {cfg.path('report')}")


def cmd_sweep_alpha(cfg: Config) -> str:
    ctr, nxt, dpwn = load_models(cfg)
    sessions = [(r.user, r.C, score_candidates(ctr, nxt, r.user, r.C))
                for r in eval_sessions(cfg, load_splits(cfg)[2])]
    sp = cfg.search()
    rows = alpha_sweep(sessions, cfg.floats("run", "alphas"), sp.beta, sp.n, sp.k, dpwn)
    out = cfg.path("sweep")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("alpha\tmean_lr\n" + "".join(f"{a!r}\t{v!r}\n" for a, v in rows))
    best = max(rows, key=lambda t: t[1])
    return f"swept {len(rows)} alphas over {len(sessions)} sessions, best alpha {best[0]:g} (LR {best[1]:.4f}), wrote {out}"


def _random_scored(rng, m) -> List[ScoredCandidate]:
    return [ScoredCandidate(ItemProfile(i, 0, 0, 1.0), float(c), float(x))
            for i, (c, x) in enumerate(zip(rng.uniform(0.01, 0.99, m), rng.uniform(0.01, 0.99, m)))]


def cmd_bench(cfg: Config) -> str:
    """Time FPSA and PRank on synthetic inputs; prints timings, writes nothing."""
    m, n, k = cfg.int("bench", "m"), cfg.int("bench", "n"), cfg.int("bench", "k")
    calls = max(1, cfg.int("bench", "calls"))
    sp = cfg.search()
    rng = np.random.default_rng(cfg.seed)
    inputs = [_random_scored(rng, m) for _ in range(calls)]
    fpsa(inputs[0], n, k, sp.alpha, sp.beta)  # warm-up
    times, sets = [], []
    for s in inputs:
        t0 = time.perf_counter()
        sets.append(fpsa(s, n, k, sp.alpha, sp.beta))
        times.append(time.perf_counter() - t0)
    try:
        dpwn = DpwnModel.load(cfg.path("dpwn"))
        which = "trained"
    except (OSError, FormatError):
        dpwn = DpwnModel.init(gen_catalog(cfg.sim_spec()).schema(), cfg.train_config("dpwn"), cfg.seed)
        which = "untrained"
    user = UserProfile(0, 0, 30.0)
    ptimes = []
    for s, cs in zip(inputs, sets):
        C = [c.item for c in s]
        t0 = time.perf_counter()
        select_best(cs, dpwn, user, C)
        ptimes.append(time.perf_counter() - t0)
    return (f"FPSA m={m} n={n} k={k}: median {1e3 * np.median(times):.2f} ms, "
            f"max {1e3 * max(times):.2f} ms over {calls} calls | PRank ({which} DPWN, "
            f"{len(sets[0])} lists): median {1e3 * np.median(ptimes):.2f} ms")


def cmd_oracle_check(cfg: Config) -> str:
    m, n = cfg.int("oracle", "m"), cfg.int("oracle", "n")
    count = cfg.int("oracle", "instances")
    sp = cfg.search()
    rng = np.random.default_rng(cfg.seed)
    width = math.perm(m, n)
    bad = 0
    for _ in range(count):
        s = _random_scored(rng, m)
        got = fpsa(s, n, width, sp.alpha, sp.beta).top().items
        if got != exhaustive_oracle(m, n, rsum_reward(s, sp.alpha, sp.beta)).best:
            bad += 1
    if bad:
        raise _CheckFailed(f"MISMATCH on {bad}/{count} instances (m={m}, n={n})")
    return f"MATCH on {count}/{count} instances (m={m}, n={n}, beam {width})"


class _CheckFailed(Exception):
    pass


COMMANDS: Dict[str, Callable[[Config], str]] = {
    "gen-data": cmd_gen_data,
    "train-ctr": _train_pointwise("ctr"),
    "train-next": _train_pointwise("next"),
    "train-dpwn": cmd_train_dpwn,
    "rerank": cmd_rerank,
    "evaluate": cmd_evaluate,
    "sweep-alpha": cmd_sweep_alpha,
    "bench": cmd_bench,
    "oracle-check": cmd_oracle_check,
}

HELP = {
    "gen-data": "simulate logged sessions into the dataset file",
    "train-ctr": "train the point-wise click model",
    "train-next": "train the point-wise continue-browsing model",
    "train-dpwn": "train the Bi-LSTM list model",
    "rerank": "search, merge and select a final list per held-out session",
    "evaluate": "AUC, Pearson and true-reward uplift report",
    "sweep-alpha": "mean LR of the top searched list across alpha values",
    "bench": "time the beam search and the list selection",
    "oracle-check": "compare full-width beam search with exhaustive enumeration",
}


def _set_pair(text: str):
    key, sep, value = text.partition("=")
    section, dot, name = key.partition(".")
    if not sep or not dot:
        raise argparse.ArgumentTypeError("expected SECTION.KEY=VALUE")
    return (section.strip(), name.strip()), value.strip()


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config file (default: $PERMRANK_CONFIG)")
    common.add_argument("--workdir", help="base directory for relative paths")
    common.add_argument("--seed", type=int)
    common.add_argument("--n", type=int, help="length of the re-ranked list")
    common.add_argument("--beam-k", type=int, help="beam width")
    common.add_argument("--alpha", type=float, help="PV weight")
    common.add_argument("--beta", type=float, help="IPV weight")
    common.add_argument("--set", dest="sets", action="append", type=_set_pair, default=[],
                        metavar="SECTION.KEY=VALUE", help="override any config key")
    p = argparse.ArgumentParser(prog="permrank", description="Permutation-aware re-ranking pipeline.")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=HELP[name])
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    overrides = dict(args.sets)
    for dest, key in FLAG_KEYS.items():
        value = getattr(args, dest)
        if value is not None:
            overrides[key] = value
    stage = args.command
    try:
        cfg = Config.load(args.config, overrides)
        print(f"{stage}: {COMMANDS[stage](cfg)}")
        return EXIT_OK
    except (_CheckFailed, PermrankError) as exc:
        code = _exit_code(exc)
        print(f"permrank {stage}: error: {exc}", file=sys.stderr)
        return code


def _exit_code(exc: Exception) -> int:
    # unreadable input files count as configuration problems
    for kind, code in ((ConfigError, EXIT_CONFIG), (FormatError, EXIT_CONFIG),
                       (TrainingError, EXIT_TRAINING), (ResourceGuardError, EXIT_GUARD)):
        if isinstance(exc, kind):
            return code
    return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
