"""Beam search on a hand-made eight-item list.

Shows the reward walk for one ordering, the best lists at several beam
widths, how the PV weight ``alpha`` moves the top list, and a check against
brute-force enumeration.

    python demos/beam_search_basics.py
"""

import math

from permrank import (ItemProfile, ScoredCandidate, calc_estimated_reward,
                      exhaustive_oracle, fpsa)
from permrank.evaluation import rsum_reward

# (click prob, continue prob) per candidate
SCORES = [(0.43, 0.62), (0.44, 0.82), (0.39, 0.46), (0.04, 0.85),
          (0.04, 0.85), (0.18, 0.26), (0.44, 0.96), (0.48, 0.47)]
scored = [ScoredCandidate(ItemProfile(i, 0, 0, 10.0), c, x) for i, (c, x) in enumerate(SCORES)]
N = 4

print("one ordering, step by step")
order = (7, 0, 2, 5)
for t in range(1, N + 1):
    pv, ipv, total = calc_estimated_reward(order[:t], scored, alpha=7.0, beta=1.0)
    print(f"  prefix {order[:t]!s:<14} PV {pv:.4f}  IPV {ipv:.4f}  sum {total:.4f}")

print("\nbeam width vs best reward (alpha=7, beta=1); k=1 is plain greedy")
for k in (1, 3, 10, 50, math.perm(len(scored), N)):
    top = fpsa(scored, N, k, 7.0, 1.0).top()
    print(f"  k={k:<5} top {top.items}  r_sum {top.r_sum:.4f}")

print("\nPV weight shifts the list toward items that keep users browsing")
for alpha in (0.0, 1.0, 7.0, 30.0):
    top = fpsa(scored, N, 50, alpha, 1.0).top()
    print(f"  alpha={alpha:<5} top {top.items}  PV {top.r_pv:.3f}  IPV {top.r_ipv:.3f}")

best = exhaustive_oracle(len(scored), N, rsum_reward(scored, 7.0, 1.0)).best
beam = fpsa(scored, N, math.perm(len(scored), N), 7.0, 1.0).top().items
print(f"\nexhaustive best {best}, full-width beam {beam}: {'match' if best == beam else 'MISMATCH'}")
