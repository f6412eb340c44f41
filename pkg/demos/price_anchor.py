"""The list model picks up an ordering effect a point-wise model cannot see.

Logs are generated so that an item is clicked exactly when the item shown
before it was pricier. After training, the list model should prefer
``[expensive, cheap]`` over ``[cheap, expensive]`` for almost every pair.
Takes about half a minute.

    python demos/price_anchor.py
"""

import numpy as np

from permrank import SimSpec, TrainConfig, gen_catalog, lr_metric, split_records, train_dpwn
from permrank.simulator import gen_anchor_only_logs

cat = gen_catalog(SimSpec(n_users=20, n_items=40, seed=7))
train, val, _ = split_records(gen_anchor_only_logs(cat, 2000, m=10, n=4, seed=0), seed=0)
model = train_dpwn(train, TrainConfig(epochs=20, batch_size=64), 0, val, cat.schema())
print(f"trained {model.history.epochs_run} epochs, best val loss {model.history.best_val_loss:.4f}")

rng = np.random.default_rng(1)
user = cat.users[0]
wins = 0
for trial in range(50):
    a, b = (cat.items[i] for i in rng.choice(len(cat.items), 2, replace=False))
    cheap, dear = sorted((a, b), key=lambda it: it.price)
    hi, lo = lr_metric(model, user, [dear, cheap]), lr_metric(model, user, [cheap, dear])
    wins += hi > lo
    if trial < 5:
        print(f"  prices {dear.price:6.2f} -> {cheap.price:6.2f}: LR {hi:.3f}   reversed: LR {lo:.3f}")
print(f"expensive-first preferred in {wins}/50 pairs")
