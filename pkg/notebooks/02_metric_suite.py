"""
Scoring attribution methods
===========================

Remove the most salient cells one at a time (CPD: the prediction should move
a lot) or the least salient ones (CPP: it should barely move), and correlate
attribution size with the realized effect of each removal (Corr).

Run with ``python notebooks/02_metric_suite.py``.
"""

# %%
import numpy as np

from deltaxai import WindowSpec
from deltaxai.baselines import make_attributor
from deltaxai.datagen import SwitchFeatureConfig, gen_switch_feature, make_splits, sliding_windows
from deltaxai.metrics import METRIC_NAMES, evaluate_suite
from deltaxai.models import RecurrentClassifier, TrainConfig, train_sgd

# %%
W, K = 20, 15
series = gen_switch_feature(SwitchFeatureConfig(num_series=120, seq_len=60, seed=1))
train, _, test = make_splits(series, seed=1)
X, y = sliding_windows([series[i] for i in train], W)
model, _ = train_sgd(RecurrentClassifier.init(W, 3, 12, 2, seed=1), (X, y),
                     TrainConfig(learning_rate=0.1, epochs=10, seed=1))
evaluation = [series[i] for i in test[:4]]
spec = WindowSpec(W)

# %% [markdown]
# Every consecutive (T-1, T) pair of each held-out series is one sample.
# Values other than Corr are shown x1000, as in the usual tables.

# %%
reports = {m: evaluate_suite(model, evaluation, spec, make_attributor(m, n_samples=30), K=K)
           for m in ("swing", "rbs", "ig-zero", "occlusion", "random")}
print(f"{len(reports['swing'].sample_ids)} samples, K={K}")
print(f"{'method':>10} " + " ".join(f"{m:>8}" for m in METRIC_NAMES))
for name, rep in reports.items():
    cells = [f"{rep.mean(m) * rep.scale_for(m):8.3f}" for m in METRIC_NAMES]
    print(f"{name:>10} " + " ".join(cells))

# %% [markdown]
# Forward-fill is the substitution used throughout. Replacing removed cells
# by zero or by the window average pushes inputs off the data manifold, and
# the removal curves change accordingly.

# %%
swing = make_attributor("swing", n_samples=30)
for sub in ("forward-fill", "zero", "average"):
    rep = evaluate_suite(model, evaluation[:2], spec, swing, K=K, substitution=sub)
    print(f"{sub:>13}: CPD {rep.mean('CPD') * 1e3:8.3f}  CPP {rep.mean('CPP') * 1e3:8.3f}  "
          f"Corr {np.round(rep.mean('Corr'), 3)}")
