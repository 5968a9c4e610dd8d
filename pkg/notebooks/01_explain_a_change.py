"""
Explaining one prediction change
================================

Train a small recurrent classifier on Switch-Feature, find the step where its
prediction jumps the most, and ask which cells of the input caused the jump.

Run with ``python notebooks/01_explain_a_change.py``.
"""

# %%
import numpy as np

from deltaxai import WindowSpec, select_target_class, swing_attribute, zero_baseline_ig_change
from deltaxai.datagen import SwitchFeatureConfig, gen_switch_feature, make_splits, sliding_windows
from deltaxai.models import RecurrentClassifier, TrainConfig, train_sgd
from deltaxai.paths import IntegratorConfig, decompose_change, zero_baseline_ig_pair

np.set_printoptions(precision=4, suppress=True)

# %% [markdown]
# Data and model. Windows of 20 steps keep the demo quick.

# %%
W = 20
series, states = gen_switch_feature(SwitchFeatureConfig(num_series=120, seed=0), return_states=True)
train, _, test = make_splits(series, seed=0)
X, y = sliding_windows([series[i] for i in train], W)
model, trace = train_sgd(RecurrentClassifier.init(W, 3, 12, 2, seed=0), (X, y), TrainConfig(epochs=10, seed=0))
print("training loss per epoch:", np.round(trace, 4))

# %% [markdown]
# The biggest one-step jump in P(class 1) on a held-out series.

# %%
spec = WindowSpec(W)
s = series[test[0]]
z = states[test[0]]
p1 = model.predict_batch(np.stack([s.values[t - W + 1:t + 1] for t in range(W, s.length)]))[:, 1]
T2 = W + 1 + int(np.argmax(np.abs(np.diff(p1))))
target = select_target_class(model, s, spec, T2 - 1, T2)
print(f"t1={target.t1} t2={target.t2} class={target.target_class} delta={target.delta:+.4f}")
print("hidden state around the jump:", z[T2 - 5:T2 + 1])

# %% [markdown]
# SWING routes its integration paths through the windows the model actually
# saw, starting one step back. The map covers times t1-W+1 .. t2 and sums to
# the change.

# %%
phi = swing_attribute(model, s, spec, target, IntegratorConfig(100))
print("sum of attributions:", phi.values.sum(), " delta:", target.delta)
rows = phi.values
top = np.argsort(-np.abs(rows).ravel())[:5]
for flat in top:
    r, d = divmod(int(flat), rows.shape[1])
    print(f"  time {phi.start_time + r:3d}  feature x{d}  {rows[r, d]:+.5f}")

# %% [markdown]
# For comparison, zero-baseline IG at each time, subtracted. It too sums to
# the change (up to quadrature error) and splits into three parts: cells new
# to the later window, cells shared by both, and cells that dropped out.

# %%
ig = zero_baseline_ig_change(model, s, spec, target, IntegratorConfig(100))
print("zero-baseline IG sum:", ig.values.sum())
phi1, phi2 = zero_baseline_ig_pair(model, s, spec, target, IntegratorConfig(100))
parts = decompose_change(phi1, phi2, target.t1, target.t2, W)
print({k: round(v, 5) for k, v in parts.items()})
print("share of |attribution| on the newest step:",
      f"SWING {np.abs(phi.values[-1]).sum() / np.abs(phi.values).sum():.2f}",
      f"IG {np.abs(ig.values[-1]).sum() / np.abs(ig.values).sum():.2f}")
