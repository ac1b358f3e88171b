# %% [markdown]
# # Confidence thresholds as logit margins

# %%
import math

import numpy as np

from robustify import confidence as conf

for tau in (50, 60, 80, 90, 95, 99):
    d = conf.delta_relaxed(tau)
    print(f"tau={tau:>2}  delta={d:.6f}  floor(m=10)={conf.floor_pct(d, 10):.3f}")

# %%
print("strong tau2=30, m=10:", conf.delta_strong(30, 10))
print("smooth C=70, tau=10, m=10:", conf.deltas_smooth(70, 10, 10))

# %% [markdown]
# Empirical check: random logits whose top gap equals delta never fall under the floor.

# %%
rng = np.random.default_rng(1)
m, d = 10, math.log(4)
y = rng.normal(0, 2, size=(50_000, m))
srt = np.sort(y, axis=1)
y[np.arange(len(y)), np.argmax(y, axis=1)] = srt[:, -2] + d
c = conf.confidence(y).max(axis=1)
print(c.min(), ">=", conf.floor_pct(d, m))

# %%
f = conf.build_relaxed_negation(3, 0, conf.delta_relaxed(80))
print(f)
