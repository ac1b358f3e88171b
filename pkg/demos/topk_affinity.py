# %% [markdown]
# # Top-k and affinity encodings

# %%
import numpy as np

from robustify.formula import atoms, eval_formula
from robustify.topk import TopKContext, build_affinity_negation, build_topk_negation, topk_set

seed = np.array([0.1, 1.0, 0.3, 0.2, 2.5, 0.0, -0.5, 2.0, 0.4, 3.0])
ctx = TopKContext(seed, 3, [[0, 8], [4, 9], [1, 9, 7], [2], [3], [5], [6]])
for k in (1, 2, 3):
    f = build_topk_negation(ctx, k)
    print(k, sorted(topk_set(seed, k)), len(atoms(f)), "atoms")

# %%
fa = build_affinity_negation(ctx)
print(fa)

# %%
rng = np.random.default_rng(0)
ys = seed + rng.normal(0, 1, size=(5, 10))
for y in ys:
    print(np.argmax(y), bool(eval_formula(fa, y)))
