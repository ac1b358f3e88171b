# %% [markdown]
# # Sampling validators

# %%
import numpy as np

from robustify.formula import classify
from robustify.validation import (
    random_formula, random_normal_form, slack_witness_search, soundness_sweep,
    validate_confidence_claims, validate_error_bound,
)

print(soundness_sweep(50, 500, [1e-4, 0.2], seed=0))

# %%
rng = np.random.default_rng(3)
f = random_normal_form(rng, 3, "dnf")
print(f)
print(validate_error_bound(f, 0.2, 5000, seed=0))

# %% [markdown]
# Witness search: random sampling first, then a mixed-integer program that
# either finds a slack point or shows none exists.

# %%
status, w = slack_witness_search(f, 0.2, m=3)
print(status, w)

# %%
print(validate_confidence_claims(10, 80, 20_000, seed=0, tau2=50, smooth=(70, 10)))
