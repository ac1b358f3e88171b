# %% [markdown]
# # Formula to ReLU circuit
#
# Compile a small DNF over three outputs and look at what comes out.

# %%
import numpy as np

from robustify.formula import And, Or, atom, classify, eval_formula, substitute_margin
from robustify.gadget import compile_formula, compile_gadget, eval_circuit

# (y0 + y1 <= 0 and y1 <= 0) or (y0 - y2 <= 0 and y2 <= 2)
f = Or([And([atom({0: 1, 1: 1}), atom({1: 1})]),
        And([atom({0: 1, 2: -1}), atom({2: 1}, -2.0)])])
print(f, classify(f).shape)

# %%
c = compile_gadget(f, eta=0.2, m=3)
print("atom biases", c.trace.atom_biases)
print("stage b", c.trace.stage_b)
print("neurons per stage", c.relu_neurons)
print("query: Y", c.query.assert_rel, c.query.threshold)

# %%
for y in ([-1.0, -1.0, 0.0], [1.0, 1.0, 3.0]):
    print(y, eval_formula(f, y), eval_circuit(c, y))

# %% [markdown]
# Points where the formula is false can still land on the asserted side, but
# only if every atom is off by at most 2*eta.

# %%
rng = np.random.default_rng(0)
pts = rng.uniform(-3, 3, size=(200_000, 3))
side = c.query.asserted(eval_circuit(c, pts))
truth = eval_formula(f, pts)
slack = side & ~truth
print("slack points:", slack.sum())
print("all inside Q[2eta]:", eval_formula(substitute_margin(f, 0.4), pts[slack]).all())

# %% [markdown]
# A single disjunction of strict atoms skips the gadget and is exact.

# %%
g = Or([atom({0: 1, 1: -1}, 0.0, "<"), atom({0: 1, 2: -1}, 0.0, "<")])
fast = compile_formula(g, 3)
print(fast.mode, fast.relu_neurons, fast.query)
