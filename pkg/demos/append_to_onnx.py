# %% [markdown]
# # Append a property circuit to an ONNX model
#
# Same flow as `robustify compile`, done in Python.

# %%
import tempfile
from pathlib import Path

import numpy as np

from robustify.evaluator import forward
from robustify.gadget import eval_circuit
from robustify.onnx_model import random_mlp, save_model_file
from robustify.pipeline import RobustnessSpec, append_property, compile_property

rng = np.random.default_rng(0)
model = random_mlp([784, 64, 10], rng, batch="N")
x0 = rng.uniform(0, 1, 784)
spec = RobustnessSpec.from_dict({"kind": "relaxed", "tau": 80, "seed_input": x0.tolist(),
                                 "epsilon": 0.03, "clip": [0, 1]})
prop = compile_property(spec, model)
print(prop.metadata()["formula"], prop.circuit.relu_neurons)

# %%
appended = append_property(model, prop)
xs = rng.uniform(np.clip(x0 - 0.03, 0, 1), np.clip(x0 + 0.03, 0, 1), size=(1000, 784))
diff = forward(appended, xs)[:, 0] - eval_circuit(prop.circuit, forward(model, xs))
print("max abs diff", np.abs(diff).max())

# %%
out = Path(tempfile.mkdtemp())
save_model_file(appended, out / "model.onnx")
(out / "property.vnnlib").write_text(prop.vnnlib_text())
print(*(prop.vnnlib_text().splitlines()[-3:]), sep="\n")
