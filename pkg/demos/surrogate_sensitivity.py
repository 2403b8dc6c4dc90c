"""Train a sparse aPCE surrogate of the generalized-interface channel model
and read its Sobol indices.

    python demos/surrogate_sensitivity.py
"""

import numpy as np

from ffpmbench.bsapce import build_surrogate
from ffpmbench.models import ChannelModel, Scenario
from ffpmbench.sobol import sensitivity_report

scenario = Scenario(n1_bl=-0.1, m1_bl=-0.005)
model = ChannelModel(scenario, "generalized")
print("parameters:", ", ".join(model.space.names))

# 300 training runs, 150 held-out runs drawn with a different seed
sur, val = build_surrogate(model.space, model, n_train=300, n_test=150, degree=5, seed=1,
                           output_names=model.output_names)
print(f"largest relative L2 test error over {sur.n_outputs} SRQs: {np.max(val.rel_l2):.2e}")

rep = sensitivity_report(sur)
print("\ntotal Sobol indices")
print(f"{'SRQ':>5}  " + "  ".join(f"{n:>8}" for n in rep.parameter_names))
for name, totals in zip(rep.output_names, rep.totals):
    print(f"{name:>5}  " + "  ".join(f"{t:8.3f}" for t in totals))
