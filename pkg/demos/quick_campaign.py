"""A scaled-down validation campaign run through the library API.

The shipped default campaign (``ffpm run-all``) takes several minutes;
this one trades accuracy for speed: a coarse reference grid, small
surrogate training sets and short chains.

    python demos/quick_campaign.py [output-dir]
"""

import json
import sys
import tempfile
import warnings

from ffpmbench.campaign import Campaign
from ffpmbench.config import CampaignConfig

raw = {
    "seed": 11,
    "scenario": {"units": "mm", "n1_bl": -0.1, "m1_bl": -0.005},
    "reference": {"cells_per_inclusion": 4, "solver": "direct"},
    "surrogate": {"degree": 3, "n_train": 80, "n_test": 40},
    "mcmc": {"walkers": 20, "max_steps": 3000, "check_every": 500},
    "comparison": {"n_bme": 20_000, "replicates": 50},
    "models": [{"id": "classical", "kind": "channel-classical"},
               {"id": "generalized", "kind": "channel-generalized"},
               {"id": "pnm-volume", "kind": "pore-network"},
               {"id": "pnm-surface", "kind": "pore-network", "mode": "surface"}],
}

out = sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="ffpm-demo-")
camp = Campaign(CampaignConfig.from_mapping(raw), out)
with warnings.catch_warnings():
    warnings.simplefilter("ignore")     # short chains stop at the step cap
    camp.run("run-all")
for name in camp.ran:
    print(f"{name:<28} {camp.timings[name]:6.1f} s")

rep = json.loads((camp.root / "reports" / "comparison.json").read_text())
print(f"\nartifacts in {camp.root}")
print(f"{'model':<12} {'log BME':>10} {'weight':>8} {'median':>8}")
for name, z, w, m in zip(rep["names"], rep["log_bme"], rep["weights"], rep["median_weights"]):
    print(f"{name:<12} {z:10.2f} {w:8.3f} {m:8.3f}")
