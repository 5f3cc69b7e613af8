"""Generate merging episodes, cluster them into two driving styles, and
see how early a logistic model can tell the styles apart.

Run with ``python demos/01_styles_from_trajectories.py``.  Takes a few seconds.
"""

import numpy as np

from merge_planner import AGGRESSIVE, NORMAL
from merge_planner.clustering import cluster_styles, extract_style_features, purity
from merge_planner.style import accuracy_sweep
from merge_planner.synthetic import generate_dataset

episodes = generate_dataset(120, aggressive_fraction=0.5, seed=3)
truth = np.array([ep.style for ep in episodes])
print(f"{len(episodes)} episodes, {np.sum(truth == AGGRESSIVE)} aggressive")

# Lane-change duration is the clearest single cue.
lcd = np.array([extract_style_features(ep).lcd for ep in episodes])
for style, name in [(NORMAL, "normal"), (AGGRESSIVE, "aggressive")]:
    print(f"  mean lane-change duration, {name:10s}: {lcd[truth == style].mean():.2f} s")

model, styles = cluster_styles(episodes, seed=0)
styles = np.array(styles)
print(f"k-means objective {model.objective:.3f}, purity against generator labels "
      f"{purity(styles, truth):.3f}")

# How many steps of lateral deviation rate does the classifier need?
rows = accuracy_sweep(episodes, styles, max_steps=6, iters=2000)
for r in rows:
    print(f"  i = {r.i_steps} ({r.seconds:.3f} s): accuracy {r.accuracy:.3f}")
