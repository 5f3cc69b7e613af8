"""Follow one tight merge with the reactive planner and inspect its modes.

The ADS cruises in the target lane while an HDV merges just ahead of it.
Without prediction, it only brakes once the HDV has crossed the boundary.
"""

from collections import Counter

import numpy as np

from merge_planner import AGGRESSIVE, NORMAL
from merge_planner.planner import PlannerConfig, thresholds
from merge_planner.safety import NoPrediction, run_scenario
from merge_planner.synthetic import default_scenario

cfg = PlannerConfig()
thr = thresholds(cfg.v_c, cfg)
print(f"at {cfg.v_c} m/s: D_c = {thr.d_c:.2f} m, D_f = {thr.d_f:.3f} m, D_s = {thr.d_s:.3f} m")

for style, name in [(NORMAL, "normal"), (AGGRESSIVE, "aggressive")]:
    res = run_scenario(default_scenario(style), NoPrediction())
    counts = Counter(res.modes())
    v = np.array([r.v_ads for r in res.logs])
    print(f"\n{name} merge")
    print(f"  gap when the HDV enters the lane: {res.gap_at_merge:.2f} m")
    print(f"  TTC score {res.score:.2f} s, minimum {res.stats.minimum:.2f} s, "
          f"collision steps {int(res.collisions.sum())}")
    print(f"  slowest ADS speed {v.min():.2f} m/s")
    print("  steps per mode:", dict(sorted(counts.items())))
