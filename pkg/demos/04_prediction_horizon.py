"""Compare the reactive planner with one that uses predicted trajectories.

Two small per-style models are trained first (about 40 seconds), then the
same tight merges are replayed with forecasts that start a given number of
seconds before the lane change.  When a forecast shows the HDV crossing into
the ADS lane too close ahead, the planner starts braking early (mode "aia").

Models this small are not reliable over long horizons.  A forecast that never
crosses the boundary leaves the planner purely reactive, so its score equals
the baseline.  The acceptance tests use a larger model trained on 202
episodes, which predicts the merge at every horizon.
"""

from merge_planner import AGGRESSIVE, DT, NORMAL
from merge_planner.safety import NoPrediction, WithPrediction, run_scenario
from merge_planner.synthetic import default_scenario, generate_dataset
from merge_planner.transformer.data import seconds_to_steps, split_episodes
from merge_planner.transformer.model import ModelConfig
from merge_planner.transformer.training import TrainConfig, fit_style_model

episodes = generate_dataset(60, 0.5, seed=7)
config = ModelConfig(d_model=16, window=seconds_to_steps(1.67), n_heads=4, n_layers=1)
models = {}
for style in (NORMAL, AGGRESSIVE):
    feats = [ep.track.features() for ep in episodes if ep.style == style]
    tr, te = split_episodes(len(feats), 0.7, seed=0)
    fit = fit_style_model(feats, config, tr, te, seed=0, stride=10, val_stride=40,
                          train_cfg=TrainConfig(epochs=10, lr_final=1e-5))
    models[style] = fit.model
    print(f"style {style}: validation MSE {fit.val_mse:.2e}")

for style, name in [(NORMAL, "normal"), (AGGRESSIVE, "aggressive")]:
    spec = default_scenario(style)
    episode = spec.episode()
    base = run_scenario(spec, NoPrediction(), episode=episode)
    print(f"\n{name} merge, baseline TTC score {base.score:.2f} s, gap at merge {base.gap_at_merge:.2f} m")
    for h in (1.67, 5.0, 10.0):
        res = run_scenario(spec, WithPrediction(models, h), episode=episode)
        p = res.prediction
        if p.merge_offset is None:
            when = "no merge in forecast"
        else:
            err = (p.start_index + p.merge_offset - res.merge_index) * DT
            when = f"merge predicted {err:+.2f} s from the true one"
        braked = "aia" in res.modes()
        print(f"  h = {h:5.2f} s: {when:38s} early braking {str(braked):5s} "
              f"TTC {res.score:7.2f} s, gap {res.gap_at_merge:5.2f} m")
