"""Train a small attention model on one driving style and roll it out.

The model sees a 50-step window of ``(x, y, v_x, v_y)`` and predicts the next
row.  Feeding its own predictions back in gives a multi-second forecast,
which the planner uses to anticipate the merge.  Runs in well under a minute.
"""

import numpy as np

from merge_planner import NORMAL
from merge_planner.synthetic import generate_dataset
from merge_planner.transformer.data import seconds_to_steps, split_episodes
from merge_planner.transformer.model import ModelConfig
from merge_planner.transformer.training import TrainConfig, fit_style_model, rollout_predict

episodes = [ep for ep in generate_dataset(60, 0.0, seed=5) if ep.style == NORMAL]
features = [ep.track.features() for ep in episodes]
train_idx, test_idx = split_episodes(len(features), 0.7, seed=0)

window = seconds_to_steps(1.67)
config = ModelConfig(d_model=16, window=window, n_heads=4, n_layers=1, dropout=0.0)
fit = fit_style_model(features, config, train_idx, test_idx, seed=0, stride=20, val_stride=40,
                      train_cfg=TrainConfig(epochs=6, lr_final=1e-5))
for log in fit.history:
    print(f"epoch {log.epoch}: train {log.train_mse:.2e}  val {log.val_mse:.2e}")

# Forecast 5 s of a held-out episode that the model never saw.
F = features[test_idx[0]]
horizon = seconds_to_steps(5.0)
k0 = len(F) // 3
pred = rollout_predict(fit.model, F[k0 - window:k0], horizon)
truth = F[k0:k0 + horizon]
err = np.abs(pred - truth)
print(f"after {horizon} steps: |dx| = {err[-1, 0]:.3f} m, |dy| = {err[-1, 1]:.3f} m")
