"""From-scratch numpy transformer for one-step trajectory prediction."""

from .data import (
    TABLE_WINDOWS_S,
    WindowDataset,
    WindowSample,
    build_windows,
    seconds_to_steps,
    split_episodes,
)
from .model import ModelConfig, TransformerModel, backward, forward
from .ops import (
    AttentionWeights,
    multi_head_attention,
    positional_encoding,
    scaled_dot_product_attention,
    softmax,
)
from .training import (
    RMSPropState,
    TrainConfig,
    fit_style_model,
    mse_loss,
    rmsprop_step,
    rollout_predict,
    train,
)

__all__ = [
    "TABLE_WINDOWS_S", "WindowDataset", "WindowSample", "build_windows", "seconds_to_steps",
    "split_episodes", "ModelConfig", "TransformerModel", "backward", "forward",
    "AttentionWeights", "multi_head_attention", "positional_encoding",
    "scaled_dot_product_attention", "softmax", "RMSPropState", "TrainConfig",
    "fit_style_model", "mse_loss", "rmsprop_step", "rollout_predict", "train",
]
