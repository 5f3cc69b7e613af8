"""Encoder-only trajectory transformer with hand-written backpropagation.

Stack: dense embedding of the 4 input features, sinusoidal positional
encoding, ``n_layers`` pre-norm encoder layers (multi-head self-attention
and a ReLU feed-forward block, each with a residual connection), a final
layer norm, global average pooling over time with dropout, a ReLU dense
layer with dropout and a linear 4-feature output.

With ``residual=True`` the output is read as a standardized increment:
``prediction = last_input_row + delta_scale * output``.  This keeps long
autoregressive rollouts from drifting; ``residual=False`` returns the
linear output directly.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from ..errors import ConfigError, DomainError, SchemaError
from .ops import (
    check_finite,
    layer_norm,
    layer_norm_backward,
    merge_heads,
    positional_encoding,
    softmax,
    split_heads,
)

CHECKPOINT_FORMAT = "merge-traj-transformer"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 48
    window: int = 202
    n_heads: int = 12
    ffn_width: int = 64
    n_layers: int = 4
    dense_width: int = 64
    dropout: float = 0.10
    n_features: int = 4
    n_outputs: int = 4
    residual: bool = True
    ln_eps: float = 1e-5

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model={self.d_model} must be divisible by n_heads={self.n_heads}")
        if self.d_model % 2:
            raise ConfigError("d_model must be even")
        if self.window < 1:
            raise ConfigError("window must be at least one step")
        if not 0 <= self.dropout < 1:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.residual and self.n_outputs != self.n_features:
            raise ConfigError("residual output needs n_outputs == n_features")

    @property
    def d_k(self) -> int:
        return self.d_model // self.n_heads


def param_shapes(cfg: ModelConfig) -> dict:
    d, F, D = cfg.d_model, cfg.ffn_width, cfg.dense_width
    shapes = {"embed.w": (cfg.n_features, d), "embed.b": (d,)}
    for l in range(cfg.n_layers):
        p = f"layer{l}."
        shapes.update({
            p + "ln1.g": (d,), p + "ln1.b": (d,),
            p + "attn.wq": (d, d), p + "attn.wk": (d, d), p + "attn.wv": (d, d),
            p + "attn.wo": (d, d), p + "attn.bo": (d,),
            p + "ln2.g": (d,), p + "ln2.b": (d,),
            p + "ffn.w1": (d, F), p + "ffn.b1": (F,), p + "ffn.w2": (F, d), p + "ffn.b2": (d,),
        })
    shapes.update({"final_ln.g": (d,), "final_ln.b": (d,),
                   "dense.w": (d, D), "dense.b": (D,),
                   "out.w": (D, cfg.n_outputs), "out.b": (cfg.n_outputs,)})
    return shapes


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> dict:
    params = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".g"):
            params[name] = np.ones(shape)
        elif len(shape) == 1:
            params[name] = np.zeros(shape)
        else:
            scale = 1.0 / np.sqrt(shape[0])
            if name == "out.w":
                scale *= 0.1
            params[name] = rng.normal(0.0, scale, size=shape)
    return params


@dataclass
class TransformerModel:
    """Weights, architecture and normalisation statistics of the predictor.

    ``feat_min``/``feat_max`` define the per-feature min-max map to [0, 1];
    ``delta_scale`` is the per-feature scale of normalised one-step
    increments used by the residual output.
    """

    config: ModelConfig
    params: dict
    feat_min: np.ndarray = field(default_factory=lambda: np.zeros(4))
    feat_max: np.ndarray = field(default_factory=lambda: np.ones(4))
    delta_scale: np.ndarray = field(default_factory=lambda: np.ones(4))

    def __post_init__(self):
        expected = param_shapes(self.config)
        if set(expected) != set(self.params):
            missing = set(expected) ^ set(self.params)
            raise ConfigError(f"parameter set does not match config: {sorted(missing)[:4]}")
        for k, s in expected.items():
            if self.params[k].shape != s:
                raise ConfigError(f"{k} has shape {self.params[k].shape}, config expects {s}")
        self.feat_min = np.asarray(self.feat_min, dtype=float)
        self.feat_max = np.asarray(self.feat_max, dtype=float)
        self.delta_scale = np.asarray(self.delta_scale, dtype=float)
        if np.any(self.feat_max - self.feat_min <= 0):
            raise ConfigError("normalisation ranges must be positive")

    @classmethod
    def initialize(cls, config: ModelConfig, seed: int = 0) -> "TransformerModel":
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0x1417])))
        nf = config.n_features
        return cls(config, init_params(config, rng), np.zeros(nf), np.ones(nf), np.ones(nf))

    def copy(self) -> "TransformerModel":
        return TransformerModel(self.config, {k: v.copy() for k, v in self.params.items()},
                                self.feat_min.copy(), self.feat_max.copy(), self.delta_scale.copy())

    @property
    def n_parameters(self) -> int:
        return sum(v.size for v in self.params.values())

    def normalize(self, x):
        return (np.asarray(x, dtype=float) - self.feat_min) / (self.feat_max - self.feat_min)

    def denormalize(self, z):
        return np.asarray(z, dtype=float) * (self.feat_max - self.feat_min) + self.feat_min

    # -- persistence ----------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION,
            "config": asdict(self.config),
            "feat_min": self.feat_min.tolist(), "feat_max": self.feat_max.tolist(),
            "delta_scale": self.delta_scale.tolist(),
            "params": {k: {"shape": list(v.shape), "data": v.ravel().tolist()}
                       for k, v in sorted(self.params.items())},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TransformerModel":
        if d.get("format") != CHECKPOINT_FORMAT:
            raise SchemaError("not a trajectory transformer checkpoint")
        if d.get("version") != CHECKPOINT_VERSION:
            raise SchemaError(f"unsupported checkpoint version {d.get('version')}")
        cfg = ModelConfig(**d["config"])
        params = {k: np.array(v["data"], dtype=float).reshape(v["shape"]) for k, v in d["params"].items()}
        return cls(cfg, params, np.array(d["feat_min"]), np.array(d["feat_max"]), np.array(d["delta_scale"]))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "TransformerModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def _dropout_mask(shape, p, rng):
    if p <= 0 or rng is None:
        return None
    return (rng.random(shape) >= p) / (1.0 - p)


def forward(model: TransformerModel, X, train_mode: bool = False, rng: Optional[np.random.Generator] = None,
            masks: Optional[dict] = None, return_cache: bool = False):
    """Forward pass on normalised windows.

    ``X`` is ``(w, 4)`` or ``(B, w, 4)``.  Returns the normalised next-step
    prediction (and, with ``return_cache``, the raw output and activations
    needed by :func:`backward`).  Dropout is applied only with
    ``train_mode``, drawing masks from ``rng`` unless ``masks`` are given.
    """
    cfg, P = model.config, model.params
    X = np.asarray(X, dtype=float)
    single = X.ndim == 2
    if single:
        X = X[None]
    B, T, nf = X.shape
    if nf != cfg.n_features:
        raise DomainError(f"expected {cfg.n_features} input features, got {nf}")
    if T != cfg.window:
        raise DomainError(f"expected window of {cfg.window} steps, got {T}")
    h, eps = cfg.n_heads, cfg.ln_eps
    cache = {"X": X, "layers": []}

    H = X @ P["embed.w"] + P["embed.b"] + positional_encoding(T, cfg.d_model)
    for l in range(cfg.n_layers):
        p = f"layer{l}."
        A, ln1 = layer_norm(H, P[p + "ln1.g"], P[p + "ln1.b"], eps)
        q = split_heads(A @ P[p + "attn.wq"], h)
        k = split_heads(A @ P[p + "attn.wk"], h)
        v = split_heads(A @ P[p + "attn.wv"], h)
        att = softmax(q @ np.swapaxes(k, -1, -2) / np.sqrt(cfg.d_k))
        concat = merge_heads(att @ v)
        H1 = H + concat @ P[p + "attn.wo"] + P[p + "attn.bo"]
        C, ln2 = layer_norm(H1, P[p + "ln2.g"], P[p + "ln2.b"], eps)
        f1 = C @ P[p + "ffn.w1"] + P[p + "ffn.b1"]
        r = np.maximum(f1, 0.0)
        H = H1 + r @ P[p + "ffn.w2"] + P[p + "ffn.b2"]
        if return_cache:
            cache["layers"].append(dict(A=A, ln1=ln1, q=q, k=k, v=v, att=att, concat=concat,
                                        C=C, ln2=ln2, f1=f1, r=r))
    Hf, lnf = layer_norm(H, P["final_ln.g"], P["final_ln.b"], eps)
    pooled = Hf.mean(axis=1)

    m1 = m2 = None
    if train_mode:
        if masks is not None:
            m1, m2 = masks.get("pool"), masks.get("dense")
        else:
            m1 = _dropout_mask(pooled.shape, cfg.dropout, rng)
            m2 = _dropout_mask((B, cfg.dense_width), cfg.dropout, rng)
    pooled_d = pooled * m1 if m1 is not None else pooled
    d1 = pooled_d @ P["dense.w"] + P["dense.b"]
    rd = np.maximum(d1, 0.0)
    rd_d = rd * m2 if m2 is not None else rd
    out = rd_d @ P["out.w"] + P["out.b"]
    if cfg.residual:
        pred = X[:, -1, :] + model.delta_scale * out
    else:
        pred = out
    check_finite("transformer forward", pred)
    if single:
        pred, out = pred[0], out[0]
    if return_cache:
        cache.update(Hf=Hf, lnf=lnf, pooled_d=pooled_d, m1=m1, m2=m2, d1=d1, rd_d=rd_d)
        return pred, out, cache
    return pred


def backward(model: TransformerModel, cache: dict, d_out: np.ndarray) -> dict:
    """Gradients of a scalar loss w.r.t. every parameter, given ``dL/d(output)``.

    ``d_out`` is the gradient with respect to the raw linear output (before
    the residual increment mapping), shape ``(B, n_outputs)``.
    """
    cfg, P = model.config, model.params
    h, B = cfg.n_heads, cache["X"].shape[0]
    T = cfg.window
    d_out = np.asarray(d_out, dtype=float).reshape(B, cfg.n_outputs)
    g = {}
    g["out.w"] = cache["rd_d"].T @ d_out
    g["out.b"] = d_out.sum(axis=0)
    d_rd = d_out @ P["out.w"].T
    if cache["m2"] is not None:
        d_rd = d_rd * cache["m2"]
    d_d1 = d_rd * (cache["d1"] > 0)
    g["dense.w"] = cache["pooled_d"].T @ d_d1
    g["dense.b"] = d_d1.sum(axis=0)
    d_pooled = d_d1 @ P["dense.w"].T
    if cache["m1"] is not None:
        d_pooled = d_pooled * cache["m1"]
    d_Hf = np.broadcast_to(d_pooled[:, None, :] / T, cache["Hf"].shape)
    xhat, inv = cache["lnf"]
    dH, g["final_ln.g"], g["final_ln.b"] = layer_norm_backward(d_Hf, xhat, inv, P["final_ln.g"])

    for l in reversed(range(cfg.n_layers)):
        p, c = f"layer{l}.", cache["layers"][l]
        # feed-forward block: H = H1 + relu(C W1 + b1) W2 + b2
        g[p + "ffn.w2"] = np.einsum("btf,btd->fd", c["r"], dH)
        g[p + "ffn.b2"] = dH.sum(axis=(0, 1))
        d_f1 = (dH @ P[p + "ffn.w2"].T) * (c["f1"] > 0)
        g[p + "ffn.w1"] = np.einsum("btd,btf->df", c["C"], d_f1)
        g[p + "ffn.b1"] = d_f1.sum(axis=(0, 1))
        dC = d_f1 @ P[p + "ffn.w1"].T
        xhat, inv = c["ln2"]
        dH1_ln, g[p + "ln2.g"], g[p + "ln2.b"] = layer_norm_backward(dC, xhat, inv, P[p + "ln2.g"])
        dH1 = dH + dH1_ln
        # attention block: H1 = H + concat Wo + bo
        g[p + "attn.wo"] = np.einsum("btc,btd->cd", c["concat"], dH1)
        g[p + "attn.bo"] = dH1.sum(axis=(0, 1))
        d_heads = split_heads(dH1 @ P[p + "attn.wo"].T, h)
        att, q, k, v = c["att"], c["q"], c["k"], c["v"]
        d_att = d_heads @ np.swapaxes(v, -1, -2)
        dv = np.swapaxes(att, -1, -2) @ d_heads
        ds = att * (d_att - (d_att * att).sum(axis=-1, keepdims=True)) / np.sqrt(cfg.d_k)
        dq = ds @ k
        dk = np.swapaxes(ds, -1, -2) @ q
        dq, dk, dv = merge_heads(dq), merge_heads(dk), merge_heads(dv)
        A = c["A"]
        g[p + "attn.wq"] = np.einsum("bti,btj->ij", A, dq)
        g[p + "attn.wk"] = np.einsum("bti,btj->ij", A, dk)
        g[p + "attn.wv"] = np.einsum("bti,btj->ij", A, dv)
        dA = dq @ P[p + "attn.wq"].T + dk @ P[p + "attn.wk"].T + dv @ P[p + "attn.wv"].T
        xhat, inv = c["ln1"]
        dH_ln, g[p + "ln1.g"], g[p + "ln1.b"] = layer_norm_backward(dA, xhat, inv, P[p + "ln1.g"])
        dH = dH1 + dH_ln

    X = cache["X"]
    g["embed.w"] = np.einsum("btf,btd->fd", X, dH)
    g["embed.b"] = dH.sum(axis=(0, 1))
    return g
