"""Transformer encoder that regresses relative pose from keypoint pairs.

Forward and backward passes are written out by hand in numpy (float64).
Layer layout: linear token embedding, sinusoidal positional encoding,
``num_layers`` post-norm encoder layers (multi-head attention and a ReLU
feed-forward block), a masked mean over valid tokens, then two linear heads
for the 3D translation and the 6D rotation code.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

from ..errors import ConfigError, EmptyMask, SequenceTooLong, VokitError


@dataclass(frozen=True)
class RegressorConfig:
    input_dim: int = 4
    model_dim: int = 128
    ffn_dim: int = 256
    num_layers: int = 4
    num_heads: int = 4
    dropout_rate: float = 0.1
    max_seq_len: int = 1024
    layer_norm_eps: float = 1e-5

    def __post_init__(self):
        if self.num_heads < 1 or self.model_dim % self.num_heads:
            raise ConfigError(f"model_dim {self.model_dim} is not divisible by num_heads {self.num_heads}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        if min(self.input_dim, self.model_dim, self.ffn_dim, self.num_layers, self.max_seq_len) < 1:
            raise ConfigError("dimensions and counts must be positive")

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.num_heads

    def to_dict(self) -> dict:
        return asdict(self)


def param_shapes(config: RegressorConfig) -> dict:
    """Ordered name -> shape map; linear weights are stored ``(fan_in, fan_out)``."""
    d, f = config.model_dim, config.ffn_dim
    shapes = {"embed.weight": (config.input_dim, d), "embed.bias": (d,)}
    for i in range(config.num_layers):
        p = f"layers.{i}."
        for proj in ("q", "k", "v", "o"):
            shapes[p + f"attn.{proj}.weight"] = (d, d)
            shapes[p + f"attn.{proj}.bias"] = (d,)
        shapes[p + "norm1.weight"] = (d,)
        shapes[p + "norm1.bias"] = (d,)
        shapes[p + "ffn.linear1.weight"] = (d, f)
        shapes[p + "ffn.linear1.bias"] = (f,)
        shapes[p + "ffn.linear2.weight"] = (f, d)
        shapes[p + "ffn.linear2.bias"] = (d,)
        shapes[p + "norm2.weight"] = (d,)
        shapes[p + "norm2.bias"] = (d,)
    shapes["head_translation.weight"] = (d, 3)
    shapes["head_translation.bias"] = (3,)
    shapes["head_rotation.weight"] = (d, 6)
    shapes["head_rotation.bias"] = (6,)
    return shapes


class RegressorParams:
    """Named parameter tensors plus the architecture they belong to."""

    def __init__(self, config: RegressorConfig, tensors: dict):
        shapes = param_shapes(config)
        if list(tensors) != list(shapes):
            missing = set(shapes) ^ set(tensors)
            raise VokitError(f"parameter names do not match the config: {sorted(missing)[:4]}")
        for name, shape in shapes.items():
            if tuple(np.shape(tensors[name])) != shape:
                raise VokitError(f"{name}: expected shape {shape}, got {np.shape(tensors[name])}")
        self.config = config
        self.tensors = {k: np.asarray(v, dtype=np.float64) for k, v in tensors.items()}

    def __getitem__(self, name):
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors)

    def items(self):
        return self.tensors.items()

    def copy(self) -> RegressorParams:
        return RegressorParams(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def equals(self, other: RegressorParams) -> bool:
        return self.config == other.config and all(np.array_equal(v, other[k]) for k, v in self.items())


def init_params(config: RegressorConfig, seed: int = 0) -> RegressorParams:
    """Weights ~ U(±1/sqrt(fan_in)); biases and norm shifts 0; norm scales 1."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in param_shapes(config).items():
        if name.endswith(".weight") and len(shape) == 2:
            bound = 1.0 / np.sqrt(shape[0])
            tensors[name] = rng.uniform(-bound, bound, size=shape)
        elif ".norm" in name and name.endswith(".weight"):
            tensors[name] = np.ones(shape)
        else:
            tensors[name] = np.zeros(shape)
    return RegressorParams(config, tensors)


def param_count(params: RegressorParams) -> int:
    return int(sum(v.size for v in params.tensors.values()))


def positional_encoding(n: int, d: int) -> np.ndarray:
    """Interleaved sinusoidal encoding: sin on even, cos on odd channels."""
    pos = np.arange(n, dtype=np.float64)[:, None]
    div = np.exp(np.arange(0, d, 2, dtype=np.float64) * (-np.log(10000.0) / d))
    pe = np.zeros((n, d))
    pe[:, 0::2] = np.sin(pos * div)
    pe[:, 1::2] = np.cos(pos * div[: d // 2])
    return pe


@dataclass(frozen=True, eq=False)
class KeypointBatch:
    """Padded token batch.

    ``tokens`` has shape ``(B, N, 4)`` and holds normalized ``(x0, y0, x1, y1)``
    rows; ``mask`` marks valid tokens. Targets are optional for inference.
    """

    tokens: np.ndarray
    mask: np.ndarray
    gt_translation: np.ndarray | None = None
    gt_rotation6d: np.ndarray | None = None

    def __post_init__(self):
        tok = np.array(self.tokens, dtype=np.float64)
        mask = np.array(self.mask, dtype=bool)
        if tok.ndim != 3 or mask.shape != tok.shape[:2]:
            raise VokitError(f"tokens {tok.shape} and mask {mask.shape} are inconsistent")
        if tok.shape[0] == 0:
            raise EmptyMask("batch holds no samples")
        if np.any(mask.sum(axis=1) == 0):
            raise EmptyMask("every sample needs at least one valid token")
        tok[~mask] = 0.0
        object.__setattr__(self, "tokens", tok)
        object.__setattr__(self, "mask", mask)
        for name, width in (("gt_translation", 3), ("gt_rotation6d", 6)):
            v = getattr(self, name)
            if v is not None:
                v = np.array(v, dtype=np.float64).reshape(len(tok), width)
                object.__setattr__(self, name, v)

    def __len__(self):
        return self.tokens.shape[0]

    def take(self, idx) -> KeypointBatch:
        """Sub-batch trimmed to its longest valid sequence."""
        idx = np.asarray(idx)
        mask = self.mask[idx]
        n = int(mask.sum(axis=1).max()) if self._left_packed() else mask.shape[1]
        return KeypointBatch(
            self.tokens[idx, :n],
            mask[:, :n],
            None if self.gt_translation is None else self.gt_translation[idx],
            None if self.gt_rotation6d is None else self.gt_rotation6d[idx],
        )

    def _left_packed(self) -> bool:
        counts = self.mask.sum(axis=1)
        return bool(np.all(self.mask == (np.arange(self.mask.shape[1])[None, :] < counts[:, None])))


class Forward(NamedTuple):
    translation: np.ndarray
    rotation6d: np.ndarray


def _layer_norm(x, g, b, eps):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv)


def _layer_norm_back(dy, g, cache):
    xhat, inv = cache
    dxhat = dy * g
    dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    return dx, (dy * xhat).reshape(-1, dy.shape[-1]).sum(0), dy.reshape(-1, dy.shape[-1]).sum(0)


def _dropout_masks(config, B, N, seed):
    rng = np.random.default_rng(seed)
    keep = 1.0 - config.dropout_rate
    out = []
    for _ in range(config.num_layers):
        ma = (rng.random((B, N, config.model_dim)) < keep) / keep
        mf = (rng.random((B, N, config.ffn_dim)) < keep) / keep
        out.append((ma, mf))
    return out


def _forward(params: RegressorParams, batch: KeypointBatch, train_mode=False, dropout_seed=0, keep_cache=False):
    cfg = params.config
    X, mask = batch.tokens, batch.mask
    B, N, _ = X.shape
    if N > cfg.max_seq_len:
        raise SequenceTooLong(f"sequence length {N} exceeds max_seq_len {cfg.max_seq_len}")
    if X.shape[2] != cfg.input_dim:
        raise VokitError(f"tokens have width {X.shape[2]}, model expects {cfg.input_dim}")
    d, H, dh = cfg.model_dim, cfg.num_heads, cfg.head_dim
    eps = cfg.layer_norm_eps
    drop = _dropout_masks(cfg, B, N, dropout_seed) if train_mode and cfg.dropout_rate > 0 else None
    key_bias = np.where(mask, 0.0, -np.inf)[:, None, None, :]

    h = X @ params["embed.weight"] + params["embed.bias"] + positional_encoding(N, d)
    caches = []
    for i in range(cfg.num_layers):
        p = f"layers.{i}."

        def heads(name):
            return (h @ params[p + name + ".weight"] + params[p + name + ".bias"]).reshape(B, N, H, dh).transpose(0, 2, 1, 3)

        q, k, v = heads("attn.q"), heads("attn.k"), heads("attn.v")
        s = q @ k.transpose(0, 1, 3, 2) / np.sqrt(dh) + key_bias
        s -= s.max(axis=-1, keepdims=True)
        att = np.exp(s)
        att /= att.sum(axis=-1, keepdims=True)
        ctx = (att @ v).transpose(0, 2, 1, 3).reshape(B, N, d)
        a = ctx @ params[p + "attn.o.weight"] + params[p + "attn.o.bias"]
        if drop is not None:
            a = a * drop[i][0]
        h1, ln1 = _layer_norm(h + a, params[p + "norm1.weight"], params[p + "norm1.bias"], eps)
        pre = h1 @ params[p + "ffn.linear1.weight"] + params[p + "ffn.linear1.bias"]
        f = np.maximum(pre, 0.0)
        if drop is not None:
            f = f * drop[i][1]
        f2 = f @ params[p + "ffn.linear2.weight"] + params[p + "ffn.linear2.bias"]
        h_out, ln2 = _layer_norm(h1 + f2, params[p + "norm2.weight"], params[p + "norm2.bias"], eps)
        if keep_cache:
            caches.append((h, q, k, v, att, ctx, ln1, h1, pre, f, ln2))
        h = h_out

    m = mask[:, :, None].astype(np.float64)
    count = m.sum(axis=1)
    pooled = (h * m).sum(axis=1) / count
    t_hat = pooled @ params["head_translation.weight"] + params["head_translation.bias"]
    r_hat = pooled @ params["head_rotation.weight"] + params["head_rotation.bias"]
    cache = (caches, drop, pooled, m, count) if keep_cache else None
    return Forward(t_hat, r_hat), cache


def forward(params: RegressorParams, batch: KeypointBatch, train_mode=False, dropout_seed=0) -> Forward:
    """Predicted ``(translation, rotation6d)`` per sample.

    Dropout is applied only in ``train_mode`` (after the attention output
    projection and after the FFN activation), drawn from ``dropout_seed``.
    """
    return _forward(params, batch, train_mode, dropout_seed)[0]


class Losses(NamedTuple):
    total: float
    translation: float
    rotation: float


def pose_loss(t_hat, r6_hat, gt_translation, gt_rotation6d, beta=100.0) -> Losses:
    """``MSE(t) + beta * MSE(r6)``, each averaged over batch and components."""
    dt = np.asarray(t_hat, dtype=np.float64) - np.asarray(gt_translation, dtype=np.float64)
    dr = np.asarray(r6_hat, dtype=np.float64) - np.asarray(gt_rotation6d, dtype=np.float64)
    l_t = float(np.mean(dt * dt))
    l_r = float(np.mean(dr * dr))
    return Losses(l_t + beta * l_r, l_t, l_r)


def loss_and_grad(params: RegressorParams, batch: KeypointBatch, beta=100.0, train_mode=False, dropout_seed=0):
    """Loss terms and exact gradients for every parameter tensor."""
    if batch.gt_translation is None or batch.gt_rotation6d is None:
        raise VokitError("batch carries no regression targets")
    cfg = params.config
    out, cache = _forward(params, batch, train_mode, dropout_seed, keep_cache=True)
    caches, drop, pooled, m, count = cache
    losses = pose_loss(out.translation, out.rotation6d, batch.gt_translation, batch.gt_rotation6d, beta)

    B, N, _ = batch.tokens.shape
    d, H, dh = cfg.model_dim, cfg.num_heads, cfg.head_dim
    g = {}
    d_t = 2.0 * (out.translation - batch.gt_translation) / out.translation.size
    d_r = 2.0 * beta * (out.rotation6d - batch.gt_rotation6d) / out.rotation6d.size
    g["head_translation.weight"] = pooled.T @ d_t
    g["head_translation.bias"] = d_t.sum(0)
    g["head_rotation.weight"] = pooled.T @ d_r
    g["head_rotation.bias"] = d_r.sum(0)
    d_pooled = d_t @ params["head_translation.weight"].T + d_r @ params["head_rotation.weight"].T
    dh_ = (d_pooled / count)[:, None, :] * m

    def flat(x):
        return x.reshape(-1, x.shape[-1])

    for i in reversed(range(cfg.num_layers)):
        p = f"layers.{i}."
        h_in, q, k, v, att, ctx, ln1, h1, pre, f, ln2 = caches[i]
        du2, g[p + "norm2.weight"], g[p + "norm2.bias"] = _layer_norm_back(dh_, params[p + "norm2.weight"], ln2)
        g[p + "ffn.linear2.weight"] = flat(f).T @ flat(du2)
        g[p + "ffn.linear2.bias"] = flat(du2).sum(0)
        df = du2 @ params[p + "ffn.linear2.weight"].T
        if drop is not None:
            df = df * drop[i][1]
        dpre = df * (pre > 0)
        g[p + "ffn.linear1.weight"] = flat(h1).T @ flat(dpre)
        g[p + "ffn.linear1.bias"] = flat(dpre).sum(0)
        dh1 = du2 + dpre @ params[p + "ffn.linear1.weight"].T
        du1, g[p + "norm1.weight"], g[p + "norm1.bias"] = _layer_norm_back(dh1, params[p + "norm1.weight"], ln1)
        da = du1 * drop[i][0] if drop is not None else du1
        g[p + "attn.o.weight"] = flat(ctx).T @ flat(da)
        g[p + "attn.o.bias"] = flat(da).sum(0)
        dctx = (da @ params[p + "attn.o.weight"].T).reshape(B, N, H, dh).transpose(0, 2, 1, 3)
        datt = dctx @ v.transpose(0, 1, 3, 2)
        dv = att.transpose(0, 1, 3, 2) @ dctx
        ds = att * (datt - (datt * att).sum(axis=-1, keepdims=True)) / np.sqrt(dh)
        dq = ds @ k
        dk = ds.transpose(0, 1, 3, 2) @ q
        d_in = du1
        hf = flat(h_in)
        for name, dx in (("attn.q", dq), ("attn.k", dk), ("attn.v", dv)):
            dx = dx.transpose(0, 2, 1, 3).reshape(B, N, d)
            g[p + name + ".weight"] = hf.T @ flat(dx)
            g[p + name + ".bias"] = flat(dx).sum(0)
            d_in = d_in + dx @ params[p + name + ".weight"].T
        dh_ = d_in

    g["embed.weight"] = flat(batch.tokens).T @ flat(dh_)
    g["embed.bias"] = flat(dh_).sum(0)
    grads = {name: g[name] for name in params}
    return losses, grads


def backward(params: RegressorParams, batch: KeypointBatch, beta=100.0, train_mode=False, dropout_seed=0) -> dict:
    """Gradients of :func:`pose_loss` composed with :func:`forward`."""
    return loss_and_grad(params, batch, beta, train_mode, dropout_seed)[1]
