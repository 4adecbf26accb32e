"""Token-level residual attention blocks used by both policy experts.

Each expert is a small pre-norm transformer over per-step tokens with a
blockwise attention-mask bias: token groups are ordered (observation,
trajectory, action) and a token may attend to its own group and every group
before it. Parameters live in flat name->array dicts so the optimizer,
checkpoints, and finite-difference tests all see one namespace.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from . import autodiff as ad

MASK_BIAS = -1e9


def init_linear(params: dict, rng: np.random.Generator, name: str, n_in: int, n_out: int,
                dtype, scale: float | None = None) -> None:
    std = (1.0 / np.sqrt(n_in)) if scale is None else scale
    params[f"{name}.W"] = rng.normal(0.0, std, size=(n_in, n_out)).astype(dtype)
    params[f"{name}.b"] = np.zeros(n_out, dtype=dtype)


def linear(p: dict[str, ad.Var], name: str, x: ad.Var) -> ad.Var:
    return x @ p[f"{name}.W"] + p[f"{name}.b"]


def init_block(params: dict, rng: np.random.Generator, prefix: str, width: int,
               mlp_hidden: int, dtype) -> None:
    for ln in ("ln1", "ln2"):
        params[f"{prefix}.{ln}.g"] = np.ones(width, dtype=dtype)
        params[f"{prefix}.{ln}.b"] = np.zeros(width, dtype=dtype)
    for proj in ("q", "k", "v"):
        init_linear(params, rng, f"{prefix}.{proj}", width, width, dtype)
    init_linear(params, rng, f"{prefix}.out", width, width, dtype)
    init_linear(params, rng, f"{prefix}.mlp1", width, mlp_hidden, dtype)
    init_linear(params, rng, f"{prefix}.mlp2", mlp_hidden, width, dtype)


def _layer_norm(p: dict[str, ad.Var], prefix: str, x: ad.Var) -> ad.Var:
    return ad.layer_norm(x) * p[f"{prefix}.g"] + p[f"{prefix}.b"]


def attention(p: dict[str, ad.Var], prefix: str, x: ad.Var, mask_bias: np.ndarray,
              heads: int) -> ad.Var:
    """Masked multi-head self-attention over (B, n, width) tokens."""
    b, n, width = x.shape
    head_dim = width // heads
    q = linear(p, f"{prefix}.q", x)
    k = linear(p, f"{prefix}.k", x)
    v = linear(p, f"{prefix}.v", x)
    if heads > 1:
        q = ad.swapaxes(ad.reshape(q, (b, n, heads, head_dim)), 1, 2)
        k = ad.swapaxes(ad.reshape(k, (b, n, heads, head_dim)), 1, 2)
        v = ad.swapaxes(ad.reshape(v, (b, n, heads, head_dim)), 1, 2)
        bias = mask_bias[:, None, :, :]
    else:
        bias = mask_bias
    scores = (q @ ad.swapaxes(k, -1, -2)) * float(head_dim) ** -0.5 + bias
    attn = ad.softmax(scores, axis=-1)
    out = attn @ v
    if heads > 1:
        out = ad.reshape(ad.swapaxes(out, 1, 2), (b, n, width))
    return linear(p, f"{prefix}.out", out)


def block(p: dict[str, ad.Var], prefix: str, x: ad.Var, mask_bias: np.ndarray,
          heads: int) -> ad.Var:
    x = x + attention(p, prefix, _layer_norm(p, f"{prefix}.ln1", x), mask_bias, heads)
    h = linear(p, f"{prefix}.mlp1", _layer_norm(p, f"{prefix}.ln2", x))
    return x + linear(p, f"{prefix}.mlp2", ad.silu(h))


@lru_cache(maxsize=32)
def _group_mask_bias_cached(group_sizes: tuple[int, ...], dtype_name: str) -> np.ndarray:
    groups = np.concatenate([np.full(size, g) for g, size in enumerate(group_sizes)])
    allowed = groups[None, :] <= groups[:, None]
    bias = np.where(allowed, 0.0, MASK_BIAS).astype(dtype_name)
    bias = bias[None, :, :]
    bias.setflags(write=False)
    return bias


def group_mask_bias(group_sizes: list[int], dtype) -> np.ndarray:
    """(1, n, n) additive bias: 0 where token i may attend to token j (group
    of j <= group of i), MASK_BIAS elsewhere."""
    return _group_mask_bias_cached(tuple(group_sizes), np.dtype(dtype).name)


@lru_cache(maxsize=8)
def _tau_freqs(half: int) -> np.ndarray:
    return np.exp(np.linspace(0.0, np.log(1000.0), half))


def tau_embedding(tau: np.ndarray, width: int, dtype) -> np.ndarray:
    """Sinusoidal embedding of flow times: (B,) -> (B, 1, width)."""
    tau = np.asarray(tau, dtype=np.float64).reshape(-1)
    half = width // 2
    angles = tau[:, None] * _tau_freqs(half)[None, :]
    emb = np.concatenate([np.sin(angles), np.cos(angles)], axis=1)
    if emb.shape[1] < width:
        emb = np.concatenate([emb, np.zeros((len(tau), width - emb.shape[1]))], axis=1)
    return emb[:, None, :].astype(dtype)
