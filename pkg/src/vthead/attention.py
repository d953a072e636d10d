"""Visual-guided text head: stacked pre-norm decoder blocks.

Class-text rows are the query stream. Each block applies, with residual
connections around every sublayer:

    x <- x + SelfAttn(LN1(x))                 queries, keys, values: text rows
    x <- x + CrossAttn(LN2(x), V_s, V_s)      keys/values: spatial image tokens
    x <- x + FFN(LN3(x))                      ReLU, hidden width 4*D

Output projections start at zero, so a freshly initialized head is the
identity map on the text rows and the whole model reduces exactly to the
plain cosine-matching baseline. Spatial tokens carry no positional
encoding: the head treats them as a set.

Every forward caches what its backward needs; backward passes are
hand-derived and checked against finite differences in the tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Iterator

import numpy as np

from .errors import CacheMismatchError, ConfigError, ShapeError
from .ops import (
    affine,
    affine_backward,
    layer_norm,
    layer_norm_backward,
    relu,
    relu_backward,
    softmax_rows,
    softmax_rows_backward,
)

LN_EPS = 1e-5
FFN_WIDTH = 4  # hidden width multiplier

DEFAULT_HEADS = 8
DEFAULT_LAYERS = 1


@dataclass
class AttentionParams:
    w_q: np.ndarray
    b_q: np.ndarray
    w_k: np.ndarray
    b_k: np.ndarray
    w_v: np.ndarray
    b_v: np.ndarray
    w_o: np.ndarray
    b_o: np.ndarray


@dataclass
class LayerNormPair:
    gamma: np.ndarray
    beta: np.ndarray


@dataclass
class FeedForwardParams:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray


@dataclass
class BlockParams:
    ln1: LayerNormPair
    self_attn: AttentionParams
    ln2: LayerNormPair
    cross_attn: AttentionParams
    ln3: LayerNormPair
    ffn: FeedForwardParams


@dataclass
class VTParams:
    model_dim: int
    spatial_dim: int
    num_heads: int
    blocks: list[BlockParams]

    @property
    def num_layers(self) -> int:
        return len(self.blocks)


def _iter_block_arrays(block: BlockParams) -> Iterator[tuple[str, np.ndarray]]:
    for group_field in fields(block):
        group = getattr(block, group_field.name)
        for array_field in fields(group):
            yield f"{group_field.name}.{array_field.name}", getattr(group, array_field.name)


def iter_param_arrays(params: VTParams) -> Iterator[tuple[str, np.ndarray]]:
    """All parameter arrays in the canonical (serialization) order."""
    for i, block in enumerate(params.blocks):
        for name, array in _iter_block_arrays(block):
            yield f"block{i}.{name}", array


def n_parameters(params: VTParams) -> int:
    return sum(a.size for _, a in iter_param_arrays(params))


def flatten_params(params: VTParams) -> np.ndarray:
    return np.concatenate([a.ravel() for _, a in iter_param_arrays(params)])


def set_flat_params(params: VTParams, theta: np.ndarray) -> VTParams:
    """Overwrite all arrays in place from a flat vector (canonical order)."""
    if theta.size != n_parameters(params):
        raise ShapeError(
            f"flat vector has {theta.size} entries, model has {n_parameters(params)}"
        )
    offset = 0
    for _, a in iter_param_arrays(params):
        a[...] = theta[offset : offset + a.size].reshape(a.shape)
        offset += a.size
    return params


def empty_params(model_dim: int, spatial_dim: int, num_heads: int, num_layers: int) -> VTParams:
    """All-zero parameter set with the right shapes (used by loaders)."""
    if num_heads < 1 or num_layers < 1:
        raise ConfigError("num_heads and num_layers must be >= 1")
    if model_dim % num_heads:
        raise ConfigError(
            f"model_dim={model_dim} is not divisible by num_heads={num_heads}"
        )
    d, d_s = model_dim, spatial_dim
    hidden = FFN_WIDTH * d

    def attn(kv_dim: int) -> AttentionParams:
        return AttentionParams(
            w_q=np.zeros((d, d)), b_q=np.zeros(d),
            w_k=np.zeros((kv_dim, d)), b_k=np.zeros(d),
            w_v=np.zeros((kv_dim, d)), b_v=np.zeros(d),
            w_o=np.zeros((d, d)), b_o=np.zeros(d),
        )

    def ln() -> LayerNormPair:
        return LayerNormPair(gamma=np.zeros(d), beta=np.zeros(d))

    blocks = [
        BlockParams(
            ln1=ln(), self_attn=attn(d),
            ln2=ln(), cross_attn=attn(d_s),
            ln3=ln(),
            ffn=FeedForwardParams(
                w1=np.zeros((d, hidden)), b1=np.zeros(hidden),
                w2=np.zeros((hidden, d)), b2=np.zeros(d),
            ),
        )
        for _ in range(num_layers)
    ]
    return VTParams(model_dim=d, spatial_dim=d_s, num_heads=num_heads, blocks=blocks)


def zeros_like_params(params: VTParams) -> VTParams:
    return empty_params(
        params.model_dim, params.spatial_dim, params.num_heads, params.num_layers
    )


def init_params(
    model_dim: int, spatial_dim: int, num_heads: int, num_layers: int, seed: int
) -> VTParams:
    """Initialize a head that starts as the identity on the text rows.

    Query/key/value and first feed-forward weights are Xavier-uniform; both
    output projections (attention w_o, feed-forward w2) and all biases start
    at zero, layer norms at gamma=1, beta=0. Zero output projections make
    every sublayer output exactly zero, so the residual stream passes the
    text rows through untouched.
    """
    params = empty_params(model_dim, spatial_dim, num_heads, num_layers)
    rng = np.random.Generator(np.random.Philox(key=seed))

    def xavier(a: np.ndarray) -> None:
        fan_in, fan_out = a.shape
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        a[...] = rng.uniform(-bound, bound, size=a.shape)

    for block in params.blocks:
        block.ln1.gamma[...] = 1.0
        block.ln2.gamma[...] = 1.0
        block.ln3.gamma[...] = 1.0
        # Draw order is fixed: self q/k/v, cross q/k/v, ffn w1.
        xavier(block.self_attn.w_q)
        xavier(block.self_attn.w_k)
        xavier(block.self_attn.w_v)
        xavier(block.cross_attn.w_q)
        xavier(block.cross_attn.w_k)
        xavier(block.cross_attn.w_v)
        xavier(block.ffn.w1)
    return params


# ---------------------------------------------------------------------------
# Multi-head scaled dot-product attention
# ---------------------------------------------------------------------------


@dataclass
class MHACache:
    q_in: np.ndarray
    k_in: np.ndarray
    v_in: np.ndarray
    qh: np.ndarray  # (H, n_q, d_h)
    kh: np.ndarray  # (H, n_k, d_h)
    vh: np.ndarray  # (H, n_k, d_h)
    weights: np.ndarray  # (H, n_q, n_k) softmax rows
    concat: np.ndarray  # (n_q, D)


def _split_heads(x: np.ndarray, num_heads: int) -> np.ndarray:
    n, d = x.shape
    return x.reshape(n, num_heads, d // num_heads).transpose(1, 0, 2)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    h, n, d_h = x.shape
    return x.transpose(1, 0, 2).reshape(n, h * d_h)


def _mha_forward(
    q_in: np.ndarray,
    k_in: np.ndarray,
    v_in: np.ndarray,
    w: AttentionParams,
    num_heads: int,
) -> tuple[np.ndarray, np.ndarray, MHACache]:
    if q_in.ndim != 2 or k_in.ndim != 2 or v_in.ndim != 2:
        raise ShapeError("attention inputs must be 2-D matrices")
    if k_in.shape != v_in.shape:
        raise ShapeError(
            f"key shape {k_in.shape} does not match value shape {v_in.shape}"
        )
    d = w.w_q.shape[1]
    if d % num_heads:
        raise ConfigError(f"model dim {d} not divisible by {num_heads} heads")
    d_h = d // num_heads

    q = affine(q_in, w.w_q, w.b_q)
    k = affine(k_in, w.w_k, w.b_k)
    v = affine(v_in, w.w_v, w.b_v)

    qh = _split_heads(q, num_heads)
    kh = _split_heads(k, num_heads)
    vh = _split_heads(v, num_heads)

    logits = qh @ kh.transpose(0, 2, 1) / math.sqrt(d_h)
    weights = softmax_rows(logits)  # (H, n_q, n_k)
    concat = _merge_heads(weights @ vh)
    out = affine(concat, w.w_o, w.b_o)
    return out, weights, MHACache(q_in, k_in, v_in, qh, kh, vh, weights, concat)


def multi_head_attention(
    q_in: np.ndarray,
    k_in: np.ndarray,
    v_in: np.ndarray,
    w: AttentionParams,
    num_heads: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Scaled dot-product attention over ``num_heads`` heads.

    Returns (output (n_q, D), per-head softmax weights (H, n_q, n_k)).
    """
    out, weights, _ = _mha_forward(q_in, k_in, v_in, w, num_heads)
    return out, weights


def _mha_backward(
    d_out: np.ndarray, cache: MHACache, w: AttentionParams, num_heads: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray, AttentionParams]:
    """Returns (d_q_in, d_k_in, d_v_in, parameter gradients)."""
    d = w.w_q.shape[1]
    d_h = d // num_heads

    d_concat, dw_o, db_o = affine_backward(d_out, cache.concat, w.w_o)
    d_ctx = _split_heads(d_concat, num_heads)  # (H, n_q, d_h)

    d_weights = d_ctx @ cache.vh.transpose(0, 2, 1)  # (H, n_q, n_k)
    d_vh = cache.weights.transpose(0, 2, 1) @ d_ctx  # (H, n_k, d_h)
    d_logits = softmax_rows_backward(d_weights, cache.weights) / math.sqrt(d_h)
    d_qh = d_logits @ cache.kh
    d_kh = d_logits.transpose(0, 2, 1) @ cache.qh

    d_q = _merge_heads(d_qh)
    d_k = _merge_heads(d_kh)
    d_v = _merge_heads(d_vh)

    d_q_in, dw_q, db_q = affine_backward(d_q, cache.q_in, w.w_q)
    d_k_in, dw_k, db_k = affine_backward(d_k, cache.k_in, w.w_k)
    d_v_in, dw_v, db_v = affine_backward(d_v, cache.v_in, w.w_v)

    grads = AttentionParams(
        w_q=dw_q, b_q=db_q, w_k=dw_k, b_k=db_k,
        w_v=dw_v, b_v=db_v, w_o=dw_o, b_o=db_o,
    )
    return d_q_in, d_k_in, d_v_in, grads


# ---------------------------------------------------------------------------
# Decoder block stack
# ---------------------------------------------------------------------------


@dataclass
class AttentionTrace:
    """Per layer, per head attention weight matrices from one forward pass."""

    cross: list[np.ndarray]  # each (H, K, S)
    self_attn: list[np.ndarray]  # each (H, K, K)

    @property
    def num_layers(self) -> int:
        return len(self.cross)


@dataclass
class _BlockCache:
    x0: np.ndarray
    h1: np.ndarray
    sa_cache: MHACache
    x1: np.ndarray
    h2: np.ndarray
    ca_cache: MHACache
    x2: np.ndarray
    h3: np.ndarray
    ffn_pre: np.ndarray
    ffn_hidden: np.ndarray


@dataclass
class ForwardCache:
    params: VTParams
    t_c: np.ndarray
    v_s: np.ndarray
    blocks: list[_BlockCache]
    out_shape: tuple[int, int]


def _check_forward_shapes(t_c: np.ndarray, v_s: np.ndarray, params: VTParams) -> None:
    if t_c.ndim != 2 or t_c.shape[1] != params.model_dim:
        raise ShapeError(
            f"text rows have shape {t_c.shape}, model dim is {params.model_dim}"
        )
    if v_s.ndim != 2 or v_s.shape[1] != params.spatial_dim:
        raise ShapeError(
            f"spatial tokens have shape {v_s.shape}, spatial dim is {params.spatial_dim}"
        )


def vt_forward_cached(
    t_c: np.ndarray, v_s: np.ndarray, params: VTParams
) -> tuple[np.ndarray, AttentionTrace, ForwardCache]:
    _check_forward_shapes(t_c, v_s, params)
    h = params.num_heads
    x = np.asarray(t_c, dtype=np.float64)
    v_s = np.asarray(v_s, dtype=np.float64)

    block_caches = []
    cross_traces = []
    self_traces = []
    for block in params.blocks:
        x0 = x
        h1 = layer_norm(x0, block.ln1.gamma, block.ln1.beta, LN_EPS)
        sa_out, sa_w, sa_cache = _mha_forward(h1, h1, h1, block.self_attn, h)
        x1 = x0 + sa_out

        h2 = layer_norm(x1, block.ln2.gamma, block.ln2.beta, LN_EPS)
        ca_out, ca_w, ca_cache = _mha_forward(h2, v_s, v_s, block.cross_attn, h)
        x2 = x1 + ca_out

        h3 = layer_norm(x2, block.ln3.gamma, block.ln3.beta, LN_EPS)
        ffn_pre = affine(h3, block.ffn.w1, block.ffn.b1)
        ffn_hidden = relu(ffn_pre)
        x = x2 + affine(ffn_hidden, block.ffn.w2, block.ffn.b2)

        block_caches.append(
            _BlockCache(x0, h1, sa_cache, x1, h2, ca_cache, x2, h3, ffn_pre, ffn_hidden)
        )
        cross_traces.append(ca_w)
        self_traces.append(sa_w)

    trace = AttentionTrace(cross=cross_traces, self_attn=self_traces)
    cache = ForwardCache(params=params, t_c=t_c, v_s=v_s, blocks=block_caches,
                         out_shape=x.shape)
    return x, trace, cache


def vt_forward(
    t_c: np.ndarray, v_s: np.ndarray, params: VTParams
) -> tuple[np.ndarray, AttentionTrace]:
    """Refine class-text rows by attending to one image's spatial tokens.

    t_c: (K, D) class-text rows; v_s: (S, D_s) spatial tokens.
    Returns (refined rows (K, D), attention trace).
    """
    out, trace, _ = vt_forward_cached(t_c, v_s, params)
    return out, trace


def vt_backward(
    d_out: np.ndarray, cache: ForwardCache, params: VTParams
) -> tuple[VTParams, np.ndarray]:
    """Backpropagate through the stack.

    Returns (parameter gradients in a VTParams-shaped container, gradient
    with respect to the text rows). The spatial tokens are treated as
    frozen input. ``params`` must be the object the cache was built with.
    """
    if params is not cache.params:
        raise CacheMismatchError("cache was produced by a different parameter set")
    if d_out.shape != cache.out_shape:
        raise CacheMismatchError(
            f"upstream gradient shape {d_out.shape} != forward output {cache.out_shape}"
        )
    h = params.num_heads
    grads = zeros_like_params(params)

    dx = np.asarray(d_out, dtype=np.float64)
    for block, g, c in zip(
        reversed(params.blocks), reversed(grads.blocks), reversed(cache.blocks)
    ):
        # x3 = x2 + ffn(h3)
        d_hidden, g.ffn.w2[...], g.ffn.b2[...] = affine_backward(
            dx, c.ffn_hidden, block.ffn.w2
        )
        d_pre = relu_backward(d_hidden, c.ffn_pre)
        d_h3, g.ffn.w1[...], g.ffn.b1[...] = affine_backward(d_pre, c.h3, block.ffn.w1)
        d_x2_ln, g.ln3.gamma[...], g.ln3.beta[...] = layer_norm_backward(
            d_h3, c.x2, block.ln3.gamma, LN_EPS
        )
        dx2 = dx + d_x2_ln

        # x2 = x1 + cross_attn(h2, v_s, v_s); v_s is frozen input
        d_h2, _, _, ca_grads = _mha_backward(dx2, c.ca_cache, block.cross_attn, h)
        _copy_attn_grads(g.cross_attn, ca_grads)
        d_x1_ln, g.ln2.gamma[...], g.ln2.beta[...] = layer_norm_backward(
            d_h2, c.x1, block.ln2.gamma, LN_EPS
        )
        dx1 = dx2 + d_x1_ln

        # x1 = x0 + self_attn(h1, h1, h1)
        d_q, d_k, d_v, sa_grads = _mha_backward(dx1, c.sa_cache, block.self_attn, h)
        _copy_attn_grads(g.self_attn, sa_grads)
        d_h1 = d_q + d_k + d_v
        d_x0_ln, g.ln1.gamma[...], g.ln1.beta[...] = layer_norm_backward(
            d_h1, c.x0, block.ln1.gamma, LN_EPS
        )
        dx = dx1 + d_x0_ln

    return grads, dx


def _copy_attn_grads(dst: AttentionParams, src: AttentionParams) -> None:
    for f in fields(AttentionParams):
        getattr(dst, f.name)[...] = getattr(src, f.name)


def attention_map(
    trace: AttentionTrace, class_idx: int, layer_idx: int, grid_h: int, grid_w: int
) -> np.ndarray:
    """Head-averaged cross-attention weights of one class over the grid.

    Returns an (grid_h, grid_w) matrix whose entries sum to 1.
    """
    if not 0 <= layer_idx < trace.num_layers:
        raise IndexError(f"layer {layer_idx} out of range [0, {trace.num_layers})")
    weights = trace.cross[layer_idx]  # (H, K, S)
    if not 0 <= class_idx < weights.shape[1]:
        raise IndexError(f"class {class_idx} out of range [0, {weights.shape[1]})")
    row = weights[:, class_idx, :].mean(axis=0)  # (S,)
    if row.size != grid_h * grid_w:
        raise ShapeError(
            f"grid {grid_h}x{grid_w} does not match {row.size} spatial tokens"
        )
    return row.reshape(grid_h, grid_w)
