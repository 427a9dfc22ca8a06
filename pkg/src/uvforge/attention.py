"""Attention blocks that route multiview evidence into the UV atlas.

Three branches share one residual block: a frozen self-attention stand-in
(plays the role of a pretrained backbone layer), cross attention from UV
tokens to flattened multiview feature tokens, and UV self attention. The
cross/self branches receive positional features added after their linear
projections, so tokens at the same 3D surface point score each other highly
regardless of which domain they live in.

Key masking is exact: masked keys get a -1e9 logit bias, which underflows to
a weight of exactly 0.0 after the max-shifted softmax. If every key is masked
the branch output falls back to hard zeros and the event is counted in the
diagnostics dict instead of producing NaNs.

Floating-point note: softmax reductions depend on summation order, so raw
view permutation is only invariant up to ulps. canonical_view_order gives
callers a content-addressed ordering; a model that sorts its views through
it becomes bitwise permutation-invariant end to end.
"""

import hashlib
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .encoding import SILU_GAIN, any_pool, conv_init, xavier, zeros_p
from .errors import DimensionError, InvariantError

MASK_LOGIT = -1e9
QK_DAMP = 0.5  # init gain on q/k projections of the positional branches


@dataclass
class TokenGrid:
    tokens: T.Tensor  # [T, C]
    grid: tuple  # (H, W) or (N, H, W) for flattened multiview tokens
    mask: np.ndarray  # bool [T]

    def __post_init__(self):
        if int(np.prod(self.grid)) != self.tokens.shape[0]:
            raise DimensionError(f"grid {self.grid} vs {self.tokens.shape[0]} tokens")
        if self.mask.shape != (self.tokens.shape[0],):
            raise DimensionError("token mask length mismatch")


def tokens_from_map(x, mask):
    """[C,H,W] map -> row-major TokenGrid."""
    C, H, W = x.shape
    t = T.transpose(T.reshape(x, (C, H * W)), (1, 0))
    return TokenGrid(t, (H, W), mask.reshape(-1))


def map_from_tokens(tg):
    H, W = tg.grid
    return T.reshape(T.transpose(tg.tokens, (1, 0)), (tg.tokens.shape[1], H, W))


# ---------------------------------------------------------------------------
# weights


@dataclass
class AttnWeights:
    wq: T.Tensor
    bq: T.Tensor
    wk: T.Tensor
    bk: T.Tensor
    wv: T.Tensor
    bv: T.Tensor
    wo: T.Tensor
    bo: T.Tensor
    heads: int

    def params(self, prefix):
        return {
            f"{prefix}.wq": self.wq, f"{prefix}.bq": self.bq,
            f"{prefix}.wk": self.wk, f"{prefix}.bk": self.bk,
            f"{prefix}.wv": self.wv, f"{prefix}.bv": self.bv,
            f"{prefix}.wo": self.wo, f"{prefix}.bo": self.bo,
        }


@dataclass
class BlockWeights:
    base: AttnWeights  # frozen stand-in for a pretrained self-attention layer
    ref: AttnWeights  # UV -> multiview cross attention
    uvself: AttnWeights
    width: int
    heads: int

    def params(self, prefix="block"):
        out = {}
        out.update(self.base.params(f"{prefix}.base"))
        out.update(self.ref.params(f"{prefix}.ref"))
        out.update(self.uvself.params(f"{prefix}.uvself"))
        return out


def init_attn(width, heads, rng, zero_out=False, frozen=False, qk_gain=1.0):
    if width % heads:
        raise DimensionError(f"width {width} not divisible by {heads} heads")

    def lin(gain=1.0):
        return xavier(rng, (width, width), width, width, gain)

    w = AttnWeights(
        wq=lin(qk_gain), bq=zeros_p(width),
        wk=lin(qk_gain), bk=zeros_p(width),
        wv=lin(), bv=zeros_p(width),
        wo=zeros_p((width, width)) if zero_out else lin(),
        bo=zeros_p(width),
        heads=heads,
    )
    if frozen:
        for p in w.params("x").values():
            p.requires_grad = False
    return w


def init_block(width, heads, rng):
    """Frozen base branch, zero-output-projection new branches.

    The zero init keeps the whole block an exact identity-plus-base map
    until training moves the new projections off zero. The positional
    branches get damped query/key projections so the geometric tokens,
    not the content noise, dominate their logits at init.
    """
    return BlockWeights(
        base=init_attn(width, heads, rng, frozen=True),
        ref=init_attn(width, heads, rng, zero_out=True, qk_gain=QK_DAMP),
        uvself=init_attn(width, heads, rng, zero_out=True, qk_gain=QK_DAMP),
        width=width,
        heads=heads,
    )


def linear(x, w, b):
    return T.add_bias(T.matmul(x, w), b)


# ---------------------------------------------------------------------------
# scaled dot-product attention over flat token rows


def _mha(q, k, v, key_mask, heads, diag=None, tag="attn"):
    Tq, C = q.shape
    Tk = k.shape[0]
    if C % heads:
        raise DimensionError(f"width {C} not divisible by {heads} heads")
    d = C // heads
    qh = T.transpose(T.reshape(q, (Tq, heads, d)), (1, 0, 2))
    kh = T.transpose(T.reshape(k, (Tk, heads, d)), (1, 0, 2))
    vh = T.transpose(T.reshape(v, (Tk, heads, d)), (1, 0, 2))
    scores = T.scale(T.matmul(qh, T.transpose(kh, (0, 2, 1))), 1.0 / np.sqrt(d))
    bias = np.where(key_mask, 0.0, MASK_LOGIT).astype(np.float32)
    att = T.softmax_lastdim(T.add_bias(scores, T.Tensor(bias)))
    if diag is not None:
        a = att.data
        diag[f"{tag}.entropy"] = float(-(a * np.log(a + 1e-12)).sum(-1).mean())
        if diag.get("capture_weights"):
            diag[f"{tag}.weights"] = a.copy()
    out = T.matmul(att, vh)
    return T.reshape(T.transpose(out, (1, 0, 2)), (Tq, C))


def _zero_rows(n, c, diag, tag):
    if diag is not None:
        diag["all_masked_queries"] = diag.get("all_masked_queries", 0) + n
        diag[f"{tag}.entropy"] = 0.0
    return T.Tensor(np.zeros((n, c), dtype=np.float32))


def base_self_attn(h_in, w, diag=None):
    """The frozen branch: plain self attention, no positional terms."""
    q = linear(h_in.tokens, w.wq, w.bq)
    k = linear(h_in.tokens, w.wk, w.bk)
    v = linear(h_in.tokens, w.wv, w.bv)
    if not h_in.mask.any():
        return _zero_rows(*h_in.tokens.shape, diag, "base")
    return linear(_mha(q, k, v, h_in.mask, w.heads, diag, "base"), w.wo, w.bo)


def view_ref_attn(h_in, f_view, p_uv, p_view, w, diag=None):
    """UV queries against flattened multiview keys/values.

    p_uv / p_view are [T,C] positional tokens added after the projections;
    pass None for the positional-encoding ablation.
    """
    q = linear(h_in.tokens, w.wq, w.bq)
    if p_uv is not None:
        q = T.add(q, p_uv)
    if not f_view.mask.any():
        return _zero_rows(*h_in.tokens.shape, diag, "ref")
    k = linear(f_view.tokens, w.wk, w.bk)
    if p_view is not None:
        k = T.add(k, p_view)
    v = linear(f_view.tokens, w.wv, w.bv)
    return linear(_mha(q, k, v, f_view.mask, w.heads, diag, "ref"), w.wo, w.bo)


def uv_self_attn(h_in, p_uv, w, diag=None):
    q = linear(h_in.tokens, w.wq, w.bq)
    k = linear(h_in.tokens, w.wk, w.bk)
    if p_uv is not None:
        q = T.add(q, p_uv)
        k = T.add(k, p_uv)
    v = linear(h_in.tokens, w.wv, w.bv)
    if not h_in.mask.any():
        return _zero_rows(*h_in.tokens.shape, diag, "uvself")
    return linear(_mha(q, k, v, h_in.mask, w.heads, diag, "uvself"), w.wo, w.bo)


def parallel_block(h_in, f_view, p_uv, p_view, w, diag=None, use_ref=True, use_uv=True):
    """h + base(h) + crossattn + uvattn, residual sum in exactly that order."""
    out = T.add(h_in.tokens, base_self_attn(h_in, w.base, diag))
    if use_ref:
        out = T.add(out, view_ref_attn(h_in, f_view, p_uv, p_view, w.ref, diag))
    if use_uv:
        out = T.add(out, uv_self_attn(h_in, p_uv, w.uvself, diag))
    return TokenGrid(out, h_in.grid, h_in.mask)


def view_mass_entropy(att_weights, n_views):
    """Entropy of per-view attention mass, averaged over heads and queries."""
    h, tq, tk = att_weights.shape
    if tk % n_views:
        raise DimensionError(f"{tk} keys not divisible into {n_views} views")
    mass = att_weights.reshape(h, tq, n_views, tk // n_views).sum(-1)
    return float(-(mass * np.log(mass + 1e-12)).sum(-1).mean())


# ---------------------------------------------------------------------------
# frozen multiview feature extractor (stands in for a big pretrained encoder)


@dataclass
class ExtractorWeights:
    convs: list  # [(w, b), ...] all stride 2
    taps: tuple  # conv indices whose output feeds an attention level
    widths: tuple

    def params(self, prefix="extractor"):
        out = {}
        for i, (w, b) in enumerate(self.convs):
            out[f"{prefix}.c{i}.w"] = w
            out[f"{prefix}.c{i}.b"] = b
        return out


def init_extractor(widths, rng):
    # tap convs leave 3 channels free: block-averaged rgb is concatenated so
    # color survives the random frozen stack undistorted (a learned encoder
    # would keep it; random projections bury it)
    chain = [3, 16, 32] + [w - 3 for w in widths]
    if min(widths) <= 3:
        raise DimensionError(f"extractor widths must exceed 3, got {widths}")
    convs = []
    for cin, cout in zip(chain[:-1], chain[1:]):
        w = conv_init(rng, cout, cin, 3, gain=SILU_GAIN)
        b = zeros_p(cout)
        w.requires_grad = False
        b.requires_grad = False
        convs.append((w, b))
    taps = tuple(range(2, 2 + len(widths)))
    return ExtractorWeights(convs=convs, taps=taps, widths=tuple(widths))


def _block_mean_rgb(rgb, mask, factor):
    """Masked block-average of rgb down by factor; empty blocks give zero."""
    H, W = mask.shape
    if H % factor or W % factor:
        raise DimensionError(f"view {H}x{W} not divisible by pool factor {factor}")
    h, w = H // factor, W // factor
    m = mask.reshape(h, factor, w, factor).astype(np.float64)
    cnt = m.sum(axis=(1, 3))
    acc = (rgb.astype(np.float64) * mask[..., None]).reshape(h, factor, w, factor, 3)
    mean = acc.sum(axis=(1, 3)) / np.maximum(cnt, 1.0)[..., None]
    return mean.astype(np.float32).transpose(2, 0, 1)


@dataclass
class ViewFeatures:
    levels: list  # one flattened multiview TokenGrid per attention level
    n_views: int


def extract_view_features(views, weights):
    """views: objects with .rgb [H,W,3] and .mask [H,W]. Deterministic."""
    per_level = [[] for _ in weights.taps]
    for view in views:
        x = T.Tensor(np.ascontiguousarray(view.rgb.transpose(2, 0, 1)), dtype=np.float32)
        m = view.mask
        for i, (w, b) in enumerate(weights.convs):
            m = any_pool(m, 2)
            x = T.silu(T.mul_mask_hw(T.conv2d(x, w, b, stride=2, pad=1), m))
            if i in weights.taps:
                factor = view.mask.shape[0] // m.shape[0]
                color = T.Tensor(_block_mean_rgb(view.rgb, view.mask, factor))
                tap = T.concat([x, T.mul_mask_hw(color, m)], axis=0)
                per_level[weights.taps.index(i)].append(tokens_from_map(tap, m))
    levels = []
    for grids in per_level:
        tokens = T.concat([g.tokens for g in grids], axis=0)
        mask = np.concatenate([g.mask for g in grids])
        h, w = grids[0].grid
        levels.append(TokenGrid(tokens, (len(grids), h, w), mask))
    return ViewFeatures(levels=levels, n_views=len(views))


def canonical_view_order(view_keys):
    """Content-addressed ordering: sha256 over each view's identifying arrays.

    Returns indices such that reordering any permutation of the same views
    by them yields the same sequence (ties broken by original position,
    which only matters for bit-identical duplicates).
    """
    digests = []
    for i, arrays in enumerate(view_keys):
        h = hashlib.sha256()
        for a in arrays:
            h.update(np.ascontiguousarray(a).tobytes())
        digests.append((h.hexdigest(), i))
    return [i for _, i in sorted(digests)]


# ---------------------------------------------------------------------------
# weight-free geometric oracle


def oracle_attend(uv_geo, views, tau, chunk=2048):
    """Texture each covered texel by softmax over ALL covered view pixels,
    logits = -|xyz_texel - xyz_pixel|^2 / tau, values = pixel colors.

    Pure geometry, no weights: the sanity check that 3D-coordinate keys
    alone route texels to the right view evidence. Occluded texels attend
    to their nearest visible surface instead of failing. Float64 inside.
    """
    if not tau > 0:
        raise InvariantError(f"tau must be positive, got {tau}")
    key_xyz = []
    key_rgb = []
    for v in views:
        key_xyz.append(v.xyz[v.mask])
        key_rgb.append(v.rgb[v.mask])
    key_xyz = np.concatenate(key_xyz).astype(np.float64)
    key_rgb = np.concatenate(key_rgb).astype(np.float64)
    if len(key_xyz) == 0:
        raise InvariantError("no covered view pixels to attend to")

    H, W = uv_geo.mask.shape
    out = np.zeros((H, W, 3), dtype=np.float32)
    q_xyz = uv_geo.xyz[uv_geo.mask].astype(np.float64)
    k2 = (key_xyz ** 2).sum(-1)
    colors = np.empty((len(q_xyz), 3))
    inv_tau = 0.0 if np.isinf(tau) else 1.0 / tau
    for s in range(0, len(q_xyz), chunk):
        q = q_xyz[s : s + chunk]
        d2 = (q ** 2).sum(-1)[:, None] + k2[None, :] - 2.0 * (q @ key_xyz.T)
        logits = -np.maximum(d2, 0.0) * inv_tau
        logits -= logits.max(axis=1, keepdims=True)
        w = np.exp(logits)
        w /= w.sum(axis=1, keepdims=True)
        colors[s : s + chunk] = w @ key_rgb
    out[uv_geo.mask] = colors.astype(np.float32)
    return out
