"""Geometric position features shared by the UV atlas and the camera views.

Surface points carry normalized position and normal; both get a sinusoidal
embedding, pooled to each attention resolution and projected to token width
by small learnable convs. The same weights process both domains, so a texel
and a view pixel sitting on the same surface point end up with the same
positional feature vector, and the projection init deliberately preserves
the embedding's inner-product structure so that coincidence steers attention
from the very first step.

Channel layout of the embedding (frozen, golden files depend on it):
for each of the 6 input dims (x, y, z, nx, ny, nz), FOURIER_BANDS pairs
(sin, cos) by ascending frequency 2^l * pi, with the input scaled by 0.5
first. No raw passthrough channels.

The 0.5 matters: inputs live in [-1,1], so differences span [-2,2], and
cos(2^l * pi * d) cannot tell d from 2-d at any band. Without the rescale,
antipodal sphere points and opposite cube-face normals collide in every
channel and cross-domain matching breaks exactly there. Halving the input
puts differences inside one period at the base band.
"""

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import DimensionError, InvariantError

FOURIER_BANDS = 10
ENTRY_FACTOR = 8  # pixel-unshuffle factor at the pyramid entry


def fourier_bands(bands=FOURIER_BANDS):
    return (2.0 ** np.arange(bands)) * np.pi


def fourier_embed(geo, bands=FOURIER_BANDS):
    """Sinusoidal embedding of (xyz, normal) -> Tensor[6*2*bands, H, W].

    geo is any object with .xyz [H,W,3], .normal [H,W,3], .mask [H,W].
    Positions must already be scene-normalized into [-1,1]; uncovered
    texels come out all-zero (cos included).
    """
    xyz = np.asarray(geo.xyz, dtype=np.float64)
    nrm = np.asarray(geo.normal, dtype=np.float64)
    mask = np.asarray(geo.mask, dtype=bool)
    if np.abs(xyz[mask]).max(initial=0.0) > 1.0 + 1e-4:
        raise InvariantError(
            f"positions exceed [-1,1] (max |p| = {np.abs(xyz[mask]).max():.4f}); "
            "normalize the scene first"
        )
    if mask.any():
        lens = np.linalg.norm(nrm[mask], axis=-1)
        if np.abs(lens - 1.0).max() > 1e-3:
            raise InvariantError("normals not unit length")

    p6 = 0.5 * np.concatenate([xyz, nrm], axis=-1)  # [H,W,6]
    ang = p6[..., None] * fourier_bands(bands)  # [H,W,6,L]
    emb = np.stack([np.sin(ang), np.cos(ang)], axis=-1)  # [H,W,6,L,2]
    H, W = mask.shape
    emb = emb.reshape(H, W, 6 * 2 * bands)
    emb[~mask] = 0.0
    return T.Tensor(np.ascontiguousarray(emb.transpose(2, 0, 1)), dtype=np.float32)


def any_pool(mask, r):
    H, W = mask.shape
    if H % r or W % r:
        raise DimensionError(f"mask {H}x{W} not divisible by {r}")
    return mask.reshape(H // r, r, W // r, r).any(axis=(1, 3))


@dataclass
class PosPyramid:
    levels: list  # Tensor[C_k, H_k, W_k] per attention resolution
    masks: list  # bool [H_k, W_k], any-pooled coverage
    domain: str = "uv"


@dataclass
class PosEncoderWeights:
    proj_w: list  # per level: 1x1 conv, band-weighted kernel-preserving init
    proj_b: list
    ref1_w: list  # per level: 3x3 refinement conv
    ref1_b: list
    ref2_w: list  # per level: 3x3 conv, zero-init so refinement starts inert
    ref2_b: list
    widths: tuple = ()
    bands: int = FOURIER_BANDS

    def params(self, prefix="pos"):
        out = {}
        for k in range(len(self.proj_w)):
            out[f"{prefix}.l{k}.proj.w"] = self.proj_w[k]
            out[f"{prefix}.l{k}.proj.b"] = self.proj_b[k]
            out[f"{prefix}.l{k}.r1.w"] = self.ref1_w[k]
            out[f"{prefix}.l{k}.r1.b"] = self.ref1_b[k]
            out[f"{prefix}.l{k}.r2.w"] = self.ref2_w[k]
            out[f"{prefix}.l{k}.r2.b"] = self.ref2_b[k]
        return out


def xavier(rng, shape, fan_in, fan_out, gain=1.0):
    limit = gain * np.sqrt(6.0 / (fan_in + fan_out))
    return T.Tensor(rng.uniform(-limit, limit, shape).astype(np.float32), requires_grad=True)


# silu roughly halves activation scale, so convs feeding it get a gain to
# keep magnitudes stable through deep stacks
SILU_GAIN = 1.7


def conv_init(rng, out_ch, in_ch, k, gain=1.0):
    return xavier(rng, (out_ch, in_ch, k, k), in_ch * k * k, out_ch * k * k, gain)


def zeros_p(shape):
    return T.Tensor(np.zeros(shape, dtype=np.float32), requires_grad=True)


# Init scale for the positional projection. Queries and keys both carry the
# projected embedding, so their dot product at init approximates the band
# weighted cosine kernel of the raw embedding; the gain sets the match logit
# to roughly +8 per head, sharp enough that cross-domain attention routes by
# geometry before any training.
POS_GAIN = 2.6


def band_channel_weights(bands=FOURIER_BANDS):
    """Per-channel weight, decaying with band frequency.

    At token granularity the block centers of the two domains disagree by a
    sizable fraction of the patch, so bands above the first couple contribute
    noise rather than matching signal. The decay keeps the init kernel
    unimodal; training can still grow the high-band columns later.
    """
    w = 0.5 ** np.maximum(np.arange(bands) - 1, 0)
    return np.tile(np.repeat(w, 2), 6).astype(np.float32)  # dims x bands x (sin,cos)


def _pool_mean(data, mask, f):
    """Masked block-mean pool of a [C,H,W] map by factor f (numpy, f64 sums)."""
    C, H, W = data.shape
    if H % f or W % f:
        raise DimensionError(f"map {H}x{W} not divisible by pool factor {f}")
    acc = (data.astype(np.float64) * mask).reshape(C, H // f, f, W // f, f).sum(axis=(2, 4))
    cnt = mask.reshape(H // f, f, W // f, f).sum(axis=(1, 3))
    out = np.zeros_like(acc)
    np.divide(acc, cnt[None], out=out, where=cnt[None] > 0)
    return out.astype(np.float32)


def init_pos_encoder(widths, rng, bands=FOURIER_BANDS):
    in_ch = 6 * 2 * bands
    bw = np.sqrt(band_channel_weights(bands)) * POS_GAIN
    w = PosEncoderWeights(
        proj_w=[], proj_b=[], ref1_w=[], ref1_b=[], ref2_w=[], ref2_b=[],
        widths=tuple(widths), bands=bands,
    )
    for c in widths:
        limit = np.sqrt(6.0 / (in_ch + c))
        data = rng.uniform(-limit, limit, (c, in_ch)).astype(np.float32) * bw[None, :]
        w.proj_w.append(T.Tensor(data.reshape(c, in_ch, 1, 1), requires_grad=True))
        w.proj_b.append(zeros_p(c))
        w.ref1_w.append(conv_init(rng, c, c, 3, gain=SILU_GAIN))
        w.ref1_b.append(zeros_p(c))
        w.ref2_w.append(zeros_p((c, c, 3, 3)))
        w.ref2_b.append(zeros_p(c))
    return w


def encode_positions(embed, mask, weights, levels, domain="uv"):
    """Pool the embedding to each token grid and project it to token width.

    levels is the expected [(C_k, H_k, W_k), ...]; level k sits at
    input_res / 8 / 2^k. A plan that disagrees with the input raises
    DimensionError before any arithmetic happens.

    The pooling is a fixed masked block mean, so the projected queries and
    keys keep the embedding's distance-kernel structure at init; a zero-init
    residual conv pair per level adds trainable refinement without touching
    that property.
    """
    embed = embed if isinstance(embed, T.Tensor) else T.Tensor(embed, dtype=np.float32)
    C_in, H, W = embed.shape
    if H % ENTRY_FACTOR or W % ENTRY_FACTOR:
        raise DimensionError(f"input {H}x{W} not divisible by the entry factor {ENTRY_FACTOR}")
    if mask.shape != (H, W):
        raise DimensionError(f"mask {mask.shape} vs embed {embed.shape}")
    if len(levels) != len(weights.proj_w):
        raise DimensionError(f"{len(levels)} levels requested, weights built for {len(weights.proj_w)}")

    outs, masks = [], []
    for k, (ck, hk, wk) in enumerate(levels):
        f = ENTRY_FACTOR << k
        pooled = _pool_mean(embed.data, mask, f)
        if pooled.shape != (C_in, hk, wk) or weights.proj_w[k].shape[0] != ck:
            raise DimensionError(f"level {k}: plan {(ck, hk, wk)} but pooled map is {pooled.shape}")
        m = any_pool(mask, f)
        y = T.mul_mask_hw(T.conv2d(T.Tensor(pooled), weights.proj_w[k], weights.proj_b[k]), m)
        t = T.mul_mask_hw(T.conv2d(y, weights.ref1_w[k], weights.ref1_b[k], pad=1), m)
        t = T.mul_mask_hw(T.conv2d(T.silu(t), weights.ref2_w[k], weights.ref2_b[k], pad=1), m)
        y = T.add(y, t)
        outs.append(y)
        masks.append(m)
    return PosPyramid(levels=outs, masks=masks, domain=domain)


def plan_levels(widths, height, width):
    """The (C_k, H_k, W_k) ladder for a given input resolution."""
    out = []
    h, w = height // ENTRY_FACTOR, width // ENTRY_FACTOR
    for k, c in enumerate(widths):
        if k > 0:
            h, w = h // 2, w // 2
        out.append((c, h, w))
    return out


def shared_encode(uv_geo, view_geos, weights):
    """Same weights over both domains; returns (p_uv, [p_view per view])."""
    widths = weights.widths
    H, W = uv_geo.mask.shape
    p_uv = encode_positions(
        fourier_embed(uv_geo, weights.bands), uv_geo.mask, weights,
        plan_levels(widths, H, W), domain="uv",
    )
    p_views = []
    for i, vg in enumerate(view_geos):
        h, w = vg.mask.shape
        p_views.append(
            encode_positions(
                fourier_embed(vg, weights.bands), vg.mask, weights,
                plan_levels(widths, h, w), domain=f"view{i}",
            )
        )
    return p_uv, p_views


def embed_skip_channels(bands=FOURIER_BANDS):
    """Embedding channels worth feeding to the full-res decoder head.

    xyz dims only, bands 1..5 (pi .. 16 pi on raw coordinates after the 0.5
    input scale): periodic functions of position at the scales the procedural
    texture families actually use. Attention tokens are block means, so this
    is where sub-block detail re-enters.
    """
    top = min(6, bands)
    idx = [
        dim * 2 * bands + l * 2 + s
        for dim in range(3)
        for l in range(1, top)
        for s in (0, 1)
    ]
    return np.asarray(idx, dtype=np.intp)
