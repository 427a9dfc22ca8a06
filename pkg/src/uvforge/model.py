"""The toy UV-synthesis network.

A strided conv stem takes the baked UV geometry (position, normal, coverage,
plus an optional back-projected color prior) down to token resolution, two
parallel attention blocks mix in multiview evidence at two scales, and a
conv decoder with skip connections brings the result back to texel
resolution as an RGB texture.

Views are sorted by a content digest before anything touches them, so the
network output is bitwise independent of the order the caller supplies views
in. Dropped views stay in the token layout with their coverage masks cleared;
masked keys get exactly zero attention weight.

Ablation switches:
  no_pos_enc: positional tokens withheld from every attention branch
  no_ref_attn: cross-attention branch skipped; callers feed the front view
          back-projection through the stem's color-prior channels instead
  no_uv_attn: UV self-attention branch skipped
"""

from dataclasses import dataclass

import numpy as np

from . import attention as A
from . import encoding as E
from . import tensor as T
from .errors import ConfigError

ABLATIONS = ("full", "no_pos_enc", "no_ref_attn", "no_uv_attn")
GEO_CHANNELS = 10  # xyz(3) + normal(3) + coverage(1) + color prior(3)


@dataclass
class ToyModel:
    widths: tuple
    heads: int
    ablation: str
    stem: list  # [(w, b)] stride-2 convs, input res -> res/8
    down: tuple  # stride-2 conv between the two attention levels
    blocks: list  # blocks[level] = [BlockWeights, ...] applied in sequence
    pos: E.PosEncoderWeights
    extractor: A.ExtractorWeights  # frozen
    dec: list  # [(w, b)] upsample-then-conv stages back to full res
    head: list  # final convs after the full-res geometry skip
    head_skip: tuple  # 1x1 conv over selected embedding channels, added pre-silu

    def params(self):
        out = {}
        for i, (w, b) in enumerate(self.stem):
            out[f"stem.c{i}.w"] = w
            out[f"stem.c{i}.b"] = b
        out["down.w"], out["down.b"] = self.down
        for k, level in enumerate(self.blocks):
            for j, blk in enumerate(level):
                out.update(blk.params(f"b{k}_{j}"))
        out.update(self.pos.params())
        out.update(self.extractor.params())
        for i, (w, b) in enumerate(self.dec):
            out[f"dec.c{i}.w"] = w
            out[f"dec.c{i}.b"] = b
        for i, (w, b) in enumerate(self.head):
            out[f"head.c{i}.w"] = w
            out[f"head.c{i}.b"] = b
        out["head.skip.w"] = self.head_skip[0]
        return out

    def trainable(self):
        return {k: p for k, p in self.params().items() if p.requires_grad}

    def param_count(self):
        return int(sum(p.size for p in self.params().values()))

    def load_state(self, named):
        for k, p in self.params().items():
            if k not in named:
                raise ConfigError(f"checkpoint missing parameter {k}")
            if p.shape != named[k].shape:
                raise ConfigError(f"checkpoint shape mismatch at {k}: {named[k].shape} vs {p.shape}")
            p.data[:] = named[k]


def init_model(widths=(64, 128), heads=2, seed=0, ablation="full", bands=E.FOURIER_BANDS):
    if ablation not in ABLATIONS:
        raise ConfigError(f"unknown ablation {ablation!r}, have {ABLATIONS}")
    rng = np.random.default_rng([seed, 0xA11])
    w0, w1 = widths
    stem_ch = [GEO_CHANNELS, max(4, w0 // 2), max(6, 3 * w0 // 4), w0]
    stem = [
        (E.conv_init(rng, co, ci, 3, gain=E.SILU_GAIN), E.zeros_p(co))
        for ci, co in zip(stem_ch[:-1], stem_ch[1:])
    ]
    down = (E.conv_init(rng, w1, w0, 3, gain=E.SILU_GAIN), E.zeros_p(w1))
    blocks = [[A.init_block(w, heads, rng) for _ in range(2)] for w in (w0, w1)]
    pos = E.init_pos_encoder(widths, rng, bands=bands)
    extractor = A.init_extractor(widths, rng)
    d1, d2, d3 = stem_ch[2], stem_ch[1], max(4, w0 // 4)
    dec = [
        (E.conv_init(rng, w0, w1, 3, gain=E.SILU_GAIN), E.zeros_p(w0)),  # 2x up, merge level 1
        (E.conv_init(rng, d1, w0, 3, gain=E.SILU_GAIN), E.zeros_p(d1)),
        (E.conv_init(rng, d2, d1, 3, gain=E.SILU_GAIN), E.zeros_p(d2)),
        (E.conv_init(rng, d3, d2, 3, gain=E.SILU_GAIN), E.zeros_p(d3)),
    ]
    head = [
        (E.conv_init(rng, d3, d3 + GEO_CHANNELS, 3, gain=E.SILU_GAIN), E.zeros_p(d3)),
        (E.zeros_p((3, d3, 1, 1)), T.Tensor(np.full(3, 0.5, np.float32), requires_grad=True)),
    ]
    n_skip = len(E.embed_skip_channels(bands))
    head_skip = (E.zeros_p((d3, n_skip, 1, 1)),)
    return ToyModel(
        widths=tuple(widths), heads=heads, ablation=ablation,
        stem=stem, down=down, blocks=blocks, pos=pos, extractor=extractor,
        dec=dec, head=head, head_skip=head_skip,
    )


def _geo_input(uv_geo, bp):
    H, W = uv_geo.mask.shape
    chans = np.empty((GEO_CHANNELS, H, W), dtype=np.float32)
    chans[0:3] = uv_geo.xyz.transpose(2, 0, 1)
    chans[3:6] = uv_geo.normal.transpose(2, 0, 1)
    chans[6] = uv_geo.mask
    chans[7:10] = 0.0 if bp is None else bp.transpose(2, 0, 1)
    chans[:, ~uv_geo.mask] = 0.0
    return T.Tensor(chans)


def forward(model, uv_geo, uv_embed, views, view_embeds, bp=None, diag=None, flags=None):
    """Predict a [3,H,W] texture tensor (zero outside coverage).

    views: objects with .rgb [H',W',3] and .mask [H',W'] (mask cleared for
    dropped views); view_embeds: matching positional embeddings. bp is the
    optional [H,W,3] back-projected color prior for the no_ref_attn arm. flags
    overrides the ablation-derived (use_pos, use_ref, use_uv) for tests.
    """
    if flags is None:
        flags = (
            model.ablation != "no_pos_enc",
            model.ablation != "no_ref_attn",
            model.ablation != "no_uv_attn",
        )
    use_pos, use_ref, use_uv = flags
    order = A.canonical_view_order(
        [(v.rgb, v.mask, emb.data) for v, emb in zip(views, view_embeds)]
    )
    views = [views[i] for i in order]
    view_embeds = [view_embeds[i] for i in order]

    H, W = uv_geo.mask.shape
    x = _geo_input(uv_geo, bp)
    masks = [uv_geo.mask]
    for w, b in model.stem:
        masks.append(E.any_pool(masks[-1], 2))
        x = T.silu(T.mul_mask_hw(T.conv2d(x, w, b, stride=2, pad=1), masks[-1]))
    m16 = masks[-1]

    p_uv_tok = [None, None]
    p_view_tok = [None, None]
    if use_pos:
        p_uv = E.encode_positions(
            uv_embed, uv_geo.mask, model.pos, E.plan_levels(model.widths, H, W)
        )
        p_uv_tok = [A.tokens_from_map(lv, mk).tokens for lv, mk in zip(p_uv.levels, p_uv.masks)]
        per_level = [[] for _ in model.widths]
        for v, emb in zip(views, view_embeds):
            hv, wv = v.mask.shape
            pv = E.encode_positions(
                emb, v.mask, model.pos, E.plan_levels(model.widths, hv, wv)
            )
            for k, (lv, mk) in enumerate(zip(pv.levels, pv.masks)):
                per_level[k].append(A.tokens_from_map(lv, mk).tokens)
        p_view_tok = [T.concat(ts, axis=0) for ts in per_level]

    f_view = None
    if use_ref:
        f_view = A.extract_view_features(views, model.extractor)

    tg = A.tokens_from_map(x, m16)
    for blk in model.blocks[0]:
        tg = A.parallel_block(
            tg, f_view.levels[0] if f_view is not None else None,
            p_uv_tok[0], p_view_tok[0], blk, diag, use_ref=use_ref, use_uv=use_uv,
        )
    h0 = A.map_from_tokens(tg)

    m8 = E.any_pool(m16, 2)
    w, b = model.down
    x = T.silu(T.mul_mask_hw(T.conv2d(h0, w, b, stride=2, pad=1), m8))
    tg1 = A.tokens_from_map(x, m8)
    for blk in model.blocks[1]:
        tg1 = A.parallel_block(
            tg1, f_view.levels[1] if f_view is not None else None,
            p_uv_tok[1], p_view_tok[1], blk, diag, use_ref=use_ref, use_uv=use_uv,
        )
    h1 = A.map_from_tokens(tg1)

    y = T.upsample_nearest(h1, 2)
    w, b = model.dec[0]
    y = T.silu(T.mul_mask_hw(T.conv2d(y, w, b, pad=1), m16))
    y = T.add(y, h0)
    for (w, b), m in zip(model.dec[1:], reversed(masks[:-1])):
        y = T.upsample_nearest(y, 2)
        y = T.silu(T.mul_mask_hw(T.conv2d(y, w, b, pad=1), m))

    y = T.concat([y, _geo_input(uv_geo, bp)], axis=0)
    w, b = model.head[0]
    y = T.conv2d(y, w, b, pad=1)
    skip = T.Tensor(uv_embed.data[E.embed_skip_channels(model.pos.bands)])
    y = T.add(y, T.conv2d(skip, model.head_skip[0]))
    y = T.silu(T.mul_mask_hw(y, uv_geo.mask))
    w, b = model.head[1]
    y = T.mul_mask_hw(T.conv2d(y, w, b), uv_geo.mask)
    return y


def masked_mse(pred, target, mask):
    """Mean squared error over covered texels; pred [3,H,W], target [H,W,3]."""
    tgt = np.ascontiguousarray(target.transpose(2, 0, 1), dtype=np.float32)
    tgt[:, ~mask] = 0.0
    d = T.mul_mask_hw(T.sub(pred, T.Tensor(tgt)), mask)
    n = 3 * int(mask.sum())
    return T.scale(T.tsum(T.mul(d, d)), 1.0 / n)
