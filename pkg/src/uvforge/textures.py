"""Procedural ground-truth textures, defined as functions of surface geometry.

Each family maps baked geometry maps (uv, normalized xyz) to an RGB texture.
Parameters are sampled separately from the evaluation so train/held-out splits
share families but never exact instances. Everything is deterministic given
the parameter dict, and uncovered texels are left at zero.

The smooth families (gradient3d, sinmix, stripes) are intentionally functions
of 3D position: texels hidden from every camera still have well-defined
colors that nearby visible surface determines, which is what makes
occlusion inpainting measurable at all.
"""

import numpy as np

from .errors import InvariantError

TEXTURE_KINDS = ("constant", "gradient3d", "sinmix", "stripes", "checker")


def sample_params(kind, rng):
    """Draw one random parameter set for the family."""
    if kind == "constant":
        return {"color": rng.uniform(0.15, 0.85, 3)}
    if kind == "gradient3d":
        return {
            "base": rng.uniform(0.35, 0.65, 3),
            "slopes": rng.uniform(-0.28, 0.28, (3, 3)),
        }
    if kind == "sinmix":
        k = rng.uniform(0.6, 2.2, (3, 3)) * rng.choice([-1.0, 1.0], (3, 3))
        return {
            "base": rng.uniform(0.4, 0.6, 3),
            "amp": rng.uniform(0.1, 0.3, 3),
            "freq": k,
            "phase": rng.uniform(0, 2 * np.pi, 3),
        }
    if kind == "stripes":
        d = rng.normal(size=3)
        return {
            "direction": d / np.linalg.norm(d),
            "freq": rng.uniform(1.0, 3.0),
            "phase": rng.uniform(0, 2 * np.pi),
            "lo": rng.uniform(0.1, 0.4, 3),
            "hi": rng.uniform(0.6, 0.9, 3),
        }
    if kind == "checker":
        return {
            "cells": int(rng.integers(4, 9)),
            "a": rng.uniform(0.0, 0.35, 3),
            "b": rng.uniform(0.65, 1.0, 3),
        }
    raise InvariantError(f"unknown texture kind {kind!r}, have {TEXTURE_KINDS}")


def bake_texture_map(geo, kind, params):
    """Evaluate the family on baked geometry -> HxWx3 float32 in [0,1]."""
    H, W = geo.mask.shape
    p = geo.xyz
    if kind == "constant":
        tex = np.broadcast_to(params["color"], (H, W, 3)).copy()
    elif kind == "gradient3d":
        tex = params["base"] + p @ np.asarray(params["slopes"]).T
    elif kind == "sinmix":
        phase = p @ np.asarray(params["freq"]).T + params["phase"]
        tex = params["base"] + params["amp"] * np.sin(phase)
    elif kind == "stripes":
        t = p @ np.asarray(params["direction"])
        s = 0.5 + 0.5 * np.sin(2 * np.pi * params["freq"] * t + params["phase"])
        lo, hi = np.asarray(params["lo"]), np.asarray(params["hi"])
        tex = lo + s[..., None] * (hi - lo)
    elif kind == "checker":
        n = params["cells"]
        iu = np.minimum((geo.uv[..., 0] * n).astype(int), n - 1)
        iv = np.minimum((geo.uv[..., 1] * n).astype(int), n - 1)
        sel = ((iu + iv) % 2).astype(bool)
        tex = np.where(sel[..., None], np.asarray(params["b"]), np.asarray(params["a"]))
    else:
        raise InvariantError(f"unknown texture kind {kind!r}, have {TEXTURE_KINDS}")
    tex = np.clip(tex, 0.0, 1.0).astype(np.float32)
    tex[~geo.mask] = 0.0
    return tex
