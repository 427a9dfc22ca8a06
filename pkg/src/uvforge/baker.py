"""Classical texture baking: back-project view colors into the UV atlas.

This is the comparison baseline. Each texel is the visibility-gated,
angle-weighted average of the view pixels it projects to; disagreeing views
show up in a conflict map, and texels no camera sees get a nearest-neighbor
fill restricted to their own UV island so color never bleeds across charts.
"""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import geometry as G

CONFLICT_THRESHOLD = 0.05
DEFAULT_POWER = 4


@dataclass
class BakeResult:
    texture: np.ndarray  # [H,W,3] float32
    weight_sum: np.ndarray  # [H,W] float32, 0 where no view contributed
    conflict_map: np.ndarray  # [H,W] bool, contributing views disagree
    filled_mask: np.ndarray  # [H,W] bool, colored by inpainting only
    view_colors: np.ndarray  # [N,H,W,3] per-view sampled colors
    view_has: np.ndarray  # [N,H,W] bool


def _bilinear_pixels(img, mask, px, py):
    """Sample img at continuous pixel coords, renormalizing by coverage.

    Taps that land on uncovered pixels are dropped from the average instead
    of mixing background zeros into silhouette texels. Returns (colors,
    coverage weight in [0,1]).
    """
    H, W = mask.shape
    x = px - 0.5
    y = py - 0.5
    x0 = np.floor(x).astype(int)
    y0 = np.floor(y).astype(int)
    fx = x - x0
    fy = y - y0
    acc = np.zeros((len(px), img.shape[-1]))
    wacc = np.zeros(len(px))
    for dy in (0, 1):
        for dx in (0, 1):
            xi = np.clip(x0 + dx, 0, W - 1)
            yi = np.clip(y0 + dy, 0, H - 1)
            w = (fx if dx else 1 - fx) * (fy if dy else 1 - fy)
            m = mask[yi, xi]
            acc += (w * m)[:, None] * img[yi, xi]
            wacc += w * m
    ok = wacc > 1e-3
    out = np.zeros_like(acc)
    out[ok] = acc[ok] / wacc[ok, None]
    return out, wacc


def backproject_bake(uv_geo, views, cameras, vis, power=DEFAULT_POWER,
                     conflict_threshold=CONFLICT_THRESHOLD):
    H, W = uv_geo.mask.shape
    n = len(views)
    sel = uv_geo.mask
    p = uv_geo.xyz[sel]
    nrm = uv_geo.normal[sel]

    view_colors = np.zeros((n, H, W, 3), dtype=np.float32)
    view_has = np.zeros((n, H, W), dtype=bool)
    acc = np.zeros((H, W, 3))
    wsum = np.zeros((H, W))
    for v, (view, cam) in enumerate(zip(views, cameras)):
        usable = vis[v][sel]
        if not usable.any():
            continue
        pix, _ = G.project_points(cam, p[usable])
        colors, covw = _bilinear_pixels(view.rgb, view.mask, pix[:, 0], pix[:, 1])
        to_cam = cam.eye - p[usable]
        to_cam /= np.linalg.norm(to_cam, axis=1, keepdims=True)
        w = np.maximum(0.0, (nrm[usable] * to_cam).sum(1)) ** power
        ok = (covw > 1e-3) & (w > 0)
        rows, cols = np.nonzero(sel)
        r, c = rows[usable][ok], cols[usable][ok]
        view_colors[v, r, c] = colors[ok]
        view_has[v, r, c] = True
        acc[r, c] += w[ok, None] * colors[ok]
        wsum[r, c] += w[ok]

    texture = np.zeros((H, W, 3), dtype=np.float32)
    covered = wsum > 0
    texture[covered] = (acc[covered] / wsum[covered, None]).astype(np.float32)
    conflicts = detect_conflicts(view_colors, view_has, conflict_threshold)
    return BakeResult(
        texture=texture,
        weight_sum=wsum.astype(np.float32),
        conflict_map=conflicts,
        filled_mask=np.zeros((H, W), dtype=bool),
        view_colors=view_colors,
        view_has=view_has,
    )


def detect_conflicts(view_colors, view_has, threshold=CONFLICT_THRESHOLD):
    """Texels where the max pairwise color distance between views exceeds
    the threshold. Only texels with two or more contributions can conflict."""
    n = view_has.shape[0]
    conflict = np.zeros(view_has.shape[1:], dtype=bool)
    for i in range(n):
        for j in range(i + 1, n):
            both = view_has[i] & view_has[j]
            if not both.any():
                continue
            d = np.linalg.norm(view_colors[i][both] - view_colors[j][both], axis=-1)
            sub = conflict[both]
            sub |= d > threshold
            conflict[both] = sub
    return conflict


def face_islands(mesh):
    """Connected components of faces under shared UV indices."""
    parent = list(range(mesh.uvs.shape[0]))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for tri in mesh.faces_uv:
        r = find(int(tri[0]))
        for v in tri[1:]:
            parent[find(int(v))] = r
    roots = {}
    out = np.empty(len(mesh.faces_uv), dtype=np.int64)
    for f, tri in enumerate(mesh.faces_uv):
        r = find(int(tri[0]))
        out[f] = roots.setdefault(r, len(roots))
    return out


def naive_fill(result, uv_geo, mesh):
    """Give zero-weight covered texels the color of the nearest colored texel
    in the same UV island (plain nearest, no blending). Returns a new result."""
    has = result.weight_sum > 0
    holes = uv_geo.mask & ~has
    texture = result.texture.copy()
    filled = result.filled_mask.copy()
    if holes.any():
        islands = face_islands(mesh)
        texel_island = np.where(uv_geo.mask, islands[uv_geo.face], -1)
        for isl in np.unique(texel_island[holes]):
            known = has & (texel_island == isl)
            if not known.any():
                continue  # island never seen; leave it for the report to flag
            _, (ir, ic) = ndimage.distance_transform_edt(~known, return_indices=True)
            target = holes & (texel_island == isl)
            texture[target] = texture[ir[target], ic[target]]
            filled[target] = True
    return BakeResult(
        texture=texture,
        weight_sum=result.weight_sum,
        conflict_map=result.conflict_map,
        filled_mask=filled,
        view_colors=result.view_colors,
        view_has=result.view_has,
    )
