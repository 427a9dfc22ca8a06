"""Software rasterization: UV-space baking and pinhole view rendering.

Both paths share one fill rule (strict interior, plus top and left edges),
so every sample point belongs to at most one triangle of a watertight
layout. Pixel-space y grows downward; a triangle is accepted when its
doubled signed area is positive, and front faces in camera space come out
negative under this convention, so view rendering flips the corner order
once per face.

Baking is a pure function of the mesh, texel centers are sampled at
(col + 0.5, row + 0.5), and texture row 0 sits at v = 1 (top of the image),
so uv (u, v) lands at pixel (x, y) = (u * W, (1 - v) * H).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, InvariantError
from .geometry import project_points

DEPTH_EPS_REL = 1e-3
NEAR_PLANE = 0.05


def _orient2d(ax, ay, bx, by, px, py):
    return (bx - ax) * (py - ay) - (by - ay) * (px - ax)


def _edge_accept(w, ax, ay, bx, by):
    """Fill rule for edge a->b of a positively oriented triangle."""
    dx, dy = bx - ax, by - ay
    top_left = (dy == 0) & (dx > 0) | (dy < 0)
    return (w > 0) | ((w == 0) & top_left)


def _cover_triangle(tri, height, width):
    """Pixels of a [3,2] pixel-space triangle covered under the fill rule.

    Returns (rows, cols, bary[k,3]) with barycentric weights ordered by the
    ORIGINAL corner order regardless of the triangle's orientation.
    """
    a2 = _orient2d(tri[0, 0], tri[0, 1], tri[1, 0], tri[1, 1], tri[2, 0], tri[2, 1])
    if a2 == 0.0:
        return None
    flipped = a2 < 0
    t = tri[[0, 2, 1]] if flipped else tri
    a2 = abs(a2)

    c0 = max(int(np.floor(t[:, 0].min() - 0.5)), 0)
    c1 = min(int(np.ceil(t[:, 0].max() - 0.5)), width - 1)
    r0 = max(int(np.floor(t[:, 1].min() - 0.5)), 0)
    r1 = min(int(np.ceil(t[:, 1].max() - 0.5)), height - 1)
    if c0 > c1 or r0 > r1:
        return None
    cols, rows = np.meshgrid(np.arange(c0, c1 + 1), np.arange(r0, r1 + 1))
    px = cols + 0.5
    py = rows + 0.5

    inside = np.ones(px.shape, dtype=bool)
    ws = []
    for a, b in ((1, 2), (2, 0), (0, 1)):
        w = _orient2d(t[a, 0], t[a, 1], t[b, 0], t[b, 1], px, py)
        inside &= _edge_accept(w, t[a, 0], t[a, 1], t[b, 0], t[b, 1])
        ws.append(w)
    if not inside.any():
        return None
    b0 = ws[0][inside] / a2
    b1 = ws[1][inside] / a2
    b2 = ws[2][inside] / a2
    if flipped:
        b1, b2 = b2, b1
    return rows[inside], cols[inside], np.stack([b0, b1, b2], axis=1)


def _uv_to_pixels(uv, height, width):
    pix = np.empty_like(uv)
    pix[..., 0] = uv[..., 0] * width
    pix[..., 1] = (1.0 - uv[..., 1]) * height
    return pix


def count_uv_claims(mesh, height, width):
    """How many UV triangles claim each texel; >1 anywhere means overlap."""
    claims = np.zeros((height, width), dtype=np.int16)
    tris = _uv_to_pixels(mesh.face_uvs(), height, width)
    for f in range(mesh.num_faces):
        hit = _cover_triangle(tris[f], height, width)
        if hit is not None:
            claims[hit[0], hit[1]] += 1
    return claims


@dataclass
class GeoMaps:
    """Per-texel geometry baked from the UV layout."""

    xyz: np.ndarray  # [H, W, 3] float64, zeros where uncovered
    normal: np.ndarray  # [H, W, 3] float64 unit, zeros where uncovered
    uv: np.ndarray  # [H, W, 2] float64
    face: np.ndarray  # [H, W] int32, -1 where uncovered
    bary: np.ndarray  # [H, W, 3] float64
    mask: np.ndarray  # [H, W] bool, texel center lies inside a UV triangle

    @property
    def shape(self):
        return self.mask.shape

    def coverage(self):
        return float(self.mask.mean())


def bake_uv(mesh, height, width):
    """Rasterize the UV charts and interpolate 3D position and normal.

    Deterministic: identical meshes give bitwise identical maps.
    """
    if height < 1 or width < 1:
        raise DimensionError(f"bake_uv: bad size {height}x{width}")
    xyz = np.zeros((height, width, 3))
    nrm = np.zeros((height, width, 3))
    uvm = np.zeros((height, width, 2))
    bary = np.zeros((height, width, 3))
    face = np.full((height, width), -1, dtype=np.int32)
    mask = np.zeros((height, width), dtype=bool)

    tris = _uv_to_pixels(mesh.face_uvs(), height, width)
    fpos = mesh.face_positions()
    fnrm = mesh.face_normals_smooth()
    fuv = mesh.face_uvs()
    for f in range(mesh.num_faces):
        hit = _cover_triangle(tris[f], height, width)
        if hit is None:
            continue
        r, c, b = hit
        taken = mask[r, c]
        if np.any(taken):
            raise InvariantError(f"bake_uv: face {f} overlaps an already baked texel")
        xyz[r, c] = b @ fpos[f]
        n = b @ fnrm[f]
        n /= np.linalg.norm(n, axis=1, keepdims=True)
        nrm[r, c] = n
        uvm[r, c] = b @ fuv[f]
        bary[r, c] = b
        face[r, c] = f
        mask[r, c] = True
    return GeoMaps(xyz, nrm, uvm, face, bary, mask)


@dataclass
class ViewMaps:
    """One rendered pinhole view plus its per-pixel geometry."""

    rgb: np.ndarray  # [H, W, 3] float32
    xyz: np.ndarray  # [H, W, 3] float64
    normal: np.ndarray  # [H, W, 3] float64
    uv: np.ndarray  # [H, W, 2] float64
    depth: np.ndarray  # [H, W] float64, +inf where empty
    face: np.ndarray  # [H, W] int32, -1 where empty
    mask: np.ndarray  # [H, W] bool

    @property
    def shape(self):
        return self.mask.shape


def sample_texture(texture, uv):
    """Bilinear texture lookup at uv points [N,2]; edges clamp."""
    h, w = texture.shape[:2]
    x = np.clip(uv[:, 0] * w - 0.5, 0.0, w - 1.0)
    y = np.clip((1.0 - uv[:, 1]) * h - 0.5, 0.0, h - 1.0)
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (x - x0)[:, None]
    fy = (y - y0)[:, None]
    t00 = texture[y0, x0]
    t01 = texture[y0, x1]
    t10 = texture[y1, x0]
    t11 = texture[y1, x1]
    top = t00 * (1 - fx) + t01 * fx
    bot = t10 * (1 - fx) + t11 * fx
    return top * (1 - fy) + bot * fy


def render_view(mesh, camera, texture=None):
    """Rasterize the mesh into the camera with a z-buffer.

    Back faces are culled, depth ties keep the lower face index, and all
    interpolation is perspective correct. With a texture the rgb channel is
    a bilinear lookup at the interpolated uv; otherwise it stays black.
    """
    H, W = camera.height, camera.width
    rgb = np.zeros((H, W, 3), dtype=np.float32)
    xyz = np.zeros((H, W, 3))
    nrm = np.zeros((H, W, 3))
    uvm = np.zeros((H, W, 2))
    depth = np.full((H, W), np.inf)
    face = np.full((H, W), -1, dtype=np.int32)
    mask = np.zeros((H, W), dtype=bool)

    fpos = mesh.face_positions()
    fnrm = mesh.face_normals_smooth()
    fuv = mesh.face_uvs()
    flat = fpos.reshape(-1, 3)
    pix_flat, z_flat = project_points(camera, flat)
    pix = pix_flat.reshape(-1, 3, 2)
    zc = z_flat.reshape(-1, 3)

    for f in range(mesh.num_faces):
        if np.any(zc[f] < NEAR_PLANE):
            continue
        t = pix[f]
        a2 = _orient2d(t[0, 0], t[0, 1], t[1, 0], t[1, 1], t[2, 0], t[2, 1])
        if a2 >= 0.0:  # back-facing or edge-on
            continue
        hit = _cover_triangle(t, H, W)
        if hit is None:
            continue
        r, c, b = hit
        inv_z = b @ (1.0 / zc[f])
        z = 1.0 / inv_z
        closer = z < depth[r, c]
        if not np.any(closer):
            continue
        r, c, b, z = r[closer], c[closer], b[closer], z[closer]
        pw = b / zc[f][None, :] * z[:, None]  # perspective-correct weights
        xyz[r, c] = pw @ fpos[f]
        n = pw @ fnrm[f]
        n /= np.linalg.norm(n, axis=1, keepdims=True)
        nrm[r, c] = n
        uvm[r, c] = pw @ fuv[f]
        depth[r, c] = z
        face[r, c] = f
        mask[r, c] = True
    if texture is not None:
        covered = mask.reshape(-1)
        samp = sample_texture(np.asarray(texture, dtype=np.float32), uvm.reshape(-1, 2)[covered])
        out = rgb.reshape(-1, 3)
        out[covered] = samp
        rgb = out.reshape(H, W, 3)
    return ViewMaps(rgb, xyz, nrm, uvm, depth, face, mask)


def project_texels(geo, camera):
    """Project covered texel centers into one view.

    Returns (rows [H,W], cols [H,W], z [H,W], inb [H,W]) where inb marks
    texels that project in front of the camera and inside the image.
    """
    H, W = geo.shape
    pts = geo.xyz.reshape(-1, 3)
    pix, z = project_points(camera, pts)
    col = np.floor(pix[:, 0]).astype(np.int64)
    row = np.floor(pix[:, 1]).astype(np.int64)
    inb = (
        (z > NEAR_PLANE)
        & (col >= 0) & (col < camera.width)
        & (row >= 0) & (row < camera.height)
        & geo.mask.reshape(-1)
    )
    col = np.clip(col, 0, camera.width - 1)
    row = np.clip(row, 0, camera.height - 1)
    return (
        row.reshape(H, W),
        col.reshape(H, W),
        z.reshape(H, W),
        inb.reshape(H, W),
    )


def compute_visibility(geo, views, cameras, depth_eps_rel=DEPTH_EPS_REL):
    """Per-view texel visibility by projecting texel centers into each view.

    A texel is visible in a view when it projects inside the image onto a
    covered pixel and its camera depth is within (1 + depth_eps_rel) of the
    z-buffer value there.
    """
    if len(views) != len(cameras):
        raise DimensionError("compute_visibility: views and cameras differ in length")
    H, W = geo.shape
    vis = np.zeros((len(views), H, W), dtype=bool)
    for i, (view, cam) in enumerate(zip(views, cameras)):
        row, col, z, inb = project_texels(geo, cam)
        buf = view.depth[row, col]
        ok = inb & view.mask[row, col] & (z <= buf * (1.0 + depth_eps_rel))
        vis[i] = ok
    return vis


def occlusion_mask(vis):
    """Texels seen by no view at all (uncovered texels included)."""
    return ~np.any(vis, axis=0)


def texel_world_extent(mesh, geo):
    """Per-texel edge length of the surface patch one texel covers, in world
    units; zero where uncovered."""
    H, W = geo.shape
    area3 = mesh.face_areas_3d()
    areau = np.abs(mesh.face_areas_uv()) * (H * W)
    ratio = np.sqrt(area3 / np.maximum(areau, 1e-18))
    out = np.zeros((H, W))
    m = geo.mask
    out[m] = ratio[geo.face[m]]
    return out


def view_pixel_extent(camera, z, cos_incidence):
    """World-space footprint of one view pixel on the surface it sees.

    Grows with depth and with grazing incidence; the incidence term is
    clamped so silhouette pixels do not explode to infinity.
    """
    return (np.asarray(z) / camera.fx) / np.maximum(np.asarray(cos_incidence), 0.05)


CORRUPT_MODES = ("noise", "color_shift", "patch_swap")


def corrupt_view(view_rgb, view_mask, mode, strength, rng):
    """Damage one view image; returns (new rgb, mask of affected pixels).

    noise adds per-pixel gaussians, color_shift adds one random color to the
    whole covered region, patch_swap exchanges two square blocks (the
    closest analogue of content being redrawn wrongly).
    """
    if mode not in CORRUPT_MODES:
        raise InvariantError(f"unknown corruption '{mode}', choose from {CORRUPT_MODES}")
    s = float(strength)
    if not (0.0 < s <= 1.0):
        raise InvariantError(f"corruption strength must be in (0, 1], got {s}")
    H, W = view_rgb.shape[:2]
    out = np.array(view_rgb, copy=True)
    affected = np.zeros((H, W), dtype=bool)
    if mode == "noise":
        noisy = out + s * rng.standard_normal(out.shape).astype(out.dtype)
        out[view_mask] = noisy[view_mask]
        affected |= view_mask
    elif mode == "color_shift":
        shift = s * rng.uniform(-1.0, 1.0, size=3).astype(out.dtype)
        out[view_mask] += shift
        affected |= view_mask
    else:  # patch_swap
        size = max(4, int(round(s * min(H, W))))
        size = min(size, min(H, W) // 2)
        r0, r1 = rng.integers(0, H - size + 1, size=2)
        c0, c1 = rng.integers(0, W - size + 1, size=2)
        a = out[r0 : r0 + size, c0 : c0 + size].copy()
        b = out[r1 : r1 + size, c1 : c1 + size].copy()
        out[r0 : r0 + size, c0 : c0 + size] = b
        out[r1 : r1 + size, c1 : c1 + size] = a
        affected[r0 : r0 + size, c0 : c0 + size] = True
        affected[r1 : r1 + size, c1 : c1 + size] = True
    np.clip(out, 0.0, 1.0, out=out)
    return out, affected
