"""Triangle meshes with explicit UV charts, procedural scenes, and cameras.

A mesh keeps three attribute pools (positions, uvs, normals) with one index
triple per face corner, OBJ style, so a position vertex can carry several UV
coordinates across chart seams. All geometry is float64; rendering downcasts
at the end.

Coordinate convention, used everywhere: world is right-handed with +Y up;
cameras look down their -Z axis with +X right and +Y up, and image rows grow
downward from the top. Scenes are built inside the cube [-1, 1]^3 around the
origin. Planar scenes face +X so the first rig camera sees them head on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, InvariantError, ParseError


@dataclass
class TriMesh:
    """Indexed triangle mesh; faces_* hold per-corner indices into the pools."""

    positions: np.ndarray  # [P, 3] float64
    uvs: np.ndarray  # [T, 2] float64, inside [0, 1]^2
    normals: np.ndarray  # [N, 3] float64, unit length
    faces_pos: np.ndarray  # [F, 3] int64
    faces_uv: np.ndarray  # [F, 3] int64
    faces_nrm: np.ndarray  # [F, 3] int64

    def __post_init__(self):
        self.positions = np.ascontiguousarray(self.positions, dtype=np.float64)
        self.uvs = np.ascontiguousarray(self.uvs, dtype=np.float64)
        self.normals = np.ascontiguousarray(self.normals, dtype=np.float64)
        self.faces_pos = np.ascontiguousarray(self.faces_pos, dtype=np.int64)
        self.faces_uv = np.ascontiguousarray(self.faces_uv, dtype=np.int64)
        self.faces_nrm = np.ascontiguousarray(self.faces_nrm, dtype=np.int64)

    @property
    def num_faces(self):
        return self.faces_pos.shape[0]

    def face_positions(self):
        """[F, 3, 3] corner positions."""
        return self.positions[self.faces_pos]

    def face_uvs(self):
        """[F, 3, 2] corner uvs."""
        return self.uvs[self.faces_uv]

    def face_normals_smooth(self):
        """[F, 3, 3] per-corner normals from the normal pool."""
        return self.normals[self.faces_nrm]

    def face_areas_3d(self):
        p = self.face_positions()
        cr = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        return 0.5 * np.linalg.norm(cr, axis=1)

    def face_areas_uv(self):
        """Signed UV-space areas (sign encodes chart orientation)."""
        t = self.face_uvs()
        e1 = t[:, 1] - t[:, 0]
        e2 = t[:, 2] - t[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])


def euler_characteristic(mesh):
    """V - E + F over the welded position graph (2 for closed genus-0)."""
    f = mesh.faces_pos
    v = len(np.unique(f))
    edges = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]], axis=0)
    edges = np.sort(edges, axis=1)
    e = len(np.unique(edges, axis=0))
    return v - e + f.shape[0]


def validate_mesh(mesh, check_chart_overlap=True):
    """Raise InvariantError / DimensionError on any broken mesh invariant.

    Checks index ranges, finiteness, unit normals, uvs inside [0,1]^2,
    non-degenerate faces in both 3D and UV, and (optionally) that no two UV
    triangles claim the same texel under the rasterizer fill rule.
    """
    for name, faces, pool in (
        ("faces_pos", mesh.faces_pos, mesh.positions),
        ("faces_uv", mesh.faces_uv, mesh.uvs),
        ("faces_nrm", mesh.faces_nrm, mesh.normals),
    ):
        if faces.shape != (mesh.num_faces, 3):
            raise DimensionError(f"{name}: expected [F,3], got {faces.shape}")
        if faces.size and (faces.min() < 0 or faces.max() >= len(pool)):
            raise InvariantError(f"{name}: index out of range for pool of {len(pool)}")
    for name, pool in (
        ("positions", mesh.positions),
        ("uvs", mesh.uvs),
        ("normals", mesh.normals),
    ):
        if not np.all(np.isfinite(pool)):
            raise InvariantError(f"{name}: non-finite entries")
    lengths = np.linalg.norm(mesh.normals, axis=1)
    if np.any(np.abs(lengths - 1.0) > 1e-4):
        raise InvariantError("normals: not unit length")
    if mesh.uvs.size and (mesh.uvs.min() < -1e-6 or mesh.uvs.max() > 1 + 1e-6):
        raise InvariantError("uvs: outside [0,1]^2")
    if np.any(mesh.face_areas_3d() < 1e-12):
        raise InvariantError("degenerate face in 3D")
    if np.any(np.abs(mesh.face_areas_uv()) < 1e-12):
        raise InvariantError("degenerate face in UV")
    if check_chart_overlap:
        from .raster import count_uv_claims

        claims = count_uv_claims(mesh, 256, 256)
        if np.any(claims > 1):
            n = int((claims > 1).sum())
            raise InvariantError(f"UV charts overlap: {n} texels claimed twice at 256x256")


# ---------------------------------------------------------------------------
# OBJ subset I/O (v / vt / vn / f; polygon faces are fan-triangulated)


def save_mesh(mesh, path):
    """Write the mesh as OBJ; %.17g keeps float64 round-trips bitwise."""
    lines = []
    for p in mesh.positions:
        lines.append(f"v {p[0]:.17g} {p[1]:.17g} {p[2]:.17g}")
    for t in mesh.uvs:
        lines.append(f"vt {t[0]:.17g} {t[1]:.17g}")
    for n in mesh.normals:
        lines.append(f"vn {n[0]:.17g} {n[1]:.17g} {n[2]:.17g}")
    fp, ft, fn = mesh.faces_pos + 1, mesh.faces_uv + 1, mesh.faces_nrm + 1
    for i in range(mesh.num_faces):
        corners = " ".join(f"{fp[i, k]}/{ft[i, k]}/{fn[i, k]}" for k in range(3))
        lines.append(f"f {corners}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _parse_face_corner(token, counts, lineno, path):
    """One 'v/vt[/vn]' face token -> (pos, uv, nrm) 0-based; nrm may be None."""
    fields = token.split("/")
    if len(fields) < 2 or len(fields) > 3 or fields[0] == "" or fields[1] == "":
        raise ParseError(f"{path}:{lineno}: face corners must be v/vt or v/vt/vn")
    out = []
    for field, count, what in zip(fields, counts, ("vertex", "uv", "normal")):
        if field == "":
            out.append(None)
            continue
        idx = int(field)
        if idx < 0:  # negative OBJ indices count from the end
            idx = count + idx
        else:
            idx = idx - 1
        if idx < 0 or idx >= count:
            raise ParseError(f"{path}:{lineno}: {what} index {field} out of range (have {count})")
        out.append(idx)
    while len(out) < 3:
        out.append(None)
    return out


def _vertex_normals(positions, faces_pos):
    """Area-weighted vertex normals over the welded position graph."""
    p = positions[faces_pos]
    fn = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])  # length = 2x area
    acc = np.zeros_like(positions)
    for k in range(3):
        np.add.at(acc, faces_pos[:, k], fn)
    lens = np.linalg.norm(acc, axis=1, keepdims=True)
    if np.any(lens < 1e-15):
        raise InvariantError("vertex normal vanished; mesh is locally degenerate")
    return acc / lens


def load_mesh(path, format="obj"):
    """Parse the OBJ subset; ParseError carries the offending line number.

    Faces need v/vt at least; polygons are fan-triangulated. When any face
    omits its normal index the whole normal pool is replaced by computed
    area-weighted vertex normals.
    """
    if format != "obj":
        raise ParseError(f"unsupported mesh format '{format}'")
    positions, uvs, normals = [], [], []
    fpos, fuv, fnrm = [], [], []
    missing_normals = False
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            tag, args = parts[0], parts[1:]
            try:
                if tag == "v":
                    if len(args) != 3:
                        raise ValueError("need 3 coordinates")
                    positions.append([float(a) for a in args])
                elif tag == "vt":
                    if len(args) != 2:
                        raise ValueError("need 2 coordinates")
                    uvs.append([float(a) for a in args])
                elif tag == "vn":
                    if len(args) != 3:
                        raise ValueError("need 3 coordinates")
                    normals.append([float(a) for a in args])
                elif tag == "f":
                    if len(args) < 3:
                        raise ValueError("face needs at least 3 corners")
                    counts = (len(positions), len(uvs), len(normals))
                    corners = [_parse_face_corner(t, counts, lineno, path) for t in args]
                    for k in range(1, len(corners) - 1):
                        tri = [corners[0], corners[k], corners[k + 1]]
                        fpos.append([c[0] for c in tri])
                        fuv.append([c[1] for c in tri])
                        if any(c[2] is None for c in tri):
                            missing_normals = True
                            fnrm.append([0, 0, 0])
                        else:
                            fnrm.append([c[2] for c in tri])
                # unknown tags are ignored, matching common writers
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from exc
    if not fpos:
        raise ParseError(f"{path}: no faces found")
    positions = np.array(positions, dtype=np.float64)
    fpos = np.array(fpos)
    if missing_normals or not normals:
        normals = _vertex_normals(positions, fpos)
        fnrm = fpos.copy()
    else:
        normals = np.array(normals, dtype=np.float64)
        fnrm = np.array(fnrm)
    return TriMesh(
        positions,
        np.array(uvs, dtype=np.float64),
        normals,
        fpos,
        np.array(fuv),
        fnrm,
    )


# ---------------------------------------------------------------------------
# procedural scenes


def _island(x0_32, y0_32, w_32, h_32):
    """Axis-aligned UV rectangle on the 1/32 grid, corners CCW from (x0, y0)."""
    x0, y0 = x0_32 / 32.0, y0_32 / 32.0
    x1, y1 = (x0_32 + w_32) / 32.0, (y0_32 + h_32) / 32.0
    return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]])


def _quad_faces(p_idx, t_idx, n_idx):
    """Split one CCW quad (4 corner indices per pool) into two triangles."""
    fp = [[p_idx[0], p_idx[1], p_idx[2]], [p_idx[0], p_idx[2], p_idx[3]]]
    ft = [[t_idx[0], t_idx[1], t_idx[2]], [t_idx[0], t_idx[2], t_idx[3]]]
    fn = [[n_idx[0], n_idx[1], n_idx[2]], [n_idx[0], n_idx[2], n_idx[3]]]
    return fp, ft, fn


def _facing_x_quad(x, half_y, half_z):
    """Corners of a +X-facing rectangle at plane x, CCW seen from +X.

    The UV convention for these corners is u -> (0,0),(1,0),(1,1),(0,1):
    u grows toward -z (rightward for the azimuth-0 camera), v grows with +y.
    """
    return np.array(
        [
            [x, -half_y, half_z],
            [x, -half_y, -half_z],
            [x, half_y, -half_z],
            [x, half_y, half_z],
        ]
    )


def _make_quad(half_extent=0.55):
    """Single square facing +X; UV covers all of [0,1]^2."""
    a = float(half_extent)
    positions = _facing_x_quad(0.0, a, a)
    uvs = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    normals = np.array([[1.0, 0.0, 0.0]])
    fp, ft, fn = _quad_faces([0, 1, 2, 3], [0, 1, 2, 3], [0, 0, 0, 0])
    return TriMesh(positions, uvs, normals, np.array(fp), np.array(ft), np.array(fn))


_CUBE_FACES = (
    # outward CCW corner lists; orientation is pinned by tests
    ((1, 0, 0), [(1, -1, -1), (1, 1, -1), (1, 1, 1), (1, -1, 1)]),
    ((-1, 0, 0), [(-1, 1, -1), (-1, -1, -1), (-1, -1, 1), (-1, 1, 1)]),
    ((0, 1, 0), [(1, 1, -1), (-1, 1, -1), (-1, 1, 1), (1, 1, 1)]),
    ((0, -1, 0), [(-1, -1, -1), (1, -1, -1), (1, -1, 1), (-1, -1, 1)]),
    ((0, 0, 1), [(-1, -1, 1), (1, -1, 1), (1, 1, 1), (-1, 1, 1)]),
    ((0, 0, -1), [(-1, 1, -1), (1, 1, -1), (1, -1, -1), (-1, -1, -1)]),
)

_CUBE_ISLANDS = ((1, 1), (11, 1), (21, 1), (1, 11), (11, 11), (21, 11))


def _make_cube6chart(half_extent=0.5):
    """Axis-aligned cube, six separate 0.25 x 0.25 UV islands (area 0.375)."""
    s = float(half_extent)
    corner_index = {}
    positions = []
    for sx in (-1, 1):
        for sy in (-1, 1):
            for sz in (-1, 1):
                corner_index[(sx, sy, sz)] = len(positions)
                positions.append([sx * s, sy * s, sz * s])
    uvs, normals, fp, ft, fn = [], [], [], [], []
    for k, (normal, corners) in enumerate(_CUBE_FACES):
        t0 = len(uvs)
        uvs.extend(_island(*_CUBE_ISLANDS[k], 8, 8))
        normals.append(normal)
        p_idx = [corner_index[c] for c in corners]
        a, b, c = _quad_faces(p_idx, [t0, t0 + 1, t0 + 2, t0 + 3], [k] * 4)
        fp += a
        ft += b
        fn += c
    return TriMesh(
        np.array(positions, dtype=np.float64),
        np.array(uvs, dtype=np.float64),
        np.array(normals, dtype=np.float64),
        np.array(fp),
        np.array(ft),
        np.array(fn),
    )


def _make_uvsphere(radius=0.55, n_az=32, n_el=16):
    """Latitude/longitude sphere (poles on +Y) with an equirectangular chart.

    Ring vertices are welded in 3D but the chart has a duplicated seam
    column (u=0 and u=1) and one UV apex per pole fan triangle, so the UV
    pool is larger than the position pool.
    """
    if n_az < 3 or n_el < 3:
        raise InvariantError("uvsphere needs n_az >= 3 and n_el >= 3")
    r = float(radius)
    positions = [[0.0, r, 0.0]]
    for j in range(1, n_el):
        th = np.pi * j / n_el
        for i in range(n_az):
            ph = 2 * np.pi * i / n_az
            positions.append(
                [r * np.sin(th) * np.cos(ph), r * np.cos(th), -r * np.sin(th) * np.sin(ph)]
            )
    positions.append([0.0, -r, 0.0])
    positions = np.array(positions)
    south = len(positions) - 1
    normals = positions / r

    def ring(j, i):
        # position index of ring j (1..n_el-1), azimuth column i (wraps)
        return 1 + (j - 1) * n_az + (i % n_az)

    # uv pool: ring rows have n_az+1 columns (seam duplicated), pole rows n_az
    uvs = []
    ring_uv_start = {}
    for j in range(1, n_el):
        ring_uv_start[j] = len(uvs)
        v = 1.0 - j / n_el
        for i in range(n_az + 1):
            uvs.append([i / n_az, v])
    north_uv0 = len(uvs)
    for i in range(n_az):
        uvs.append([(i + 0.5) / n_az, 1.0])
    south_uv0 = len(uvs)
    for i in range(n_az):
        uvs.append([(i + 0.5) / n_az, 0.0])
    uvs = np.array(uvs)

    def ring_uv(j, i):
        return ring_uv_start[j] + i  # i in 0..n_az, no wrap

    fp, ft = [], []
    for i in range(n_az):
        fp.append([0, ring(1, i), ring(1, i + 1)])
        ft.append([north_uv0 + i, ring_uv(1, i), ring_uv(1, i + 1)])
    for j in range(1, n_el - 1):
        for i in range(n_az):
            a, b = ring(j, i), ring(j + 1, i)
            c, d = ring(j + 1, i + 1), ring(j, i + 1)
            au, bu = ring_uv(j, i), ring_uv(j + 1, i)
            cu, du = ring_uv(j + 1, i + 1), ring_uv(j, i + 1)
            fp += [[a, b, c], [a, c, d]]
            ft += [[au, bu, cu], [au, cu, du]]
    for i in range(n_az):
        fp.append([south, ring(n_el - 1, i + 1), ring(n_el - 1, i)])
        ft.append([south_uv0 + i, ring_uv(n_el - 1, i + 1), ring_uv(n_el - 1, i)])
    fp = np.array(fp)
    fn = fp.copy()  # smooth normals share the position indexing
    return TriMesh(positions, uvs, normals, fp, np.array(ft), fn)


def _make_two_plane_occluder(gap=0.12, bar_half_height=0.1, half_extent=0.6):
    """Background wall plus a full-width horizontal bar floating in front.

    Both face +X. The three front cameras of the default rig see the wall
    except for a y-band shadowed by the bar from every one of them; that
    band is the inpainting target. Wall chart left in UV, bar chart right.
    """
    a = float(half_extent)
    positions = np.concatenate(
        [
            _facing_x_quad(0.0, a, a),  # wall
            _facing_x_quad(float(gap), float(bar_half_height), a),  # bar
        ]
    )
    uvs = np.concatenate([_island(1, 1, 14, 30), _island(17, 1, 14, 6)])
    normals = np.array([[1.0, 0.0, 0.0]])
    fp, ft, fn = [], [], []
    a_, b_, c_ = _quad_faces([0, 1, 2, 3], [0, 1, 2, 3], [0] * 4)
    fp += a_
    ft += b_
    fn += c_
    a_, b_, c_ = _quad_faces([4, 5, 6, 7], [4, 5, 6, 7], [0] * 4)
    fp += a_
    ft += b_
    fn += c_
    return TriMesh(positions, uvs, normals, np.array(fp), np.array(ft), np.array(fn))


_SCENES = {
    "quad": _make_quad,
    "cube6chart": _make_cube6chart,
    "uvsphere": _make_uvsphere,
    "two_plane_occluder": _make_two_plane_occluder,
}


def make_procedural(kind, **params):
    """Build a named procedural scene; raises InvariantError on unknown kinds."""
    try:
        builder = _SCENES[kind]
    except KeyError:
        raise InvariantError(
            f"unknown procedural kind '{kind}', choose from {sorted(_SCENES)}"
        ) from None
    return builder(**params)


def scene_kinds():
    return sorted(_SCENES)


@dataclass
class SceneNorm:
    """Original AABB center and max half-extent recorded by normalize_scene."""

    center: np.ndarray  # [3]
    half_extent: float


def normalize_scene(mesh):
    """Recenter on the AABB center and scale so the max half-extent is 1.

    Returns (mesh, SceneNorm); the SceneNorm fields describe the original
    placement so positions can be mapped back.
    """
    lo = mesh.positions.min(axis=0)
    hi = mesh.positions.max(axis=0)
    center = 0.5 * (lo + hi)
    half = float(np.max(hi - lo)) * 0.5
    if half < 1e-12:
        raise InvariantError("normalize_scene: degenerate bounding box")
    out = TriMesh(
        (mesh.positions - center) / half,
        mesh.uvs,
        mesh.normals,
        mesh.faces_pos,
        mesh.faces_uv,
        mesh.faces_nrm,
    )
    return out, SceneNorm(center, half)


# ---------------------------------------------------------------------------
# cameras


@dataclass
class Camera:
    """Pinhole camera; rows of R are (right, up, back) in world space, so the
    camera looks down its -Z axis."""

    eye: np.ndarray  # [3]
    R: np.ndarray  # [3, 3] world -> camera rotation
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def forward(self):
        return -self.R[2]


def make_camera(eye, target, up=(0.0, 1.0, 0.0), fov_deg=55.0, width=96, height=96):
    """Look-at camera; horizontal field of view sets the focal length."""
    eye = np.asarray(eye, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    up = np.asarray(up, dtype=np.float64)
    fwd = target - eye
    n = np.linalg.norm(fwd)
    if n < 1e-12:
        raise InvariantError("camera eye coincides with target")
    fwd = fwd / n
    right = np.cross(fwd, up)
    n = np.linalg.norm(right)
    if n < 1e-9:
        raise InvariantError("camera forward is parallel to up")
    right = right / n
    cam_up = np.cross(right, fwd)
    R = np.stack([right, cam_up, -fwd])
    fx = (width / 2.0) / np.tan(np.deg2rad(fov_deg) / 2.0)
    return Camera(eye, R, fx, fx, width / 2.0, height / 2.0, int(width), int(height))


def fixed_rig(
    n_views=6,
    radius=2.5,
    elevation_deg=20.0,
    fov_deg=55.0,
    width=96,
    height=96,
    center=(0.0, 0.0, 0.0),
):
    """Ring of cameras at azimuths {0, 360/n, ...} looking at the center."""
    el = np.deg2rad(elevation_deg)
    center = np.asarray(center, dtype=np.float64)
    cams = []
    for i in range(n_views):
        az = np.deg2rad(360.0 * i / n_views)
        eye = center + radius * np.array(
            [np.cos(el) * np.cos(az), np.sin(el), np.cos(el) * np.sin(az)]
        )
        cams.append(make_camera(eye, center, fov_deg=fov_deg, width=width, height=height))
    return cams


def project_points(camera, points):
    """World points [N,3] -> (pixel coords [N,2] as (u,v), forward depth [N]).

    u is the continuous column coordinate (column j's center is u = j + 0.5)
    and v the continuous row coordinate (row 0 at the top). Points behind
    the camera get depth <= 0 and meaningless pixel coordinates; callers
    must mask on depth.
    """
    points = np.asarray(points, dtype=np.float64)
    rel = points - camera.eye
    cam = rel @ camera.R.T
    depth = -cam[:, 2]
    safe = np.where(np.abs(depth) < 1e-12, 1e-12, depth)
    u = camera.fx * cam[:, 0] / safe + camera.cx
    v = camera.cy - camera.fy * cam[:, 1] / safe
    return np.stack([u, v], axis=1), depth


def frustum_margin_px(camera, points):
    """Smallest distance (in pixels) from any projected point to the image
    border; negative when something falls outside or behind the camera."""
    pix, depth = project_points(camera, points)
    if np.any(depth <= 0):
        return -np.inf
    du = np.minimum(pix[:, 0], camera.width - pix[:, 0])
    dv = np.minimum(pix[:, 1], camera.height - pix[:, 1])
    return float(np.minimum(du, dv).min())


def aabb_corners(points):
    """[8,3] corners of the axis-aligned bounding box of a point set."""
    lo = points.min(axis=0)
    hi = points.max(axis=0)
    return np.array(
        [[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])]
    )


# ---------------------------------------------------------------------------
# barycentric interpolation and ray casting


def barycentric_query(mesh, face_idx, bary):
    """Barycentric (position, normal, uv) on one face; normal re-normalized.

    bary may be [3] or [M, 3]; weights must be non-negative and sum to 1.
    """
    bary = np.asarray(bary, dtype=np.float64)
    single = bary.ndim == 1
    b = bary[None] if single else bary
    if b.shape[-1] != 3:
        raise DimensionError("barycentric weights must have 3 components")
    if np.any(b < -1e-9) or np.any(np.abs(b.sum(axis=-1) - 1.0) > 1e-9):
        raise InvariantError("barycentric weights must be a convex combination")
    p = mesh.positions[mesh.faces_pos[face_idx]]  # [3,3]
    t = mesh.uvs[mesh.faces_uv[face_idx]]
    n = mesh.normals[mesh.faces_nrm[face_idx]]
    pos = b @ p
    uv = b @ t
    nrm = b @ n
    lens = np.linalg.norm(nrm, axis=-1, keepdims=True)
    if np.any(lens < 1e-12):
        raise InvariantError("interpolated normal vanished")
    nrm = nrm / lens
    if single:
        return pos[0], nrm[0], uv[0]
    return pos, nrm, uv


def ray_mesh_intersect(mesh, origin, direction, t_min=1e-9):
    """Nearest intersection of one ray with the mesh (both triangle sides).

    Returns (t, face_idx, bary[3]) or None. Watertight enough for the desk
    scenes; shared-edge misses are guarded by the callers' epsilons.
    """
    origin = np.asarray(origin, dtype=np.float64)
    direction = np.asarray(direction, dtype=np.float64)
    p = mesh.face_positions()
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    pvec = np.cross(direction, e2)
    det = np.einsum("fi,fi->f", e1, pvec)
    ok = np.abs(det) > 1e-12
    inv = np.where(ok, det, 1.0)
    tvec = origin - p[:, 0]
    u = np.einsum("fi,fi->f", tvec, pvec) / inv
    qvec = np.cross(tvec, e1)
    v = np.einsum("i,fi->f", direction, qvec) / inv
    t = np.einsum("fi,fi->f", e2, qvec) / inv
    eps = 1e-9
    hit = ok & (u >= -eps) & (v >= -eps) & (u + v <= 1 + eps) & (t > t_min)
    if not np.any(hit):
        return None
    idx = np.where(hit)[0]
    best = idx[np.argmin(t[idx])]
    bu, bv = u[best], v[best]
    return float(t[best]), int(best), np.array([1.0 - bu - bv, bu, bv])
