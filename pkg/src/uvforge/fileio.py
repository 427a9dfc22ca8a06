"""Artifact I/O: PFM float maps, PNG previews, flat-binary weight files.

All writers go through an atomic temp-file + rename so a killed run never
leaves a truncated artifact behind. PFM follows the common convention:
little-endian (negative scale), rows stored bottom-up.
"""

import hashlib
import json
import os
import struct
import tempfile

import numpy as np
from PIL import Image

from .errors import ParseError

WEIGHTS_MAGIC = b"UVFB"
WEIGHTS_VERSION = 1


def atomic_write_bytes(path, payload):
    path = os.fspath(path)
    d = os.path.dirname(path) or "."
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp_", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# ---------------------------------------------------------------------------
# PFM


def write_pfm(path, img):
    """1- or 3-channel float map. Rows flipped so row 0 ends up on top when read back."""
    img = np.asarray(img, dtype=np.float32)
    if img.ndim == 2:
        header = b"Pf"
    elif img.ndim == 3 and img.shape[2] == 3:
        header = b"PF"
    else:
        raise ParseError(f"pfm wants HxW or HxWx3, got {img.shape}")
    h, w = img.shape[:2]
    body = np.flipud(img).astype("<f4").tobytes()
    atomic_write_bytes(path, b"%s\n%d %d\n-1.0\n" % (header, w, h) + body)


def read_pfm(path):
    with open(path, "rb") as f:
        raw = f.read()

    def token(buf, start):
        while start < len(buf) and buf[start : start + 1].isspace():
            start += 1
        end = start
        while end < len(buf) and not buf[end : end + 1].isspace():
            end += 1
        if start == end:
            raise ParseError(f"{path}: truncated pfm header")
        return buf[start:end], end

    kind, pos = token(raw, 0)
    if kind not in (b"PF", b"Pf"):
        raise ParseError(f"{path}: not a pfm file (header {kind!r})")
    try:
        wtok, pos = token(raw, pos)
        htok, pos = token(raw, pos)
        stok, pos = token(raw, pos)
        w, h, scale = int(wtok), int(htok), float(stok)
    except ValueError as e:
        raise ParseError(f"{path}: bad pfm header: {e}") from None
    channels = 3 if kind == b"PF" else 1
    data = raw[pos + 1 :]
    need = w * h * channels * 4
    if len(data) < need:
        raise ParseError(f"{path}: pfm payload short ({len(data)} < {need} bytes)")
    dt = "<f4" if scale < 0 else ">f4"
    img = np.frombuffer(data[:need], dtype=dt).reshape(h, w, channels).astype(np.float32)
    if channels == 1:
        img = img[..., 0]
    return np.flipud(img).copy()


# ---------------------------------------------------------------------------
# PNG previews


def write_png(path, img):
    """[0,1] float (HxW or HxWx3) to 8-bit png."""
    img = np.asarray(img, dtype=np.float32)
    u8 = (np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    im = Image.fromarray(u8, mode="L" if u8.ndim == 2 else "RGB")
    import io

    buf = io.BytesIO()
    im.save(buf, format="PNG")
    atomic_write_bytes(path, buf.getvalue())


def read_png(path):
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB") if im.mode not in ("L", "RGB") else im)
    return arr.astype(np.float32) / 255.0


# ---------------------------------------------------------------------------
# flat-binary weights: magic, version, count, then per entry
#   u16 name length, utf-8 name, u8 ndim, u32 dims..., f32 payload


def save_weights(path, named_arrays):
    """named_arrays: mapping name -> ndarray. Order preserved on load."""
    out = [WEIGHTS_MAGIC, struct.pack("<II", WEIGHTS_VERSION, len(named_arrays))]
    for name, arr in named_arrays.items():
        arr = np.asarray(arr, dtype=np.float32)
        nb = name.encode("utf-8")
        out.append(struct.pack("<H", len(nb)))
        out.append(nb)
        out.append(struct.pack("<B", arr.ndim))
        out.append(struct.pack("<%dI" % arr.ndim, *arr.shape))
        out.append(arr.tobytes())
    atomic_write_bytes(path, b"".join(out))


def load_weights(path):
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != WEIGHTS_MAGIC:
        raise ParseError(f"{path}: bad magic {raw[:4]!r}")
    version, count = struct.unpack_from("<II", raw, 4)
    if version != WEIGHTS_VERSION:
        raise ParseError(f"{path}: unsupported weights version {version}")
    pos = 12
    out = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", raw, pos)
            pos += 2
            name = raw[pos : pos + nlen].decode("utf-8")
            pos += nlen
            (ndim,) = struct.unpack_from("<B", raw, pos)
            pos += 1
            shape = struct.unpack_from("<%dI" % ndim, raw, pos)
            pos += 4 * ndim
            n = int(np.prod(shape, dtype=np.int64)) if ndim else 1
            arr = np.frombuffer(raw, dtype="<f4", count=n, offset=pos).reshape(shape)
            pos += 4 * n
            out[name] = arr.copy()
    except struct.error as e:
        raise ParseError(f"{path}: truncated weights file: {e}") from None
    if pos != len(raw):
        raise ParseError(f"{path}: {len(raw) - pos} trailing bytes")
    return out


# ---------------------------------------------------------------------------
# manifests


def write_manifest(out_dir, paths, extra=None):
    """Hash the given files (relative to out_dir) into manifest.json."""
    entries = {}
    for p in sorted(paths):
        entries[p] = sha256_file(os.path.join(out_dir, p))
    doc = {"files": entries}
    if extra:
        doc.update(extra)
    atomic_write_bytes(
        os.path.join(out_dir, "manifest.json"),
        json.dumps(doc, indent=2, sort_keys=True).encode() + b"\n",
    )
    return doc


def verify_manifest(out_dir):
    """Recheck every hash; returns the list of mismatched/missing files."""
    mpath = os.path.join(out_dir, "manifest.json")
    with open(mpath) as f:
        doc = json.load(f)
    bad = []
    for rel, digest in doc.get("files", {}).items():
        full = os.path.join(out_dir, rel)
        if not os.path.exists(full) or sha256_file(full) != digest:
            bad.append(rel)
    return bad
