"""Checkpoint and image files.

Checkpoint layout (all integers little-endian)::

    b"DMPLUG1"            7-byte magic
    u64                   length of the metadata document in bytes
    JSON (utf-8)          schedule, network widths, sample shape, tensor manifest
    payload               float64 little-endian arrays in manifest order

Each manifest entry holds ``name``, ``shape``, ``offset`` and ``nbytes``
relative to the start of the payload; the entries tile the payload exactly.
"""

import json
import struct

import numpy as np

from .errors import FormatError
from .schedule import make_schedule
from .score import NeuralScore

__all__ = [
    "MAGIC", "save_checkpoint", "load_checkpoint",
    "save_pfm", "load_pfm", "save_pgm", "load_pgm", "save_image", "load_image",
]

MAGIC = b"DMPLUG1"
_F64 = np.dtype("<f8")


def save_checkpoint(path, net, schedule, extra=None):
    manifest, chunks, offset = [], [], 0
    for name in net.names():
        arr = np.ascontiguousarray(net.params[name].data, dtype=_F64)
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset,
                         "nbytes": arr.nbytes})
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    meta = {
        "format": 1,
        # betas are written as exact float64 hex strings so the round trip is bitwise
        "schedule": {"betas": [float(b).hex() for b in schedule.betas]},
        "widths": list(net.widths),
        "sample_shape": list(net.sample_shape),
        "T": net.T,
        "tensors": manifest,
        "extra": extra or {},
    }
    doc = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(doc)))
        fh.write(doc)
        for c in chunks:
            fh.write(c)


def load_checkpoint(path):
    """Return ``(net, schedule, extra)``; raises FormatError naming the bad offset."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:len(MAGIC)] != MAGIC:
        raise FormatError("bad magic, not a DMPLUG1 checkpoint", 0)
    pos = len(MAGIC)
    if len(blob) < pos + 8:
        raise FormatError("truncated metadata length", pos)
    (n,) = struct.unpack_from("<Q", blob, pos)
    pos += 8
    if len(blob) < pos + n:
        raise FormatError(f"metadata claims {n} bytes, file ends early", pos)
    try:
        meta = json.loads(blob[pos:pos + n].decode("utf-8"))
        schedule = make_schedule([float.fromhex(b) for b in meta["schedule"]["betas"]])
        widths = tuple(meta["widths"])
        shape = tuple(meta["sample_shape"])
        manifest = meta["tensors"]
    except (ValueError, KeyError, TypeError) as e:
        raise FormatError(f"unreadable metadata: {e}", pos) from None
    pos += n
    payload = memoryview(blob)[pos:]

    expected = 0
    params = {}
    for entry in manifest:
        off, nbytes = entry["offset"], entry["nbytes"]
        if off != expected:
            raise FormatError(f"tensor {entry['name']!r} does not start where the previous ended",
                              pos + off)
        count = int(np.prod(entry["shape"], dtype=np.int64))
        if nbytes != 8 * count:
            raise FormatError(f"tensor {entry['name']!r}: {nbytes} bytes for shape {entry['shape']}",
                              pos + off)
        if off + nbytes > len(payload):
            raise FormatError(f"payload truncated inside tensor {entry['name']!r}", pos + len(payload))
        params[entry["name"]] = np.frombuffer(payload[off:off + nbytes], dtype=_F64).reshape(
            entry["shape"]).astype(np.float64)
        expected = off + nbytes
    if expected != len(payload):
        raise FormatError(f"{len(payload) - expected} trailing bytes after last tensor", pos + expected)

    net = NeuralScore(shape, meta["T"], widths, params=params)
    want = {k: v.data.shape for k, v in NeuralScore(shape, meta["T"], widths).params.items()}
    got = {k: v.shape for k, v in params.items()}
    if want != got:
        raise FormatError("manifest does not match the network layout", pos)
    return net, schedule, meta.get("extra", {})


# --- images -----------------------------------------------------------------

def _as_image(x):
    x = np.asarray(getattr(x, "data", x), dtype=np.float64)
    if x.ndim != 2:
        raise FormatError(f"images must be 2-D, got shape {x.shape}", 0)
    return x


def save_pfm(path, x):
    """Grayscale PFM, little-endian float32, rows stored bottom to top."""
    x = _as_image(x)
    h, w = x.shape
    with open(path, "wb") as fh:
        fh.write(f"Pf\n{w} {h}\n-1.0\n".encode("ascii"))
        fh.write(np.ascontiguousarray(x[::-1], dtype="<f4").tobytes())


def _read_header(blob, count):
    """Split ``count`` whitespace-separated ASCII tokens off the front of ``blob``."""
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if blob[pos:pos + 1] == b"#":
            while pos < len(blob) and blob[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("header ends early", pos)
        tokens.append(blob[start:pos].decode("ascii"))
    # exactly one whitespace byte separates the header from the raster
    return tokens, pos + 1


def load_pfm(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    (magic, w, h, scale), pos = _read_header(blob, 4)
    if magic != "Pf":
        raise FormatError(f"expected grayscale PFM magic 'Pf', got {magic!r}", 0)
    w, h, scale = int(w), int(h), float(scale)
    dtype = "<f4" if scale < 0 else ">f4"
    need = 4 * w * h
    if len(blob) - pos < need:
        raise FormatError("raster truncated", len(blob))
    x = np.frombuffer(blob, dtype=dtype, count=w * h, offset=pos).reshape(h, w)
    return x[::-1].astype(np.float64)


def save_pgm(path, x):
    """8-bit binary PGM; values are clipped to [0, 1] and scaled to 0..255."""
    x = _as_image(x)
    q = np.round(np.clip(x, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w = q.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(q.tobytes())


def load_pgm(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    (magic, w, h, maxval), pos = _read_header(blob, 4)
    if magic != "P5":
        raise FormatError(f"expected binary PGM magic 'P5', got {magic!r}", 0)
    w, h, maxval = int(w), int(h), int(maxval)
    if not 0 < maxval < 256:
        raise FormatError(f"only 8-bit PGM is supported (maxval {maxval})", 0)
    if len(blob) - pos < w * h:
        raise FormatError("raster truncated", len(blob))
    q = np.frombuffer(blob, dtype=np.uint8, count=w * h, offset=pos).reshape(h, w)
    return q.astype(np.float64) / maxval


def save_image(path, x):
    path = str(path)
    if path.endswith(".pfm"):
        save_pfm(path, x)
    elif path.endswith(".pgm"):
        save_pgm(path, x)
    else:
        raise FormatError(f"unknown image extension for {path!r}", 0)


def load_image(path):
    path = str(path)
    if path.endswith(".pfm"):
        return load_pfm(path)
    if path.endswith(".pgm"):
        return load_pgm(path)
    raise FormatError(f"unknown image extension for {path!r}", 0)
