"""PNG (8-bit) and PFM (32-bit float) image files, plus the scene directory layout.

PFM files are written little-endian (negative scale) with rows stored bottom-up.
When reading, the sign of the scale field selects the byte order.
"""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ParseError


def write_pfm(path, data) -> None:
    data = np.asarray(data, dtype=np.float32)
    if data.ndim == 2:
        kind = b"Pf"
    elif data.ndim == 3 and data.shape[2] == 3:
        kind = b"PF"
    else:
        raise ValueError(f"PFM holds HxW or HxWx3 arrays, got {data.shape}")
    H, W = data.shape[:2]
    header = kind + b"\n" + f"{W} {H}\n".encode() + b"-1.0\n"
    body = np.ascontiguousarray(data[::-1], dtype="<f4").tobytes()
    Path(path).write_bytes(header + body)


def read_pfm(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    pos = 0

    def token():
        nonlocal pos
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ParseError("unexpected end of PFM header", offset=start)
        return blob[start:pos], start

    kind, off = token()
    if kind not in (b"PF", b"Pf"):
        raise ParseError(f"bad PFM identifier {kind!r}", offset=off)
    dims = []
    for _ in range(2):
        tok, off = token()
        if not re.fullmatch(rb"\d+", tok):
            raise ParseError(f"bad PFM dimension {tok!r}", offset=off)
        dims.append(int(tok))
    W, H = dims
    tok, off = token()
    try:
        scale = float(tok)
    except ValueError:
        raise ParseError(f"bad PFM scale {tok!r}", offset=off) from None
    if scale == 0:
        raise ParseError("PFM scale must be non-zero", offset=off)
    pos += 1  # the single whitespace byte ending the header
    channels = 3 if kind == b"PF" else 1
    dtype = np.dtype("<f4") if scale < 0 else np.dtype(">f4")
    count = W * H * channels
    if len(blob) - pos < count * 4:
        raise ParseError(f"PFM body truncated: need {count * 4} bytes", offset=pos)
    data = np.frombuffer(blob, dtype=dtype, count=count, offset=pos).astype(np.float32)
    shape = (H, W, 3) if channels == 3 else (H, W)
    return data.reshape(shape)[::-1].copy()


def write_png(path, image) -> None:
    """Write a ``C x H x W`` image in [0, 1] as 8-bit PNG (values are clamped)."""
    image = np.asarray(image)
    if image.ndim == 3:
        image = image[0] if image.shape[0] == 1 else np.moveaxis(image, 0, -1)
    q = np.clip(np.rint(np.clip(image, 0.0, 1.0) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(q).save(path)


def read_png(path) -> np.ndarray:
    """Read a PNG as ``C x H x W`` float32 in [0, 1]."""
    with Image.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB")
        arr = np.asarray(im, dtype=np.float32) / 255.0
    return arr[None] if arr.ndim == 2 else np.moveaxis(arr, -1, 0).copy()


def image_io(path, mode: str, image=None):
    """Dispatch on ``mode`` ('read'/'write') and on the file extension (.png/.pfm)."""
    suffix = Path(path).suffix.lower()
    if suffix not in (".png", ".pfm"):
        raise ValueError(f"unsupported image format {suffix!r}")
    if mode == "read":
        return read_png(path) if suffix == ".png" else read_pfm(path)
    if mode == "write":
        return write_png(path, image) if suffix == ".png" else write_pfm(path, image)
    raise ValueError(f"mode must be 'read' or 'write', got {mode!r}")


def flow_to_pfm(flow: np.ndarray) -> np.ndarray:
    """``2 x H x W`` flow -> ``H x W x 3`` with a zero third channel."""
    return np.concatenate([np.moveaxis(flow, 0, -1), np.zeros(flow.shape[1:] + (1,))], axis=-1)


def pfm_to_flow(data: np.ndarray) -> np.ndarray:
    if data.ndim != 3:
        raise ParseError("flow PFM must have 3 channels")
    return np.moveaxis(data[..., :2], -1, 0).copy()
