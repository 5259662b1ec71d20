"""Frame encoders: 8-bit RGB PNG, palette label PNGs, 16-bit panoptic PNG, PFM depth,
and raw little-endian rasters for the wire protocol."""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np
from PIL import Image

from .segmentation import VOID

PANOPTIC_DIVISOR = 1000
PANOPTIC_VOID_PNG = 0xFFFF
PANOPTIC_VOID_WIRE = 0xFFFFFFFF
PALETTE_VOID = 255


def pack_panoptic(cls, inst, void=PANOPTIC_VOID_WIRE, dtype=np.uint32) -> np.ndarray:
    """id = class * 1000 + instance; void pixels take the ``void`` value."""
    cls = np.asarray(cls, dtype=np.int64)
    inst = np.asarray(inst, dtype=np.int64)
    if np.any(inst >= PANOPTIC_DIVISOR) or np.any(inst < 0):
        raise ValueError("instance ids must lie in [0, 1000)")
    ids = cls * PANOPTIC_DIVISOR + inst
    ids = np.where(cls == VOID, void, ids)
    if ids.max(initial=0) > np.iinfo(dtype).max:
        raise ValueError(f"panoptic ids overflow {np.dtype(dtype).name}")
    return ids.astype(dtype)


def unpack_panoptic(ids, void=PANOPTIC_VOID_WIRE) -> tuple[np.ndarray, np.ndarray]:
    ids = np.asarray(ids, dtype=np.int64)
    is_void = ids == void
    cls = np.where(is_void, VOID, ids // PANOPTIC_DIVISOR).astype(np.int32)
    inst = np.where(is_void, 0, ids % PANOPTIC_DIVISOR).astype(np.int32)
    return cls, inst


def to_rgb8(rgb) -> np.ndarray:
    return np.clip(np.rint(np.asarray(rgb) * 255.0), 0, 255).astype(np.uint8)


def _palette(n: int = 256) -> list[int]:
    # deterministic distinct-ish colors; index 0 stays black, the void index is white
    rng = np.random.default_rng(12345)
    pal = rng.integers(40, 256, size=(n, 3), dtype=np.int64)
    pal[0] = 0
    pal[PALETTE_VOID] = 255
    return pal.ravel().tolist()


def encode_rgb_png(rgb) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(to_rgb8(rgb), mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def decode_png(data: bytes) -> np.ndarray:
    with Image.open(io.BytesIO(data)) as im:
        return np.array(im)


def save_rgb(path, rgb) -> None:
    Path(path).write_bytes(encode_rgb_png(rgb))


def save_label_png(path, labels, void_value: int = VOID) -> None:
    """Palette PNG of small non-negative ids; ``void_value`` pixels map to index 255."""
    labels = np.asarray(labels, dtype=np.int64)
    out = np.where(labels == void_value, PALETTE_VOID, labels)
    if out.min(initial=0) < 0 or np.any((out >= PALETTE_VOID) & (labels != void_value)):
        raise ValueError("label ids must lie in [0, 255)")
    im = Image.fromarray(out.astype(np.uint8), mode="P")
    im.putpalette(_palette())
    im.save(path, format="PNG")


def load_label_png(path, void_value: int = VOID) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.array(im).astype(np.int32)
    return np.where(arr == PALETTE_VOID, void_value, arr)


def save_panoptic_png(path, cls, inst) -> None:
    ids = pack_panoptic(cls, inst, void=PANOPTIC_VOID_PNG, dtype=np.uint16)
    Image.fromarray(ids).save(path, format="PNG")


def load_panoptic_png(path) -> tuple[np.ndarray, np.ndarray]:
    with Image.open(path) as im:
        ids = np.array(im)
    return unpack_panoptic(ids, void=PANOPTIC_VOID_PNG)


def write_pfm(path, image) -> None:
    """Single-channel little-endian PFM (rows stored bottom-up)."""
    img = np.asarray(image, dtype="<f4")
    if img.ndim != 2:
        raise ValueError("PFM writer expects a 2-D array")
    h, w = img.shape
    with open(path, "wb") as f:
        f.write(f"Pf\n{w} {h}\n-1.0\n".encode("ascii"))
        f.write(np.ascontiguousarray(img[::-1]).tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        kind = f.readline().strip()
        if kind not in (b"Pf", b"PF"):
            raise ValueError(f"not a PFM file: {path}")
        w, h = map(int, f.readline().split())
        scale = float(f.readline())
        ch = 1 if kind == b"Pf" else 3
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(f.read(), dtype=dtype, count=w * h * ch)
    shape = (h, w) if ch == 1 else (h, w, 3)
    return data.reshape(shape)[::-1].astype(np.float32)


def depth_bytes(depth) -> bytes:
    return np.ascontiguousarray(depth, dtype="<f4").tobytes()


def panoptic_bytes(cls, inst) -> bytes:
    return pack_panoptic(cls, inst).astype("<u4").tobytes()
