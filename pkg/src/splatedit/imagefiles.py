"""PNG and PFM file I/O.

Color images travel as 8-bit PNG, float maps (depth, alpha, masks,
disparity) as 32-bit little-endian PFM. In memory everything is float64
numpy, color in [0, 1], shape (H, W, 3) for color and (H, W) for scalar maps.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .errors import FormatError, InputError


def save_png(image, path) -> None:
    """Write a float image in [0,1] (HxW or HxWx3) as an 8-bit PNG."""
    arr = np.asarray(image, dtype=np.float64)
    data = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    mode = "L" if data.ndim == 2 else "RGB"
    Image.fromarray(data, mode=mode).save(Path(path))


def load_png(path) -> np.ndarray:
    """Read a PNG into float64 in [0,1]; RGB images come back as (H,W,3)."""
    try:
        img = Image.open(Path(path))
    except OSError as e:
        raise InputError(f"cannot read PNG {path}: {e}") from e
    if img.mode == "1":
        return np.asarray(img, dtype=np.float64)
    if img.mode not in ("L", "RGB"):
        img = img.convert("RGB")
    return np.asarray(img, dtype=np.float64) / 255.0


def save_mask_png(mask, path) -> None:
    """Write a binary mask as a 1-bit PNG."""
    arr = np.asarray(mask).astype(bool)
    Image.fromarray(arr).convert("1").save(Path(path))


def load_mask_png(path) -> np.ndarray:
    img = Image.open(Path(path)).convert("1")
    return np.asarray(img, dtype=bool)


def save_pfm(image, path) -> None:
    """Write a float map as little-endian PFM ('Pf' grayscale or 'PF' color)."""
    arr = np.asarray(image, dtype=np.float32)
    if arr.ndim == 2:
        header = b"Pf\n"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        header = b"PF\n"
    else:
        raise InputError("PFM supports HxW or HxWx3 arrays")
    h, w = arr.shape[:2]
    with open(Path(path), "wb") as f:
        f.write(header)
        f.write(f"{w} {h}\n".encode("ascii"))
        f.write(b"-1.0\n")  # negative scale marks little-endian
        # PFM stores rows bottom-to-top.
        f.write(np.ascontiguousarray(arr[::-1]).astype("<f4").tobytes())


def load_pfm(path) -> np.ndarray:
    path = Path(path)
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic not in (b"Pf", b"PF"):
            raise FormatError(f"{path}: not a PFM file")
        dims = f.readline().split()
        if len(dims) != 2:
            raise FormatError(f"{path}: bad PFM dimensions line")
        w, h = int(dims[0]), int(dims[1])
        scale = float(f.readline().strip())
        channels = 3 if magic == b"PF" else 1
        count = w * h * channels
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.fromfile(f, dtype=dtype, count=count)
    if data.size != count:
        raise FormatError(f"{path}: truncated PFM payload")
    shape = (h, w, 3) if channels == 3 else (h, w)
    return data.reshape(shape)[::-1].astype(np.float64)


def psnr(a, b, mask=None, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``mask`` restricts the comparison."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    diff = a - b
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if diff.ndim == 3 and mask.ndim == 2:
            mask = np.repeat(mask[:, :, np.newaxis], diff.shape[2], axis=2)
        diff = diff[mask]
    mse = float(np.mean(diff**2)) if diff.size else 0.0
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(peak**2 / mse)
