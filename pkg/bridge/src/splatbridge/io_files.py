"""Lossless file exchange: 8-bit PNG for color, little-endian PFM for float
maps, .npy for latent-shaped tensors."""

from pathlib import Path

import numpy as np
from PIL import Image


def load_png(path) -> np.ndarray:
    img = Image.open(Path(path))
    if img.mode not in ("L", "RGB"):
        img = img.convert("RGB")
    arr = np.asarray(img, dtype=np.float64) / 255.0
    if arr.ndim == 2:
        arr = np.repeat(arr[:, :, None], 3, axis=2)
    return arr


def save_png(image, path) -> None:
    data = np.clip(np.round(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(data, mode="RGB").save(Path(path))


def save_pfm(array, path) -> None:
    arr = np.asarray(array, dtype=np.float32)
    header = b"Pf\n" if arr.ndim == 2 else b"PF\n"
    h, w = arr.shape[:2]
    with open(Path(path), "wb") as f:
        f.write(header)
        f.write(f"{w} {h}\n".encode("ascii"))
        f.write(b"-1.0\n")
        f.write(np.ascontiguousarray(arr[::-1]).astype("<f4").tobytes())


def load_pfm(path) -> np.ndarray:
    with open(Path(path), "rb") as f:
        magic = f.readline().strip()
        w, h = (int(x) for x in f.readline().split())
        scale = float(f.readline())
        channels = 3 if magic == b"PF" else 1
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.fromfile(f, dtype=dtype, count=w * h * channels)
    shape = (h, w, 3) if channels == 3 else (h, w)
    return data.reshape(shape)[::-1].astype(np.float64)
